#pragma once

// Blocking TCP plumbing and the connection handshake.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bpfstore/protocol.hpp"

namespace bpfstore::net {

class NetError : public std::runtime_error {
 public:
  NetError(const std::string& what, bool closed = false) : std::runtime_error(what), closed_(closed) {}
  // True when the peer closed the stream cleanly.
  bool closed() const { return closed_; }

 private:
  bool closed_;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send_all(std::span<const uint8_t> bytes) = 0;
  // Fills out completely or throws NetError.
  virtual void recv_exact(std::span<uint8_t> out) = 0;
};

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

class TcpTransport final : public Transport {
 public:
  explicit TcpTransport(Fd fd) : fd_(std::move(fd)) {
    int one = 1;
    ::setsockopt(fd_.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }

  void send_all(std::span<const uint8_t> bytes) override {
    std::size_t done = 0;
    while (done < bytes.size()) {
      ssize_t n = ::send(fd_.get(), bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n < 0) throw NetError(std::string("send: ") + std::strerror(errno), errno == EPIPE);
      done += static_cast<std::size_t>(n);
    }
  }

  void recv_exact(std::span<uint8_t> out) override {
    std::size_t done = 0;
    while (done < out.size()) {
      ssize_t n = ::recv(fd_.get(), out.data() + done, out.size() - done, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n < 0) throw NetError(std::string("recv: ") + std::strerror(errno), errno == ECONNRESET);
      if (n == 0) throw NetError("connection closed after " + std::to_string(done) + " bytes", true);
      done += static_cast<std::size_t>(n);
    }
  }

  void shutdown_read() { ::shutdown(fd_.get(), SHUT_RD); }
  void shutdown_both() { ::shutdown(fd_.get(), SHUT_RDWR); }
  int fd() const { return fd_.get(); }

 private:
  Fd fd_;
};

struct Endpoint {
  std::string host;
  uint16_t port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }
};

inline Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon + 1 == text.size()) {
    throw std::invalid_argument("endpoint must be host:port, got '" + text + "'");
  }
  Endpoint ep;
  ep.host = text.substr(0, colon);
  if (ep.host.size() >= 2 && ep.host.front() == '[' && ep.host.back() == ']') {
    ep.host = ep.host.substr(1, ep.host.size() - 2);
  }
  if (ep.host.empty()) ep.host = "0.0.0.0";
  std::size_t used = 0;
  unsigned long port = 0;
  try {
    port = std::stoul(text.substr(colon + 1), &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() - colon - 1 || port > 65535) {
    throw std::invalid_argument("bad port in '" + text + "'");
  }
  ep.port = static_cast<uint16_t>(port);
  return ep;
}

namespace detail {

struct AddrInfo {
  addrinfo* list = nullptr;
  ~AddrInfo() {
    if (list) ::freeaddrinfo(list);
  }
};

inline void resolve(const Endpoint& ep, bool passive, AddrInfo& out) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  const std::string port = std::to_string(ep.port);
  int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &out.list);
  if (rc != 0) throw NetError("resolve " + ep.str() + ": " + ::gai_strerror(rc));
}

}  // namespace detail

inline std::unique_ptr<TcpTransport> connect_tcp(const Endpoint& ep) {
  detail::AddrInfo ai;
  detail::resolve(ep, false, ai);
  int last_err = 0;
  for (addrinfo* a = ai.list; a; a = a->ai_next) {
    Fd fd(::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol));
    if (!fd) {
      last_err = errno;
      continue;
    }
    if (::connect(fd.get(), a->ai_addr, a->ai_addrlen) == 0) return std::make_unique<TcpTransport>(std::move(fd));
    last_err = errno;
  }
  throw NetError("connect " + ep.str() + ": " + std::strerror(last_err));
}

class TcpListener {
 public:
  explicit TcpListener(const Endpoint& ep) {
    detail::AddrInfo ai;
    detail::resolve(ep, true, ai);
    int last_err = 0;
    for (addrinfo* a = ai.list; a; a = a->ai_next) {
      Fd fd(::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol));
      if (!fd) {
        last_err = errno;
        continue;
      }
      int one = 1;
      ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      if (::bind(fd.get(), a->ai_addr, a->ai_addrlen) == 0 && ::listen(fd.get(), 64) == 0) {
        fd_ = std::move(fd);
        break;
      }
      last_err = errno;
    }
    if (!fd_) throw NetError("listen " + ep.str() + ": " + std::strerror(last_err));
    sockaddr_storage ss{};
    socklen_t len = sizeof ss;
    ::getsockname(fd_.get(), reinterpret_cast<sockaddr*>(&ss), &len);
    port_ = ss.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port)
                                     : ntohs(reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
  }

  int fd() const { return fd_.get(); }
  uint16_t port() const { return port_; }

  // Blocks until a connection arrives.
  Fd accept() {
    while (true) {
      int c = ::accept4(fd_.get(), nullptr, nullptr, SOCK_CLOEXEC);
      if (c >= 0) return Fd(c);
      if (errno == EINTR || errno == ECONNABORTED) continue;
      throw NetError(std::string("accept: ") + std::strerror(errno));
    }
  }

 private:
  Fd fd_;
  uint16_t port_ = 0;
};

inline void handshake_server(Transport& t, uint64_t export_size) {
  t.send_all(proto::encode_handshake(export_size));
}

inline uint64_t handshake_client(Transport& t) {
  std::vector<uint8_t> buf(proto::kHandshakeSize);
  try {
    t.recv_exact(buf);
  } catch (const NetError& e) {
    throw proto::ProtocolError(proto::ProtocolErrc::Truncated, e.what());
  }
  return proto::decode_handshake(buf);
}

}  // namespace bpfstore::net
