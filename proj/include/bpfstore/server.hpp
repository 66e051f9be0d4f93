#pragma once

// Storage service: request dispatch, the shared appcode table and the TCP
// front end.

#include <fcntl.h>
#include <poll.h>
#include <unistd.h>

#include <array>
#include <atomic>
#include <chrono>
#include <cstring>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

#include "bpfstore/abi.hpp"
#include "bpfstore/bytecode.hpp"
#include "bpfstore/device.hpp"
#include "bpfstore/net.hpp"
#include "bpfstore/protocol.hpp"
#include "bpfstore/verifier.hpp"
#include "bpfstore/vm.hpp"

namespace bpfstore {

class TableFull : public std::runtime_error {
 public:
  TableFull() : std::runtime_error("appcode table full") {}
};

// 256 slots shared by every connection. Slot i answers wire type AC_BASE + i.
// Registered programs stay until the server exits.
class AppcodeTable {
 public:
  static constexpr std::size_t kSlots = proto::kAcMax - proto::kAcBase;

  explicit AppcodeTable(VerifyLimits limits = {},
                        std::span<const HelperSignature> helpers = kStandardHelpers)
      : limits_(limits), helpers_(helpers.begin(), helpers.end()) {}

  // Decodes and verifies outside the lock; throws DecodeError, VerifyError
  // or TableFull.
  std::size_t register_appcode(std::span<const uint8_t> bytes) {
    Program p = decode_program(bytes);
    auto vp = std::make_shared<const VerifiedProgram>(verify(p, limits_, helpers_));
    std::unique_lock lock(mu_);
    if (next_free_ == kSlots) throw TableFull();
    slots_[next_free_] = std::move(vp);
    return next_free_++;
  }

  std::shared_ptr<const VerifiedProgram> lookup(std::size_t slot) const {
    std::shared_lock lock(mu_);
    return slot < kSlots ? slots_[slot] : nullptr;
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return next_free_;
  }

 private:
  VerifyLimits limits_;
  std::vector<HelperSignature> helpers_;
  mutable std::shared_mutex mu_;
  std::array<std::shared_ptr<const VerifiedProgram>, kSlots> slots_{};
  std::size_t next_free_ = 0;
};

// Transport-independent request handling.
class Service {
 public:
  Service(Device& device, VerifyLimits limits = {}, const HelperTable& helpers = HelperTable::standard())
      : device_(device), helpers_(helpers), table_(limits, helpers.signatures()) {}

  Device& device() { return device_; }
  AppcodeTable& table() { return table_; }

  proto::Reply handle(const proto::Request& req) {
    proto::Reply rep;
    rep.handle = req.handle;
    rep.kind = proto::expected_reply_for(req.type, req.len).kind;
    if (req.type == proto::kRead) {
      handle_read(req, rep);
    } else if (req.type == proto::kWrite) {
      handle_write(req, rep);
    } else if (req.type == proto::kAcRegister) {
      handle_register(req, rep);
    } else if (proto::is_appcode_type(req.type)) {
      handle_appcode(req, rep);
    } else {
      rep.kind = proto::ReplyKind::Simple;
      rep.error = proto::kEInval;
    }
    return rep;
  }

 private:
  void handle_read(const proto::Request& req, proto::Reply& rep) {
    if (req.len > proto::kMaxPayload || !device_.in_range(req.from, req.len)) {
      rep.error = proto::kEInval;
      return;
    }
    rep.payload.resize(req.len);
    try {
      device_.read(req.from, rep.payload);
    } catch (const std::exception& e) {
      spdlog::warn("read [{}, +{}): {}", req.from, req.len, e.what());
      rep.payload.clear();
      rep.error = proto::kEIo;
    }
  }

  void handle_write(const proto::Request& req, proto::Reply& rep) {
    if (!device_.in_range(req.from, req.payload.size())) {
      rep.error = proto::kEInval;
      return;
    }
    try {
      device_.write(req.from, req.payload);
    } catch (const std::exception& e) {
      spdlog::warn("write [{}, +{}): {}", req.from, req.payload.size(), e.what());
      rep.error = proto::kEIo;
    }
  }

  void handle_register(const proto::Request& req, proto::Reply& rep) {
    auto fail = [&rep](uint32_t code, const std::string& text) {
      rep.error = code;
      rep.payload.assign(text.begin(), text.end());
    };
    try {
      const std::size_t slot = table_.register_appcode(req.payload);
      const uint32_t type = proto::kAcBase + static_cast<uint32_t>(slot);
      rep.payload.clear();
      proto::be::put32(rep.payload, type);
      spdlog::info("registered appcode slot {} (type {:#x}, {} insns)", slot, type, req.payload.size() / kSlotSize);
    } catch (const VerifyError& e) {
      spdlog::info("rejected appcode: {}", explain(e));
      fail(proto::kEInval, explain(e));
    } catch (const DecodeError& e) {
      spdlog::info("rejected appcode: {}", e.what());
      fail(proto::kEInval, e.what());
    } catch (const TableFull& e) {
      fail(proto::kENoSpc, e.what());
    }
  }

  void handle_appcode(const proto::Request& req, proto::Reply& rep) {
    auto prog = table_.lookup(req.type - proto::kAcBase);
    if (!prog) {
      rep.error = proto::kEPerm;
      return;
    }
    AppContext ctx;
    ctx.req_type = req.type;
    ctx.from = req.from;
    ctx.data = req.payload;
    ctx.device = &device_;
    try {
      rep.error = run(*prog, ctx, helpers_).status();
      auto out = ctx.reply_bytes();
      rep.payload.assign(out.begin(), out.end());
    } catch (const VmFault& e) {
      spdlog::error("appcode {:#x}: {}", req.type, e.what());
      rep.error = proto::kEIo;
      rep.payload.clear();
    }
  }

  Device& device_;
  const HelperTable& helpers_;
  AppcodeTable table_;
};

struct ServerConfig {
  std::string listen = "0.0.0.0:10809";
  std::string device;
  uint64_t size = 0;
  VerifyLimits limits;
  // One-way delay added on receive and again on send.
  std::chrono::microseconds net_delay{0};
  std::chrono::microseconds storage_read_delay{0};
  std::chrono::microseconds storage_write_delay{0};
  std::string log_level = "info";
};

// Thread-per-connection TCP server over a Service.
class Server {
 public:
  Server(Device& device, ServerConfig cfg) : cfg_(std::move(cfg)) {
    Device* dev = &device;
    if (cfg_.storage_read_delay.count() > 0 || cfg_.storage_write_delay.count() > 0) {
      delayed_ = std::make_unique<DelayedDevice>(device, cfg_.storage_read_delay, cfg_.storage_write_delay);
      dev = delayed_.get();
    }
    service_ = std::make_unique<Service>(*dev, cfg_.limits);
  }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  ~Server() { stop(); }

  void start() {
    listener_.emplace(net::parse_endpoint(cfg_.listen));
    int p[2];
    if (::pipe2(p, O_CLOEXEC) != 0) throw net::NetError("pipe failed");
    wake_rd_ = net::Fd(p[0]);
    wake_wr_ = net::Fd(p[1]);
    spdlog::info("listening on port {} (export {} bytes)", listener_->port(), service_->device().size());
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  uint16_t port() const { return listener_ ? listener_->port() : port_; }
  Service& service() { return *service_; }

  // Stops accepting, lets in-flight requests finish, then joins.
  void stop() {
    if (!accept_thread_.joinable()) return;
    stopping_ = true;
    char c = 1;
    [[maybe_unused]] auto n = ::write(wake_wr_.get(), &c, 1);
    accept_thread_.join();
    const uint16_t port = listener_->port();
    listener_.reset();
    port_ = port;
    std::list<std::unique_ptr<Conn>> conns;
    {
      std::lock_guard lock(conns_mu_);
      conns.swap(conns_);
    }
    for (auto& c2 : conns) c2->transport->shutdown_read();
    for (auto& c2 : conns) c2->thread.join();
    spdlog::info("server stopped");
  }

 private:
  struct Conn {
    std::shared_ptr<net::TcpTransport> transport;
    std::thread thread;
    std::atomic<bool> done{false};
  };

  void accept_loop() {
    while (!stopping_) {
      pollfd fds[2] = {{listener_->fd(), POLLIN, 0}, {wake_rd_.get(), POLLIN, 0}};
      int rc = ::poll(fds, 2, -1);
      if (rc < 0) {
        if (errno == EINTR) continue;
        spdlog::error("poll: {}", std::strerror(errno));
        break;
      }
      if (fds[1].revents || stopping_) break;
      if (!(fds[0].revents & POLLIN)) continue;
      net::Fd fd;
      try {
        fd = listener_->accept();
      } catch (const net::NetError& e) {
        spdlog::warn("{}", e.what());
        continue;
      }
      reap();
      auto conn = std::make_unique<Conn>();
      conn->transport = std::make_shared<net::TcpTransport>(std::move(fd));
      Conn* raw = conn.get();
      {
        std::lock_guard lock(conns_mu_);
        conns_.push_back(std::move(conn));
      }
      raw->thread = std::thread([this, raw] {
        serve_connection(*raw->transport);
        raw->done = true;
      });
    }
  }

  void reap() {
    std::lock_guard lock(conns_mu_);
    for (auto it = conns_.begin(); it != conns_.end();) {
      if ((*it)->done && (*it)->thread.joinable()) {
        (*it)->thread.join();
        it = conns_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void delay() const {
    if (cfg_.net_delay.count() > 0) precise_sleep(cfg_.net_delay);
  }

  void serve_connection(net::TcpTransport& t) {
    try {
      net::handshake_server(t, service_->device().size());
      std::array<uint8_t, proto::kRequestHeaderSize> hdr{};
      while (true) {
        t.recv_exact(hdr);
        proto::Request req;
        try {
          const auto h = proto::decode_request_header(hdr);
          req = {h.type, h.handle, h.from, h.len, {}};
        } catch (const proto::ProtocolError& e) {
          spdlog::warn("closing connection: {}", e.what());
          if (e.code() == proto::ProtocolErrc::UnknownType) {
            proto::Reply rep;
            std::copy(hdr.begin() + 8, hdr.begin() + 16, rep.handle.begin());
            rep.error = proto::kEInval;
            t.send_all(proto::encode_reply(rep));
          }
          break;
        }
        if (proto::request_has_payload(req.type)) {
          req.payload.resize(req.len);
          t.recv_exact(req.payload);
        }
        delay();
        const proto::Reply rep = service_->handle(req);
        const auto bytes = proto::encode_reply(rep);
        delay();
        t.send_all(bytes);
      }
    } catch (const net::NetError& e) {
      if (!e.closed() && !stopping_) spdlog::debug("connection: {}", e.what());
    } catch (const std::exception& e) {
      spdlog::error("connection aborted: {}", e.what());
    }
    t.shutdown_both();
  }

  ServerConfig cfg_;
  std::unique_ptr<DelayedDevice> delayed_;
  std::unique_ptr<Service> service_;
  std::optional<net::TcpListener> listener_;
  uint16_t port_ = 0;
  net::Fd wake_rd_, wake_wr_;
  std::thread accept_thread_;
  std::atomic<bool> stopping_{false};
  std::mutex conns_mu_;
  std::list<std::unique_ptr<Conn>> conns_;
};

}  // namespace bpfstore
