#pragma once

// Client session: block I/O, appcode registration and invocation.

#include <cstdint>
#include <cstring>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bpfstore/bytecode.hpp"
#include "bpfstore/net.hpp"
#include "bpfstore/protocol.hpp"

namespace bpfstore {

// A non-zero reply.error for a block or registration request.
class ServerError : public std::runtime_error {
 public:
  ServerError(uint32_t code, std::string message)
      : std::runtime_error("server error " + std::to_string(code) + ": " + message),
        code_(code),
        message_(std::move(message)) {}

  uint32_t code() const { return code_; }
  const std::string& message() const { return message_; }

 private:
  uint32_t code_;
  std::string message_;
};

struct CallResult {
  uint32_t status = 0;
  std::vector<uint8_t> payload;
};

inline constexpr std::size_t kMaxClientProgramBytes = 512 * 1024;

// Strict request/reply. Not safe for concurrent use.
class Session {
 public:
  explicit Session(std::unique_ptr<net::Transport> transport) : t_(std::move(transport)) {
    export_size_ = net::handshake_client(*t_);
  }

  static Session connect(const std::string& endpoint) {
    return Session(net::connect_tcp(net::parse_endpoint(endpoint)));
  }

  uint64_t export_size() const { return export_size_; }
  uint64_t round_trips() const { return round_trips_; }

  std::vector<uint8_t> read(uint64_t from, uint32_t len) {
    proto::Reply rep = transact(proto::kRead, from, len, {});
    if (rep.error != proto::kOk) throw ServerError(rep.error, std::strerror(static_cast<int>(rep.error)));
    return std::move(rep.payload);
  }

  void write(uint64_t from, std::span<const uint8_t> bytes) {
    proto::Reply rep = transact(proto::kWrite, from, static_cast<uint32_t>(bytes.size()), bytes);
    if (rep.error != proto::kOk) throw ServerError(rep.error, std::strerror(static_cast<int>(rep.error)));
  }

  // Returns the wire type that invokes the program. Verification failures
  // carry the server's diagnostic as the message.
  uint32_t register_appcode(std::span<const uint8_t> program_bytes) {
    if (program_bytes.size() > kMaxClientProgramBytes) {
      throw std::invalid_argument("program of " + std::to_string(program_bytes.size()) + " bytes exceeds 512 KiB");
    }
    proto::Reply rep =
        transact(proto::kAcRegister, 0, static_cast<uint32_t>(program_bytes.size()), program_bytes);
    if (rep.error != proto::kOk) {
      std::string text(rep.payload.begin(), rep.payload.end());
      if (text.empty()) text = std::strerror(static_cast<int>(rep.error));
      throw ServerError(rep.error, std::move(text));
    }
    if (rep.payload.size() != 4) throw proto::ProtocolError(proto::ProtocolErrc::PayloadMismatch, "register reply");
    return proto::be::get32(rep.payload, 0);
  }

  uint32_t register_appcode(const Program& p) {
    const auto bytes = encode_program(p);
    return register_appcode(std::span<const uint8_t>(bytes));
  }

  // status is the reply error field: the appcode's r0, or 1 for an empty slot.
  CallResult call(uint32_t type, uint64_t from, std::span<const uint8_t> payload) {
    if (!proto::is_appcode_type(type)) throw std::invalid_argument("not an appcode type: " + std::to_string(type));
    proto::Reply rep = transact(type, from, static_cast<uint32_t>(payload.size()), payload);
    return {rep.error, std::move(rep.payload)};
  }

 private:
  proto::Reply transact(uint32_t type, uint64_t from, uint32_t len, std::span<const uint8_t> payload) {
    proto::Request req;
    req.type = type;
    req.handle = proto::make_handle(next_handle_++);
    req.from = from;
    req.len = len;
    req.payload.assign(payload.begin(), payload.end());
    const auto frame = proto::encode_request(req);
    t_->send_all(frame);
    ++round_trips_;

    const proto::ExpectedReply expect = proto::expected_reply_for(type, len);
    std::vector<uint8_t> buf(proto::kReplyHeaderSize);
    t_->recv_exact(buf);
    const proto::ReplyHeader h = proto::decode_reply_header(buf);
    if (h.handle != req.handle) {
      throw proto::ProtocolError(proto::ProtocolErrc::PayloadMismatch,
                                 "reply handle " + std::to_string(proto::handle_value(h.handle)) + " for request " +
                                     std::to_string(proto::handle_value(req.handle)));
    }
    proto::Reply rep{h.error, h.handle, expect.kind, {}};
    std::size_t n = 0;
    if (expect.kind == proto::ReplyKind::Read) {
      n = proto::read_payload_size(h, expect.read_len);
    } else if (expect.kind == proto::ReplyKind::Extended) {
      uint8_t len_buf[proto::kExtendedLenSize];
      t_->recv_exact(len_buf);
      n = proto::decode_extended_len(len_buf);
    }
    rep.payload.resize(n);
    if (n > 0) t_->recv_exact(rep.payload);
    return rep;
  }

  std::unique_ptr<net::Transport> t_;
  uint64_t export_size_ = 0;
  uint64_t next_handle_ = 1;
  uint64_t round_trips_ = 0;
};

}  // namespace bpfstore
