#pragma once

// NBD-style wire codec. All multi-byte integers are big-endian.

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bpfstore::proto {

inline constexpr uint32_t kRequestMagic = 0x25609513;
inline constexpr uint32_t kReplyMagic = 0x67446698;

inline constexpr uint32_t kRead = 0;
inline constexpr uint32_t kWrite = 1;
inline constexpr uint32_t kAcRegister = 0x8000;
inline constexpr uint32_t kAcBase = 0x8001;
inline constexpr uint32_t kAcMax = 0x8101;

inline constexpr std::size_t kRequestHeaderSize = 28;
inline constexpr std::size_t kReplyHeaderSize = 16;
inline constexpr std::size_t kExtendedLenSize = 4;
inline constexpr uint32_t kMaxPayload = 1u << 20;

inline constexpr std::size_t kHandshakeSize = 152;
inline constexpr std::string_view kHandshakeMagic = "NBDMAGIC";
inline constexpr uint64_t kHandshakeCliserv = 0x00420281861253ull;

// errno values carried in Reply::error.
inline constexpr uint32_t kOk = 0;
inline constexpr uint32_t kEPerm = 1;
inline constexpr uint32_t kENoEnt = 2;
inline constexpr uint32_t kEIo = 5;
inline constexpr uint32_t kENoMem = 12;
inline constexpr uint32_t kEInval = 22;
inline constexpr uint32_t kENoSpc = 28;

enum class ProtocolErrc {
  BadMagic,
  UnknownType,
  ShortFrame,
  PayloadMismatch,
  PayloadOverflow,
  BadHandshakeMagic,
  Truncated,
};

inline std::string_view to_string(ProtocolErrc e) {
  switch (e) {
    case ProtocolErrc::BadMagic: return "bad magic";
    case ProtocolErrc::UnknownType: return "unknown request type";
    case ProtocolErrc::ShortFrame: return "short frame";
    case ProtocolErrc::PayloadMismatch: return "payload length mismatch";
    case ProtocolErrc::PayloadOverflow: return "payload too large";
    case ProtocolErrc::BadHandshakeMagic: return "bad handshake magic";
    case ProtocolErrc::Truncated: return "truncated";
  }
  return "?";
}

class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(ProtocolErrc code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}
  ProtocolErrc code() const { return code_; }

 private:
  ProtocolErrc code_;
};

using Handle = std::array<uint8_t, 8>;

inline Handle make_handle(uint64_t v) {
  Handle h{};
  for (int i = 0; i < 8; ++i) h[static_cast<std::size_t>(i)] = static_cast<uint8_t>(v >> (56 - 8 * i));
  return h;
}

inline uint64_t handle_value(const Handle& h) {
  uint64_t v = 0;
  for (uint8_t b : h) v = (v << 8) | b;
  return v;
}

inline bool is_appcode_type(uint32_t type) { return type >= kAcBase && type < kAcMax; }

inline bool is_known_type(uint32_t type) {
  return type == kRead || type == kWrite || type == kAcRegister || is_appcode_type(type);
}

// READ carries no payload; every other known type carries len bytes.
inline bool request_has_payload(uint32_t type) { return type != kRead; }

namespace be {

inline void put32(std::vector<uint8_t>& out, uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<uint8_t>(v >> s));
}

inline void put64(std::vector<uint8_t>& out, uint64_t v) {
  for (int s = 56; s >= 0; s -= 8) out.push_back(static_cast<uint8_t>(v >> s));
}

inline uint32_t get32(std::span<const uint8_t> in, std::size_t at) {
  uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | in[at + i];
  return v;
}

inline uint64_t get64(std::span<const uint8_t> in, std::size_t at) {
  uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v = (v << 8) | in[at + i];
  return v;
}

}  // namespace be

struct RequestHeader {
  uint32_t type = kRead;
  Handle handle{};
  uint64_t from = 0;
  uint32_t len = 0;

  bool operator==(const RequestHeader&) const = default;
};

struct Request {
  uint32_t type = kRead;
  Handle handle{};
  uint64_t from = 0;
  uint32_t len = 0;
  std::vector<uint8_t> payload;

  RequestHeader header() const { return {type, handle, from, len}; }
  bool operator==(const Request&) const = default;
};

inline std::vector<uint8_t> encode_request(const Request& r) {
  if (!is_known_type(r.type)) throw ProtocolError(ProtocolErrc::UnknownType, std::to_string(r.type));
  const bool has_payload = request_has_payload(r.type);
  if (has_payload && r.payload.size() != r.len) {
    throw ProtocolError(ProtocolErrc::PayloadMismatch,
                        "len " + std::to_string(r.len) + " vs payload " + std::to_string(r.payload.size()));
  }
  if (!has_payload && !r.payload.empty()) throw ProtocolError(ProtocolErrc::PayloadMismatch, "READ with payload");
  if (has_payload && r.len > kMaxPayload) throw ProtocolError(ProtocolErrc::PayloadOverflow, std::to_string(r.len));
  std::vector<uint8_t> out;
  out.reserve(kRequestHeaderSize + r.payload.size());
  be::put32(out, kRequestMagic);
  be::put32(out, r.type);
  out.insert(out.end(), r.handle.begin(), r.handle.end());
  be::put64(out, r.from);
  be::put32(out, r.len);
  out.insert(out.end(), r.payload.begin(), r.payload.end());
  return out;
}

// Parses the fixed 28-byte header. Used by stream readers before they know
// how many payload bytes follow.
inline RequestHeader decode_request_header(std::span<const uint8_t> in) {
  if (in.size() < kRequestHeaderSize) {
    throw ProtocolError(ProtocolErrc::ShortFrame, std::to_string(in.size()) + " bytes");
  }
  const uint32_t magic = be::get32(in, 0);
  if (magic != kRequestMagic) throw ProtocolError(ProtocolErrc::BadMagic, "request magic " + std::to_string(magic));
  RequestHeader h;
  h.type = be::get32(in, 4);
  std::memcpy(h.handle.data(), in.data() + 8, 8);
  h.from = be::get64(in, 16);
  h.len = be::get32(in, 24);
  if (!is_known_type(h.type)) throw ProtocolError(ProtocolErrc::UnknownType, std::to_string(h.type));
  if (request_has_payload(h.type) && h.len > kMaxPayload) {
    throw ProtocolError(ProtocolErrc::PayloadOverflow, std::to_string(h.len));
  }
  return h;
}

inline Request decode_request(std::span<const uint8_t> in) {
  const RequestHeader h = decode_request_header(in);
  const std::size_t expect = kRequestHeaderSize + (request_has_payload(h.type) ? h.len : 0);
  if (in.size() != expect) {
    throw ProtocolError(ProtocolErrc::PayloadMismatch,
                        "frame of " + std::to_string(in.size()) + " bytes, expected " + std::to_string(expect));
  }
  Request r{h.type, h.handle, h.from, h.len, {}};
  r.payload.assign(in.begin() + kRequestHeaderSize, in.end());
  return r;
}

// Read: len payload bytes follow the header when error == 0.
// Simple: header only.
// Extended: 4-byte payload length, then the payload.
enum class ReplyKind { Read, Simple, Extended };

struct Reply {
  uint32_t error = kOk;
  Handle handle{};
  ReplyKind kind = ReplyKind::Simple;
  std::vector<uint8_t> payload;

  bool operator==(const Reply&) const = default;
};

struct ExpectedReply {
  ReplyKind kind = ReplyKind::Simple;
  uint32_t read_len = 0;
};

inline std::vector<uint8_t> encode_reply(const Reply& r) {
  if (r.payload.size() > kMaxPayload) throw ProtocolError(ProtocolErrc::PayloadOverflow, std::to_string(r.payload.size()));
  if (r.kind == ReplyKind::Simple && !r.payload.empty()) {
    throw ProtocolError(ProtocolErrc::PayloadMismatch, "simple reply with payload");
  }
  if (r.kind == ReplyKind::Read && r.error != kOk && !r.payload.empty()) {
    throw ProtocolError(ProtocolErrc::PayloadMismatch, "failed READ reply with payload");
  }
  std::vector<uint8_t> out;
  out.reserve(kReplyHeaderSize + kExtendedLenSize + r.payload.size());
  be::put32(out, kReplyMagic);
  be::put32(out, r.error);
  out.insert(out.end(), r.handle.begin(), r.handle.end());
  if (r.kind == ReplyKind::Extended) be::put32(out, static_cast<uint32_t>(r.payload.size()));
  out.insert(out.end(), r.payload.begin(), r.payload.end());
  return out;
}

struct ReplyHeader {
  uint32_t error = kOk;
  Handle handle{};
};

inline ReplyHeader decode_reply_header(std::span<const uint8_t> in) {
  if (in.size() < kReplyHeaderSize) throw ProtocolError(ProtocolErrc::ShortFrame, std::to_string(in.size()) + " bytes");
  const uint32_t magic = be::get32(in, 0);
  if (magic != kReplyMagic) throw ProtocolError(ProtocolErrc::BadMagic, "reply magic " + std::to_string(magic));
  ReplyHeader h;
  h.error = be::get32(in, 4);
  std::memcpy(h.handle.data(), in.data() + 8, 8);
  return h;
}

// Bytes of payload following the header of a Read-kind reply.
inline std::size_t read_payload_size(const ReplyHeader& h, uint32_t read_len) {
  return h.error == kOk ? read_len : 0;
}

inline uint32_t decode_extended_len(std::span<const uint8_t> in) {
  if (in.size() < kExtendedLenSize) throw ProtocolError(ProtocolErrc::ShortFrame, "missing payload length");
  const uint32_t n = be::get32(in, 0);
  if (n > kMaxPayload) throw ProtocolError(ProtocolErrc::PayloadOverflow, std::to_string(n));
  return n;
}

inline Reply decode_reply(std::span<const uint8_t> in, ExpectedReply expected) {
  const ReplyHeader h = decode_reply_header(in);
  Reply r{h.error, h.handle, expected.kind, {}};
  std::size_t start = kReplyHeaderSize;
  std::size_t n = 0;
  switch (expected.kind) {
    case ReplyKind::Simple:
      break;
    case ReplyKind::Read:
      n = read_payload_size(h, expected.read_len);
      break;
    case ReplyKind::Extended:
      n = decode_extended_len(in.subspan(kReplyHeaderSize));
      start += kExtendedLenSize;
      break;
  }
  if (in.size() < start + n) throw ProtocolError(ProtocolErrc::ShortFrame, "reply payload cut short");
  if (in.size() > start + n) throw ProtocolError(ProtocolErrc::PayloadMismatch, "trailing bytes after reply");
  r.payload.assign(in.begin() + static_cast<std::ptrdiff_t>(start), in.end());
  return r;
}

// Reply shape the server uses for a request of this type.
inline ExpectedReply expected_reply_for(uint32_t type, uint32_t len) {
  if (type == kRead) return {ReplyKind::Read, len};
  if (type == kWrite) return {ReplyKind::Simple, 0};
  if (type == kAcRegister || is_appcode_type(type)) return {ReplyKind::Extended, 0};
  return {ReplyKind::Simple, 0};
}

// Oldstyle negotiation: magic, cliserv constant, export size, flags, padding.
inline std::vector<uint8_t> encode_handshake(uint64_t export_size) {
  std::vector<uint8_t> out(kHandshakeMagic.begin(), kHandshakeMagic.end());
  out.reserve(kHandshakeSize);
  be::put64(out, kHandshakeCliserv);
  be::put64(out, export_size);
  be::put32(out, 0);
  out.resize(kHandshakeSize, 0);
  return out;
}

inline uint64_t decode_handshake(std::span<const uint8_t> in) {
  if (in.size() < kHandshakeSize) throw ProtocolError(ProtocolErrc::Truncated, std::to_string(in.size()) + " bytes");
  if (std::memcmp(in.data(), kHandshakeMagic.data(), kHandshakeMagic.size()) != 0 ||
      be::get64(in, 8) != kHandshakeCliserv) {
    throw ProtocolError(ProtocolErrc::BadHandshakeMagic, "not an oldstyle NBD greeting");
  }
  return be::get64(in, 16);
}

}  // namespace bpfstore::proto
