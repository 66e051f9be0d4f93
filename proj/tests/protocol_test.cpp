#include <gtest/gtest.h>

#include <random>
#include <string>
#include <vector>

#include "bpfstore/protocol.hpp"

using namespace bpfstore::proto;

namespace {

std::vector<uint8_t> hex(const std::string& s) {
  std::vector<uint8_t> out;
  std::string digits;
  for (char c : s) {
    if (std::isxdigit(static_cast<unsigned char>(c))) digits += c;
  }
  for (std::size_t i = 0; i + 1 < digits.size(); i += 2) out.push_back(static_cast<uint8_t>(std::stoi(digits.substr(i, 2), nullptr, 16)));
  return out;
}

template <class F>
ProtocolErrc error_of(F&& f) {
  try {
    f();
  } catch (const ProtocolError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no ProtocolError";
  return ProtocolErrc::Truncated;
}

std::vector<uint8_t> random_bytes(std::mt19937_64& rng, std::size_t n) {
  std::vector<uint8_t> v(n);
  for (auto& b : v) b = static_cast<uint8_t>(rng());
  return v;
}

uint32_t random_type(std::mt19937_64& rng) {
  switch (rng() % 4) {
    case 0: return kRead;
    case 1: return kWrite;
    case 2: return kAcRegister;
    default: return kAcBase + static_cast<uint32_t>(rng() % 256);
  }
}

}  // namespace

TEST(Request, ReadGoldenBytes) {
  Request r{kRead, make_handle(1), 0, 512, {}};
  const auto want = hex("25 60 95 13  00 00 00 00  00 00 00 00 00 00 00 01  00 00 00 00 00 00 00 00  00 00 02 00");
  EXPECT_EQ(encode_request(r), want);
  EXPECT_EQ(decode_request(want), r);
}

TEST(Request, WriteGoldenBytes) {
  Request r{kWrite, make_handle(0x0102030405060708ull), 0x1000, 4, {0xDE, 0xAD, 0xBE, 0xEF}};
  const auto want = hex(
      "25 60 95 13  00 00 00 01  01 02 03 04 05 06 07 08  00 00 00 00 00 00 10 00  00 00 00 04  DE AD BE EF");
  EXPECT_EQ(encode_request(r), want);
  EXPECT_EQ(decode_request(want), r);
}

TEST(Request, HandleIsOpaque) {
  Request r{kAcBase, {0xff, 0, 0x7f, 1, 2, 3, 4, 0x80}, 0, 0, {}};
  const auto bytes = encode_request(r);
  EXPECT_TRUE(std::equal(r.handle.begin(), r.handle.end(), bytes.begin() + 8));
}

TEST(Request, Errors) {
  const auto good = encode_request({kRead, make_handle(1), 0, 512, {}});
  EXPECT_EQ(error_of([&] { decode_request(std::span(good).first(27)); }), ProtocolErrc::ShortFrame);
  auto bad_magic = good;
  bad_magic[0] ^= 1;
  EXPECT_EQ(error_of([&] { decode_request(bad_magic); }), ProtocolErrc::BadMagic);
  auto bad_type = good;
  bad_type[7] = 7;
  EXPECT_EQ(error_of([&] { decode_request(bad_type); }), ProtocolErrc::UnknownType);
  bad_type = good;
  bad_type[6] = 0x81;
  bad_type[7] = 0x01;  // AC_MAX itself is outside the range
  EXPECT_EQ(error_of([&] { decode_request(bad_type); }), ProtocolErrc::UnknownType);
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(error_of([&] { decode_request(trailing); }), ProtocolErrc::PayloadMismatch);

  auto write = encode_request({kWrite, make_handle(2), 0, 4, {1, 2, 3, 4}});
  write.pop_back();
  EXPECT_EQ(error_of([&] { decode_request(write); }), ProtocolErrc::PayloadMismatch);

  EXPECT_EQ(error_of([&] { encode_request({kWrite, {}, 0, 5, {1, 2}}); }), ProtocolErrc::PayloadMismatch);
  EXPECT_EQ(error_of([&] { encode_request({kRead, {}, 0, 5, {1}}); }), ProtocolErrc::PayloadMismatch);
  EXPECT_EQ(error_of([&] { encode_request({2, {}, 0, 0, {}}); }), ProtocolErrc::UnknownType);
  EXPECT_EQ(error_of([&] { encode_request({kWrite, {}, 0, kMaxPayload + 1, std::vector<uint8_t>(kMaxPayload + 1)}); }),
            ProtocolErrc::PayloadOverflow);

  std::vector<uint8_t> huge = hex("25 60 95 13  00 00 00 01  00 00 00 00 00 00 00 01  00 00 00 00 00 00 00 00  00 20 00 00");
  EXPECT_EQ(error_of([&] { decode_request_header(huge); }), ProtocolErrc::PayloadOverflow);
}

TEST(Request, TypePredicates) {
  EXPECT_TRUE(is_known_type(kRead));
  EXPECT_TRUE(is_known_type(kWrite));
  EXPECT_TRUE(is_known_type(kAcRegister));
  EXPECT_TRUE(is_known_type(kAcBase));
  EXPECT_TRUE(is_known_type(kAcMax - 1));
  EXPECT_FALSE(is_known_type(kAcMax));
  EXPECT_FALSE(is_known_type(2));
  EXPECT_FALSE(is_appcode_type(kAcRegister));
  EXPECT_EQ(kAcMax - kAcBase, 256u);
}

TEST(Reply, SimpleGoldenBytes) {
  Reply r{kOk, make_handle(0xabcdef), ReplyKind::Simple, {}};
  const auto want = hex("67 44 66 98  00 00 00 00  00 00 00 00 00 ab cd ef");
  EXPECT_EQ(encode_reply(r), want);
  EXPECT_EQ(decode_reply(want, {ReplyKind::Simple, 0}), r);
}

TEST(Reply, ExtendedLayout) {
  Reply r{kEInval, make_handle(9), ReplyKind::Extended, {1, 2, 3, 4, 5, 6, 7, 8}};
  const auto bytes = encode_reply(r);
  ASSERT_EQ(bytes.size(), 16u + 4u + 8u);
  EXPECT_EQ(std::vector<uint8_t>(bytes.begin() + 4, bytes.begin() + 8), hex("00 00 00 16"));
  EXPECT_EQ(std::vector<uint8_t>(bytes.begin() + 16, bytes.begin() + 20), hex("00 00 00 08"));
  EXPECT_EQ(decode_reply(bytes, {ReplyKind::Extended, 0}), r);
}

TEST(Reply, ReadCarriesPayloadOnlyOnSuccess) {
  Reply ok{kOk, make_handle(3), ReplyKind::Read, {9, 9, 9}};
  EXPECT_EQ(encode_reply(ok).size(), 19u);
  EXPECT_EQ(decode_reply(encode_reply(ok), {ReplyKind::Read, 3}), ok);
  Reply failed{kEIo, make_handle(3), ReplyKind::Read, {}};
  EXPECT_EQ(encode_reply(failed).size(), 16u);
  EXPECT_EQ(decode_reply(encode_reply(failed), {ReplyKind::Read, 3}), failed);
}

TEST(Reply, Errors) {
  auto extended = hex("67 44 66 98  00 00 00 00  00 00 00 00 00 00 00 01  00 20 00 00");
  EXPECT_EQ(error_of([&] { decode_reply(extended, {ReplyKind::Extended, 0}); }), ProtocolErrc::PayloadOverflow);
  EXPECT_EQ(error_of([&] { encode_reply({kOk, {}, ReplyKind::Extended, std::vector<uint8_t>(2u << 20)}); }),
            ProtocolErrc::PayloadOverflow);
  const auto simple = encode_reply({kOk, {}, ReplyKind::Simple, {}});
  EXPECT_EQ(error_of([&] { decode_reply(std::span(simple).first(15), {ReplyKind::Simple, 0}); }),
            ProtocolErrc::ShortFrame);
  auto bad = simple;
  bad[3] = 0;
  EXPECT_EQ(error_of([&] { decode_reply(bad, {ReplyKind::Simple, 0}); }), ProtocolErrc::BadMagic);
  EXPECT_EQ(error_of([&] { decode_reply(simple, {ReplyKind::Read, 4}); }), ProtocolErrc::ShortFrame);
  EXPECT_EQ(error_of([&] { decode_reply(simple, {ReplyKind::Extended, 0}); }), ProtocolErrc::ShortFrame);
  EXPECT_EQ(error_of([&] { encode_reply({kOk, {}, ReplyKind::Simple, {1}}); }), ProtocolErrc::PayloadMismatch);
}

TEST(Reply, ExpectedKinds) {
  EXPECT_EQ(expected_reply_for(kRead, 77).kind, ReplyKind::Read);
  EXPECT_EQ(expected_reply_for(kRead, 77).read_len, 77u);
  EXPECT_EQ(expected_reply_for(kWrite, 77).kind, ReplyKind::Simple);
  EXPECT_EQ(expected_reply_for(kAcRegister, 7).kind, ReplyKind::Extended);
  EXPECT_EQ(expected_reply_for(kAcBase + 3, 7).kind, ReplyKind::Extended);
}

TEST(Handshake, Layout) {
  const auto h = encode_handshake(1ull << 30);
  ASSERT_EQ(h.size(), 152u);
  EXPECT_EQ(std::string(h.begin(), h.begin() + 8), "NBDMAGIC");
  EXPECT_EQ(std::vector<uint8_t>(h.begin() + 8, h.begin() + 16), hex("00 00 42 02 81 86 12 53"));
  EXPECT_EQ(std::vector<uint8_t>(h.begin() + 16, h.begin() + 24), hex("00 00 00 00 40 00 00 00"));
  EXPECT_TRUE(std::all_of(h.begin() + 24, h.end(), [](uint8_t b) { return b == 0; }));
  EXPECT_EQ(decode_handshake(h), 1ull << 30);
}

TEST(Handshake, Errors) {
  auto h = encode_handshake(4096);
  EXPECT_EQ(error_of([&] { decode_handshake(std::span(h).first(151)); }), ProtocolErrc::Truncated);
  auto bad = h;
  bad[3] = 'X';
  EXPECT_EQ(error_of([&] { decode_handshake(bad); }), ProtocolErrc::BadHandshakeMagic);
  bad = h;
  bad[15] ^= 1;
  EXPECT_EQ(error_of([&] { decode_handshake(bad); }), ProtocolErrc::BadHandshakeMagic);
}

TEST(Handshake, RoundTrip) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    const uint64_t size = rng();
    ASSERT_EQ(decode_handshake(encode_handshake(size)), size);
  }
}

TEST(Properties, RequestRoundTrip) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 20000; ++i) {
    Request r;
    r.type = random_type(rng);
    r.handle = make_handle(rng());
    r.from = rng();
    r.len = static_cast<uint32_t>(rng() % 300);
    if (request_has_payload(r.type)) r.payload = random_bytes(rng, r.len);
    const auto bytes = encode_request(r);
    ASSERT_EQ(bytes.size(), kRequestHeaderSize + r.payload.size());
    ASSERT_EQ(decode_request(bytes), r);
    ASSERT_EQ(decode_request_header(bytes), r.header());
  }
}

TEST(Properties, ReplyRoundTrip) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 20000; ++i) {
    Reply r;
    r.error = rng() % 3 == 0 ? static_cast<uint32_t>(rng()) : kOk;
    r.handle = make_handle(rng());
    r.kind = static_cast<ReplyKind>(rng() % 3);
    const std::size_t n = rng() % 300;
    if (r.kind == ReplyKind::Extended || (r.kind == ReplyKind::Read && r.error == kOk)) r.payload = random_bytes(rng, n);
    const ExpectedReply ex{r.kind, static_cast<uint32_t>(r.kind == ReplyKind::Read ? n : 0)};
    ASSERT_EQ(decode_reply(encode_reply(r), ex), r);
  }
}

TEST(Properties, DecodersAreTotalOverNoise) {
  std::mt19937_64 rng(8);
  const auto valid_req = encode_request({kWrite, make_handle(1), 0, 8, std::vector<uint8_t>(8, 1)});
  const auto valid_rep = encode_reply({kOk, make_handle(1), ReplyKind::Extended, std::vector<uint8_t>(8, 1)});
  uint64_t structured = 0;
  for (int i = 0; i < 1000000; ++i) {
    std::vector<uint8_t> frame;
    switch (i % 4) {
      case 0: frame = random_bytes(rng, rng() % 64); break;
      case 1:  // mutated valid request
        frame = valid_req;
        frame[rng() % frame.size()] = static_cast<uint8_t>(rng());
        frame.resize(rng() % (frame.size() + 4));
        break;
      case 2:
        frame = valid_rep;
        frame[rng() % frame.size()] = static_cast<uint8_t>(rng());
        frame.resize(rng() % (frame.size() + 4));
        break;
      default: frame = random_bytes(rng, 140 + rng() % 20); break;
    }
    try {
      switch (i % 6) {
        case 0: case 1: decode_request(frame); break;
        case 2: decode_reply(frame, {ReplyKind::Simple, 0}); break;
        case 3: decode_reply(frame, {ReplyKind::Read, static_cast<uint32_t>(rng() % 16)}); break;
        case 4: decode_reply(frame, {ReplyKind::Extended, 0}); break;
        default: decode_handshake(frame); break;
      }
    } catch (const ProtocolError&) {
      ++structured;
    }
  }
  EXPECT_GT(structured, 0u);
}
