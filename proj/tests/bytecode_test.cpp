#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "bpfstore/assembler.hpp"
#include "bpfstore/bytecode.hpp"
#include "support/random_program.hpp"

using namespace bpfstore;

namespace {

std::vector<uint8_t> bytes(std::initializer_list<int> v) {
  std::vector<uint8_t> out;
  for (int b : v) out.push_back(static_cast<uint8_t>(b));
  return out;
}

DecodeErrc decode_error(const std::vector<uint8_t>& b) {
  try {
    decode_program(b);
  } catch (const DecodeError& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode succeeded";
  return DecodeErrc::NotMultipleOf8;
}

}  // namespace

TEST(Decode, ExitSlot) {
  Program p = decode_program(bytes({0x95, 0, 0, 0, 0, 0, 0, 0}));
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].opcode, 0x95);
  EXPECT_EQ(p[0], (Instruction{0x95, 0, 0, 0, 0}));
}

TEST(Decode, WideLoadCombinesHalves) {
  Program p = decode_program(bytes({0x18, 0x01, 0, 0, 0xff, 0xff, 0xff, 0xff, 0, 0, 0, 0, 0x01, 0, 0, 0}));
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0].dst, 1);
  EXPECT_EQ(p.wide_imm(0), 0x1ffffffffull);
  EXPECT_EQ(disassemble(p), "lddw r1, 0x1ffffffff");
}

TEST(Decode, RegisterNibbles) {
  // stxdw [r10-8], r1: dst in the low nibble, src in the high one
  Program p = decode_program(bytes({0x7b, 0x1a, 0xf8, 0xff, 0, 0, 0, 0, 0xb7, 0, 0, 0, 0, 0, 0, 0, 0x95, 0, 0, 0, 0, 0, 0, 0}));
  EXPECT_EQ(p[0].dst, 10);
  EXPECT_EQ(p[0].src, 1);
  EXPECT_EQ(p[0].offset, -8);
}

TEST(Decode, Errors) {
  EXPECT_EQ(decode_error(bytes({0xff, 0, 0, 0, 0, 0, 0, 0})), DecodeErrc::UnknownOpcode);
  EXPECT_EQ(decode_error({}), DecodeErrc::NotMultipleOf8);
  EXPECT_EQ(decode_error(bytes({0x95, 0, 0, 0, 0, 0, 0})), DecodeErrc::NotMultipleOf8);
  EXPECT_EQ(decode_error(bytes({0xb7, 0x0b, 0, 0, 0, 0, 0, 0})), DecodeErrc::BadRegister);
  EXPECT_EQ(decode_error(bytes({0x18, 0x01, 0, 0, 0, 0, 0, 0})), DecodeErrc::TruncatedWideLoad);
  EXPECT_EQ(decode_error(bytes({0x18, 0x01, 0, 0, 0, 0, 0, 0, 0x95, 0, 0, 0, 0, 0, 0, 0})),
            DecodeErrc::TruncatedWideLoad);
  EXPECT_EQ(decode_error(bytes({0x95, 0x10, 0, 0, 0, 0, 0, 0})), DecodeErrc::ReservedField);
  EXPECT_EQ(decode_error(std::vector<uint8_t>((kMaxProgramSlots + 1) * kSlotSize, 0x95)), DecodeErrc::TooLong);
}

TEST(Encode, KnownBytes) {
  Program p = assemble("mov64 r0, 7\nexit");
  EXPECT_EQ(encode_program(p), bytes({0xb7, 0, 0, 0, 0x07, 0, 0, 0, 0x95, 0, 0, 0, 0, 0, 0, 0}));
  EXPECT_EQ(encode_program(assemble("exit")), bytes({0x95, 0, 0, 0, 0, 0, 0, 0}));
}

TEST(Encode, RoundTripRandomPrograms) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10000; ++i) {
    Program p = assemble(gen::random_source(rng));
    const auto b = encode_program(p);
    ASSERT_EQ(decode_program(b), p);
    ASSERT_EQ(encode_program(decode_program(b)), b);
  }
}

TEST(Decode, NeverCrashesOnNoise) {
  std::mt19937_64 rng(11);
  const uint8_t common[] = {0x07, 0x0f, 0x18, 0x61, 0x63, 0x7b, 0x85, 0x95, 0xb7, 0xbf, 0x15, 0x05, 0};
  int accepted = 0;
  for (int i = 0; i < 100000; ++i) {
    std::vector<uint8_t> b(rng() % 48);
    for (auto& x : b) x = static_cast<uint8_t>(rng());
    for (std::size_t s = 0; s + 8 <= b.size(); s += 8) {
      if (rng() % 2) b[s] = common[rng() % sizeof common];
      if (rng() % 2) b[s + 1] &= 0x77;
    }
    try {
      Program p = decode_program(b);
      ++accepted;
      EXPECT_EQ(encode_program(p), b);
    } catch (const DecodeError&) {
    }
  }
  EXPECT_GT(accepted, 0);
}

TEST(Semantics, DivisionByZeroIsZero) {
  EXPECT_EQ(alu64(op::kDiv, 5, 0), 0u);
  EXPECT_EQ(alu64(op::kMod, 5, 0), 0u);
  EXPECT_EQ(alu64(op::kMod, 7, 3), 1u);
}

TEST(Semantics, ShiftsMaskToSixBits) {
  EXPECT_EQ(alu64(op::kLsh, 1, 65), 2u);
  EXPECT_EQ(alu64(op::kRsh, 4, 64 + 2), 1u);
  EXPECT_EQ(alu64(op::kArsh, 0x8000000000000000ull, 63), ~0ull);
}

TEST(Semantics, SignedJumps) {
  EXPECT_TRUE(jump_taken(op::kJsgt, 1, ~0ull));
  EXPECT_FALSE(jump_taken(op::kJgt, 1, ~0ull));
  EXPECT_TRUE(jump_taken(op::kJslt, 0x8000000000000000ull, 0));
}
