#pragma once

// Appcode instruction set: a 64-bit register subset of eBPF.
//
// Each slot is 8 bytes: opcode, register pair (dst low nibble, src high
// nibble), 16-bit signed offset, 32-bit signed immediate, little-endian.
// LDDW spans two slots; the second slot carries the upper 32 bits of the
// constant in its imm field and is otherwise zero.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bpfstore {

inline constexpr std::size_t kSlotSize = 8;
inline constexpr std::size_t kMaxProgramSlots = 65536;
inline constexpr std::size_t kMaxProgramBytes = kMaxProgramSlots * kSlotSize;
inline constexpr uint8_t kNumRegisters = 11;
inline constexpr uint8_t kFrameRegister = 10;

namespace op {

// classes
inline constexpr uint8_t kClassLd = 0x00;
inline constexpr uint8_t kClassLdx = 0x01;
inline constexpr uint8_t kClassSt = 0x02;
inline constexpr uint8_t kClassStx = 0x03;
inline constexpr uint8_t kClassJmp = 0x05;
inline constexpr uint8_t kClassAlu64 = 0x07;

// source selector
inline constexpr uint8_t kSrcImm = 0x00;
inline constexpr uint8_t kSrcReg = 0x08;

// ALU operations
inline constexpr uint8_t kAdd = 0x00;
inline constexpr uint8_t kSub = 0x10;
inline constexpr uint8_t kMul = 0x20;
inline constexpr uint8_t kDiv = 0x30;
inline constexpr uint8_t kOr = 0x40;
inline constexpr uint8_t kAnd = 0x50;
inline constexpr uint8_t kLsh = 0x60;
inline constexpr uint8_t kRsh = 0x70;
inline constexpr uint8_t kNeg = 0x80;
inline constexpr uint8_t kMod = 0x90;
inline constexpr uint8_t kXor = 0xa0;
inline constexpr uint8_t kMov = 0xb0;
inline constexpr uint8_t kArsh = 0xc0;

// jump operations
inline constexpr uint8_t kJa = 0x00;
inline constexpr uint8_t kJeq = 0x10;
inline constexpr uint8_t kJgt = 0x20;
inline constexpr uint8_t kJge = 0x30;
inline constexpr uint8_t kJne = 0x50;
inline constexpr uint8_t kJsgt = 0x60;
inline constexpr uint8_t kJsge = 0x70;
inline constexpr uint8_t kCall = 0x80;
inline constexpr uint8_t kExit = 0x90;
inline constexpr uint8_t kJlt = 0xa0;
inline constexpr uint8_t kJle = 0xb0;
inline constexpr uint8_t kJslt = 0xc0;
inline constexpr uint8_t kJsle = 0xd0;

// memory sizes
inline constexpr uint8_t kSizeW = 0x00;
inline constexpr uint8_t kSizeH = 0x08;
inline constexpr uint8_t kSizeB = 0x10;
inline constexpr uint8_t kSizeDW = 0x18;
inline constexpr uint8_t kModeImm = 0x00;
inline constexpr uint8_t kModeMem = 0x60;

constexpr uint8_t alu(uint8_t code, uint8_t src) { return code | src | kClassAlu64; }
constexpr uint8_t jmp(uint8_t code, uint8_t src) { return code | src | kClassJmp; }
constexpr uint8_t ldx(uint8_t size) { return kModeMem | size | kClassLdx; }
constexpr uint8_t st(uint8_t size) { return kModeMem | size | kClassSt; }
constexpr uint8_t stx(uint8_t size) { return kModeMem | size | kClassStx; }

inline constexpr uint8_t kLddw = kModeImm | kSizeDW | kClassLd;  // 0x18
inline constexpr uint8_t kCallInsn = kCall | kClassJmp;          // 0x85
inline constexpr uint8_t kExitInsn = kExit | kClassJmp;          // 0x95
inline constexpr uint8_t kJaInsn = kJa | kClassJmp;              // 0x05

constexpr uint8_t insn_class(uint8_t opcode) { return opcode & 0x07; }
constexpr uint8_t alu_code(uint8_t opcode) { return opcode & 0xf0; }
constexpr uint8_t src_kind(uint8_t opcode) { return opcode & 0x08; }
constexpr uint8_t size_bits(uint8_t opcode) { return opcode & 0x18; }

constexpr std::size_t access_size(uint8_t opcode) {
  switch (size_bits(opcode)) {
    case kSizeB: return 1;
    case kSizeH: return 2;
    case kSizeW: return 4;
    default: return 8;
  }
}

}  // namespace op

// Which operand fields an opcode uses. Fields outside the form must be zero.
enum class Form : uint8_t {
  AluImm,
  AluReg,
  Neg,
  Ja,
  JmpImm,
  JmpReg,
  Call,
  Exit,
  Ldx,
  St,
  Stx,
  Lddw,
};

struct OpInfo {
  Form form;
  std::string_view mnemonic;
};

namespace detail {

struct OpTable {
  std::array<std::optional<OpInfo>, 256> entries{};

  constexpr OpTable() {
    constexpr std::pair<uint8_t, std::string_view> alu_ops[] = {
        {op::kAdd, "add64"}, {op::kSub, "sub64"}, {op::kMul, "mul64"},
        {op::kDiv, "div64"}, {op::kOr, "or64"},   {op::kAnd, "and64"},
        {op::kLsh, "lsh64"}, {op::kRsh, "rsh64"}, {op::kMod, "mod64"},
        {op::kXor, "xor64"}, {op::kMov, "mov64"}, {op::kArsh, "arsh64"},
    };
    for (auto [code, name] : alu_ops) {
      entries[op::alu(code, op::kSrcImm)] = OpInfo{Form::AluImm, name};
      entries[op::alu(code, op::kSrcReg)] = OpInfo{Form::AluReg, name};
    }
    entries[op::alu(op::kNeg, op::kSrcImm)] = OpInfo{Form::Neg, "neg64"};

    constexpr std::pair<uint8_t, std::string_view> jmp_ops[] = {
        {op::kJeq, "jeq"},   {op::kJne, "jne"},   {op::kJgt, "jgt"},
        {op::kJge, "jge"},   {op::kJlt, "jlt"},   {op::kJle, "jle"},
        {op::kJsgt, "jsgt"}, {op::kJsge, "jsge"}, {op::kJslt, "jslt"},
        {op::kJsle, "jsle"},
    };
    for (auto [code, name] : jmp_ops) {
      entries[op::jmp(code, op::kSrcImm)] = OpInfo{Form::JmpImm, name};
      entries[op::jmp(code, op::kSrcReg)] = OpInfo{Form::JmpReg, name};
    }
    entries[op::kJaInsn] = OpInfo{Form::Ja, "ja"};
    entries[op::kCallInsn] = OpInfo{Form::Call, "call"};
    entries[op::kExitInsn] = OpInfo{Form::Exit, "exit"};

    constexpr std::pair<uint8_t, std::string_view> sizes[] = {
        {op::kSizeB, "b"}, {op::kSizeH, "h"}, {op::kSizeW, "w"}, {op::kSizeDW, "dw"}};
    // Mnemonics are spelled out to keep the table constexpr.
    constexpr std::string_view ldx_names[] = {"ldxb", "ldxh", "ldxw", "ldxdw"};
    constexpr std::string_view st_names[] = {"stb", "sth", "stw", "stdw"};
    constexpr std::string_view stx_names[] = {"stxb", "stxh", "stxw", "stxdw"};
    for (std::size_t i = 0; i < 4; ++i) {
      uint8_t size = sizes[i].first;
      entries[op::ldx(size)] = OpInfo{Form::Ldx, ldx_names[i]};
      entries[op::st(size)] = OpInfo{Form::St, st_names[i]};
      entries[op::stx(size)] = OpInfo{Form::Stx, stx_names[i]};
    }
    entries[op::kLddw] = OpInfo{Form::Lddw, "lddw"};
  }
};

inline constexpr OpTable kOpTable{};

}  // namespace detail

constexpr std::optional<OpInfo> lookup_opcode(uint8_t opcode) {
  return detail::kOpTable.entries[opcode];
}

constexpr bool is_conditional_jump(Form f) { return f == Form::JmpImm || f == Form::JmpReg; }
constexpr bool is_jump(Form f) { return f == Form::Ja || is_conditional_jump(f); }

struct Instruction {
  uint8_t opcode = 0;
  uint8_t dst = 0;
  uint8_t src = 0;
  int16_t offset = 0;
  int32_t imm = 0;

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

// A decoded program. Indices are slot indices: jump offsets and pcs count
// slots, so a LDDW occupies two entries.
struct Program {
  std::vector<Instruction> slots;

  std::size_t size() const { return slots.size(); }
  const Instruction& operator[](std::size_t pc) const { return slots[pc]; }

  // 64-bit constant of the LDDW at pc.
  uint64_t wide_imm(std::size_t pc) const {
    return static_cast<uint32_t>(slots[pc].imm) |
           (static_cast<uint64_t>(static_cast<uint32_t>(slots[pc + 1].imm)) << 32);
  }

  friend bool operator==(const Program&, const Program&) = default;
};

enum class DecodeErrc {
  NotMultipleOf8,
  TooLong,
  UnknownOpcode,
  BadRegister,
  TruncatedWideLoad,
  ReservedField,
};

inline std::string_view to_string(DecodeErrc e) {
  switch (e) {
    case DecodeErrc::NotMultipleOf8: return "NotMultipleOf8";
    case DecodeErrc::TooLong: return "TooLong";
    case DecodeErrc::UnknownOpcode: return "UnknownOpcode";
    case DecodeErrc::BadRegister: return "BadRegister";
    case DecodeErrc::TruncatedWideLoad: return "TruncatedWideLoad";
    case DecodeErrc::ReservedField: return "ReservedField";
  }
  return "?";
}

class DecodeError : public std::runtime_error {
 public:
  DecodeError(DecodeErrc code, std::size_t slot, const std::string& what)
      : std::runtime_error(what), code_(code), slot_(slot) {}

  DecodeErrc code() const { return code_; }
  std::size_t slot() const { return slot_; }

 private:
  DecodeErrc code_;
  std::size_t slot_;
};

namespace detail {

[[noreturn]] inline void decode_fail(DecodeErrc code, std::size_t slot, std::string_view why) {
  throw DecodeError(code, slot,
                    std::string(to_string(code)) + " at slot " + std::to_string(slot) + ": " +
                        std::string(why));
}

inline void check_fields(const Instruction& in, std::size_t slot, bool uses_dst, bool uses_src,
                         bool uses_off, bool uses_imm) {
  if (in.dst >= kNumRegisters || in.src >= kNumRegisters) {
    decode_fail(DecodeErrc::BadRegister, slot, "register index above r10");
  }
  if ((!uses_dst && in.dst != 0) || (!uses_src && in.src != 0)) {
    decode_fail(DecodeErrc::ReservedField, slot, "unused register field is nonzero");
  }
  if ((!uses_off && in.offset != 0) || (!uses_imm && in.imm != 0)) {
    decode_fail(DecodeErrc::ReservedField, slot, "unused offset/immediate field is nonzero");
  }
}

}  // namespace detail

// Checks the per-slot encoding rules decode_program enforces. Throws DecodeError.
inline void validate_program(const Program& p) {
  if (p.size() == 0) {
    detail::decode_fail(DecodeErrc::NotMultipleOf8, 0, "empty program");
  }
  if (p.size() > kMaxProgramSlots) {
    detail::decode_fail(DecodeErrc::TooLong, kMaxProgramSlots, "program exceeds 65536 slots");
  }
  for (std::size_t pc = 0; pc < p.size(); ++pc) {
    const Instruction& in = p[pc];
    auto info = lookup_opcode(in.opcode);
    if (!info) {
      detail::decode_fail(DecodeErrc::UnknownOpcode, pc, "opcode not in the supported set");
    }
    switch (info->form) {
      case Form::AluImm: detail::check_fields(in, pc, true, false, false, true); break;
      case Form::AluReg: detail::check_fields(in, pc, true, true, false, false); break;
      case Form::Neg: detail::check_fields(in, pc, true, false, false, false); break;
      case Form::Ja: detail::check_fields(in, pc, false, false, true, false); break;
      case Form::JmpImm: detail::check_fields(in, pc, true, false, true, true); break;
      case Form::JmpReg: detail::check_fields(in, pc, true, true, true, false); break;
      case Form::Call: detail::check_fields(in, pc, false, false, false, true); break;
      case Form::Exit: detail::check_fields(in, pc, false, false, false, false); break;
      case Form::Ldx: detail::check_fields(in, pc, true, true, true, false); break;
      case Form::St: detail::check_fields(in, pc, true, false, true, true); break;
      case Form::Stx: detail::check_fields(in, pc, true, true, true, false); break;
      case Form::Lddw: {
        detail::check_fields(in, pc, true, false, false, true);
        if (pc + 1 >= p.size()) {
          detail::decode_fail(DecodeErrc::TruncatedWideLoad, pc, "lddw is missing its second slot");
        }
        const Instruction& hi = p[pc + 1];
        if (hi.opcode != 0 || hi.dst != 0 || hi.src != 0 || hi.offset != 0) {
          detail::decode_fail(DecodeErrc::TruncatedWideLoad, pc + 1,
                              "lddw second slot must be zero apart from imm");
        }
        ++pc;
        break;
      }
    }
  }
}

inline Program decode_program(std::span<const uint8_t> bytes) {
  if (bytes.empty() || bytes.size() % kSlotSize != 0) {
    detail::decode_fail(DecodeErrc::NotMultipleOf8, bytes.size() / kSlotSize,
                        "byte length " + std::to_string(bytes.size()) +
                            " is not a nonzero multiple of 8");
  }
  if (bytes.size() > kMaxProgramBytes) {
    detail::decode_fail(DecodeErrc::TooLong, kMaxProgramSlots, "program exceeds 512 KiB");
  }
  Program p;
  p.slots.reserve(bytes.size() / kSlotSize);
  for (std::size_t i = 0; i < bytes.size(); i += kSlotSize) {
    const uint8_t* b = bytes.data() + i;
    Instruction in;
    in.opcode = b[0];
    in.dst = b[1] & 0x0f;
    in.src = b[1] >> 4;
    in.offset = static_cast<int16_t>(static_cast<uint16_t>(b[2] | (b[3] << 8)));
    in.imm = static_cast<int32_t>(static_cast<uint32_t>(b[4]) | (static_cast<uint32_t>(b[5]) << 8) |
                                  (static_cast<uint32_t>(b[6]) << 16) |
                                  (static_cast<uint32_t>(b[7]) << 24));
    p.slots.push_back(in);
  }
  validate_program(p);
  return p;
}

inline std::vector<uint8_t> encode_program(const Program& p) {
  std::vector<uint8_t> out;
  out.reserve(p.size() * kSlotSize);
  for (const Instruction& in : p.slots) {
    auto off = static_cast<uint16_t>(in.offset);
    auto imm = static_cast<uint32_t>(in.imm);
    out.push_back(in.opcode);
    out.push_back(static_cast<uint8_t>((in.dst & 0x0f) | (in.src << 4)));
    out.push_back(static_cast<uint8_t>(off));
    out.push_back(static_cast<uint8_t>(off >> 8));
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<uint8_t>(imm >> s));
  }
  return out;
}

// Execution semantics shared by the verifier's constant folding and the VM.

inline uint64_t alu64(uint8_t code, uint64_t dst, uint64_t src) {
  switch (code) {
    case op::kAdd: return dst + src;
    case op::kSub: return dst - src;
    case op::kMul: return dst * src;
    case op::kDiv: return src == 0 ? 0 : dst / src;
    case op::kMod: return src == 0 ? 0 : dst % src;
    case op::kOr: return dst | src;
    case op::kAnd: return dst & src;
    case op::kXor: return dst ^ src;
    case op::kLsh: return dst << (src & 63);
    case op::kRsh: return dst >> (src & 63);
    case op::kArsh: return static_cast<uint64_t>(static_cast<int64_t>(dst) >> (src & 63));
    case op::kMov: return src;
    case op::kNeg: return ~dst + 1;
  }
  return 0;
}

inline bool jump_taken(uint8_t code, uint64_t a, uint64_t b) {
  auto sa = static_cast<int64_t>(a);
  auto sb = static_cast<int64_t>(b);
  switch (code) {
    case op::kJeq: return a == b;
    case op::kJne: return a != b;
    case op::kJgt: return a > b;
    case op::kJge: return a >= b;
    case op::kJlt: return a < b;
    case op::kJle: return a <= b;
    case op::kJsgt: return sa > sb;
    case op::kJsge: return sa >= sb;
    case op::kJslt: return sa < sb;
    case op::kJsle: return sa <= sb;
  }
  return false;
}

inline constexpr uint64_t sign_extend(int32_t imm) {
  return static_cast<uint64_t>(static_cast<int64_t>(imm));
}

}  // namespace bpfstore
