#pragma once

// Textual assembler and disassembler for appcode.
//
//   mov64 r0, 0          ; comment
//   ldxdw r2, [r1+16]
//   jgt r4, r3, reject   ; label or +N/-N slot offset
//   stxdw [r10-8], r2
//   lddw r1, 0x1ffffffff
//   call io_read         ; helper name or id
//   goto done            ; alias of ja
// reject:
//   exit

#include <charconv>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "bpfstore/abi.hpp"
#include "bpfstore/bytecode.hpp"

namespace bpfstore {

enum class AsmErrc { ParseError, UnknownMnemonic, UnresolvedLabel, ImmediateOutOfRange };

inline std::string_view to_string(AsmErrc e) {
  switch (e) {
    case AsmErrc::ParseError: return "ParseError";
    case AsmErrc::UnknownMnemonic: return "UnknownMnemonic";
    case AsmErrc::UnresolvedLabel: return "UnresolvedLabel";
    case AsmErrc::ImmediateOutOfRange: return "ImmediateOutOfRange";
  }
  return "?";
}

class AsmError : public std::runtime_error {
 public:
  AsmError(AsmErrc code, std::size_t line, const std::string& msg)
      : std::runtime_error("line " + std::to_string(line) + ": " + std::string(to_string(code)) +
                           ": " + msg),
        code_(code),
        line_(line) {}

  AsmErrc code() const { return code_; }
  std::size_t line() const { return line_; }

 private:
  AsmErrc code_;
  std::size_t line_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

inline bool is_ident_start(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c == '.';
}

inline bool is_ident(std::string_view s) {
  if (s.empty() || !is_ident_start(s.front())) return false;
  for (char c : s) {
    if (!is_ident_start(c) && !(c >= '0' && c <= '9')) return false;
  }
  return true;
}

struct Line {
  std::size_t number;
  std::string_view mnemonic;
  std::vector<std::string_view> operands;
};

class Assembler {
 public:
  explicit Assembler(std::string_view text) : text_(text) {}

  Program run() {
    scan();
    Program p;
    for (const Line& line : lines_) emit(line, p);
    if (p.size() == 0) throw AsmError(AsmErrc::ParseError, 0, "empty program");
    return p;
  }

 private:
  void scan() {
    std::size_t number = 0;
    std::size_t slot = 0;
    std::size_t pos = 0;
    while (pos <= text_.size()) {
      std::size_t nl = text_.find('\n', pos);
      if (nl == std::string_view::npos) nl = text_.size();
      std::string_view raw = text_.substr(pos, nl - pos);
      pos = nl + 1;
      ++number;
      if (auto c = raw.find(';'); c != std::string_view::npos) raw = raw.substr(0, c);
      std::string_view body = trim(raw);
      // leading labels, possibly several on one line
      while (true) {
        auto colon = body.find(':');
        if (colon == std::string_view::npos) break;
        std::string_view name = trim(body.substr(0, colon));
        if (!is_ident(name)) {
          throw AsmError(AsmErrc::ParseError, number, "bad label '" + std::string(name) + "'");
        }
        if (!labels_.emplace(std::string(name), slot).second) {
          throw AsmError(AsmErrc::ParseError, number, "duplicate label '" + std::string(name) + "'");
        }
        body = trim(body.substr(colon + 1));
      }
      if (body.empty()) continue;

      Line line{number, {}, {}};
      auto sp = body.find_first_of(" \t");
      line.mnemonic = body.substr(0, sp);
      if (sp != std::string_view::npos) {
        std::string_view rest = trim(body.substr(sp));
        while (!rest.empty()) {
          auto comma = rest.find(',');
          std::string_view operand = trim(rest.substr(0, comma));
          if (operand.empty()) throw AsmError(AsmErrc::ParseError, number, "empty operand");
          line.operands.push_back(operand);
          if (comma == std::string_view::npos) break;
          rest = trim(rest.substr(comma + 1));
          if (rest.empty()) throw AsmError(AsmErrc::ParseError, number, "trailing comma");
        }
      }
      slot += line.mnemonic == "lddw" ? 2 : 1;
      lines_.push_back(std::move(line));
    }
  }

  static std::optional<__int128> parse_number(std::string_view s) {
    bool neg = false;
    if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
      neg = s.front() == '-';
      s.remove_prefix(1);
    }
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
      base = 16;
      s.remove_prefix(2);
    }
    if (s.empty()) return std::nullopt;
    uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec == std::errc::result_out_of_range) return __int128(1) << 100;  // flagged by range
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    __int128 r = v;
    return neg ? -r : r;
  }

  static bool looks_numeric(std::string_view s) {
    if (!s.empty() && (s.front() == '-' || s.front() == '+')) s.remove_prefix(1);
    return !s.empty() && s.front() >= '0' && s.front() <= '9';
  }

  std::optional<uint8_t> parse_reg(std::string_view s) const {
    if (s.size() < 2 || s[0] != 'r') return std::nullopt;
    auto n = parse_number(s.substr(1));
    if (!n || *n < 0 || *n >= kNumRegisters || s[1] == '+' || s[1] == '-') return std::nullopt;
    return static_cast<uint8_t>(*n);
  }

  uint8_t expect_reg(const Line& l, std::string_view s) const {
    auto r = parse_reg(s);
    if (!r) throw AsmError(AsmErrc::ParseError, l.number, "expected register, got '" + std::string(s) + "'");
    return *r;
  }

  int32_t expect_imm32(const Line& l, std::string_view s) const {
    auto n = parse_number(s);
    if (!n) throw AsmError(AsmErrc::ParseError, l.number, "expected immediate, got '" + std::string(s) + "'");
    // Hex/decimal patterns up to 0xffffffff are accepted as raw bit patterns.
    if (*n < std::numeric_limits<int32_t>::min() || *n > std::numeric_limits<uint32_t>::max()) {
      throw AsmError(AsmErrc::ImmediateOutOfRange, l.number, "'" + std::string(s) + "' does not fit in 32 bits");
    }
    return static_cast<int32_t>(static_cast<uint32_t>(static_cast<int64_t>(*n)));
  }

  int16_t expect_offset(const Line& l, std::string_view s, std::size_t pc) const {
    __int128 off;
    if (looks_numeric(s)) {
      auto n = parse_number(s);
      if (!n) throw AsmError(AsmErrc::ParseError, l.number, "bad jump offset '" + std::string(s) + "'");
      off = *n;
    } else {
      if (!is_ident(s)) throw AsmError(AsmErrc::ParseError, l.number, "bad jump target '" + std::string(s) + "'");
      auto it = labels_.find(std::string(s));
      if (it == labels_.end()) {
        throw AsmError(AsmErrc::UnresolvedLabel, l.number, "label '" + std::string(s) + "' is not defined");
      }
      off = static_cast<__int128>(it->second) - static_cast<__int128>(pc) - 1;
    }
    if (off < std::numeric_limits<int16_t>::min() || off > std::numeric_limits<int16_t>::max()) {
      throw AsmError(AsmErrc::ImmediateOutOfRange, l.number, "jump offset does not fit in 16 bits");
    }
    return static_cast<int16_t>(off);
  }

  // "[rN]", "[rN+off]", "[rN-off]"
  std::pair<uint8_t, int16_t> expect_mem(const Line& l, std::string_view s) const {
    if (s.size() < 4 || s.front() != '[' || s.back() != ']') {
      throw AsmError(AsmErrc::ParseError, l.number, "expected memory operand, got '" + std::string(s) + "'");
    }
    std::string_view inner = trim(s.substr(1, s.size() - 2));
    auto sign = inner.find_first_of("+-");
    uint8_t reg = expect_reg(l, trim(inner.substr(0, sign)));
    if (sign == std::string_view::npos) return {reg, 0};
    std::string_view num = trim(inner.substr(sign + 1));
    auto n = parse_number(num);
    if (!n || num.empty() || num.front() == '-' || num.front() == '+') {
      throw AsmError(AsmErrc::ParseError, l.number, "bad memory offset in '" + std::string(s) + "'");
    }
    __int128 off = inner[sign] == '-' ? -*n : *n;
    if (off < std::numeric_limits<int16_t>::min() || off > std::numeric_limits<int16_t>::max()) {
      throw AsmError(AsmErrc::ImmediateOutOfRange, l.number, "memory offset does not fit in 16 bits");
    }
    return {reg, static_cast<int16_t>(off)};
  }

  static void arity(const Line& l, std::size_t n) {
    if (l.operands.size() != n) {
      throw AsmError(AsmErrc::ParseError, l.number,
                     std::string(l.mnemonic) + " takes " + std::to_string(n) + " operand(s)");
    }
  }

  static std::optional<uint8_t> find_opcode(std::string_view mnemonic, Form form) {
    for (int code = 0; code < 256; ++code) {
      auto info = lookup_opcode(static_cast<uint8_t>(code));
      if (info && info->form == form && info->mnemonic == mnemonic) return static_cast<uint8_t>(code);
    }
    return std::nullopt;
  }

  static std::optional<Form> family(std::string_view mnemonic) {
    for (int code = 0; code < 256; ++code) {
      auto info = lookup_opcode(static_cast<uint8_t>(code));
      if (info && info->mnemonic == mnemonic) return info->form;
    }
    return std::nullopt;
  }

  void emit(const Line& l, Program& p) const {
    std::string_view m = l.mnemonic == "goto" ? std::string_view("ja") : l.mnemonic;
    auto fam = family(m);
    if (!fam) throw AsmError(AsmErrc::UnknownMnemonic, l.number, "unknown mnemonic '" + std::string(l.mnemonic) + "'");
    const std::size_t pc = p.size();
    Instruction in;
    switch (*fam) {
      case Form::AluImm:
      case Form::AluReg: {
        arity(l, 2);
        in.dst = expect_reg(l, l.operands[0]);
        if (auto r = parse_reg(l.operands[1])) {
          in.opcode = *find_opcode(m, Form::AluReg);
          in.src = *r;
        } else {
          in.opcode = *find_opcode(m, Form::AluImm);
          in.imm = expect_imm32(l, l.operands[1]);
        }
        break;
      }
      case Form::Neg:
        arity(l, 1);
        in.opcode = *find_opcode(m, Form::Neg);
        in.dst = expect_reg(l, l.operands[0]);
        break;
      case Form::Ja:
        arity(l, 1);
        in.opcode = op::kJaInsn;
        in.offset = expect_offset(l, l.operands[0], pc);
        break;
      case Form::JmpImm:
      case Form::JmpReg: {
        arity(l, 3);
        in.dst = expect_reg(l, l.operands[0]);
        if (auto r = parse_reg(l.operands[1])) {
          in.opcode = *find_opcode(m, Form::JmpReg);
          in.src = *r;
        } else {
          in.opcode = *find_opcode(m, Form::JmpImm);
          in.imm = expect_imm32(l, l.operands[1]);
        }
        in.offset = expect_offset(l, l.operands[2], pc);
        break;
      }
      case Form::Call: {
        arity(l, 1);
        in.opcode = op::kCallInsn;
        if (const auto* h = find_helper(kStandardHelpers, l.operands[0])) {
          in.imm = h->id;
        } else {
          in.imm = expect_imm32(l, l.operands[0]);
        }
        break;
      }
      case Form::Exit:
        arity(l, 0);
        in.opcode = op::kExitInsn;
        break;
      case Form::Ldx: {
        arity(l, 2);
        in.opcode = *find_opcode(m, Form::Ldx);
        in.dst = expect_reg(l, l.operands[0]);
        std::tie(in.src, in.offset) = expect_mem(l, l.operands[1]);
        break;
      }
      case Form::St: {
        arity(l, 2);
        in.opcode = *find_opcode(m, Form::St);
        std::tie(in.dst, in.offset) = expect_mem(l, l.operands[0]);
        in.imm = expect_imm32(l, l.operands[1]);
        break;
      }
      case Form::Stx: {
        arity(l, 2);
        in.opcode = *find_opcode(m, Form::Stx);
        std::tie(in.dst, in.offset) = expect_mem(l, l.operands[0]);
        in.src = expect_reg(l, l.operands[1]);
        break;
      }
      case Form::Lddw: {
        arity(l, 2);
        in.opcode = op::kLddw;
        in.dst = expect_reg(l, l.operands[0]);
        auto n = parse_number(l.operands[1]);
        if (!n) throw AsmError(AsmErrc::ParseError, l.number, "expected immediate, got '" + std::string(l.operands[1]) + "'");
        if (*n < std::numeric_limits<int64_t>::min() || *n > std::numeric_limits<uint64_t>::max()) {
          throw AsmError(AsmErrc::ImmediateOutOfRange, l.number, "'" + std::string(l.operands[1]) + "' does not fit in 64 bits");
        }
        auto v = static_cast<uint64_t>(*n);
        in.imm = static_cast<int32_t>(static_cast<uint32_t>(v));
        p.slots.push_back(in);
        Instruction hi;
        hi.imm = static_cast<int32_t>(static_cast<uint32_t>(v >> 32));
        p.slots.push_back(hi);
        return;
      }
    }
    p.slots.push_back(in);
  }

  std::string_view text_;
  std::vector<Line> lines_;
  std::map<std::string, std::size_t> labels_;
};

inline std::string format_offset(int64_t off) {
  return (off >= 0 ? "+" : "-") + std::to_string(off >= 0 ? off : -off);
}

inline std::string format_mem(uint8_t reg, int16_t off) {
  return "[r" + std::to_string(reg) + format_offset(off) + "]";
}

}  // namespace detail

inline Program assemble(std::string_view text) { return detail::Assembler(text).run(); }

// Renders the instruction at pc. For a LDDW, pc must name its first slot.
inline std::string disassemble_insn(const Program& p, std::size_t pc) {
  const Instruction& in = p[pc];
  auto info = lookup_opcode(in.opcode);
  if (!info) return "<bad opcode " + std::to_string(in.opcode) + ">";
  std::string m(info->mnemonic);
  auto r = [](uint8_t reg) { return "r" + std::to_string(reg); };
  switch (info->form) {
    case Form::AluImm: return m + " " + r(in.dst) + ", " + std::to_string(in.imm);
    case Form::AluReg: return m + " " + r(in.dst) + ", " + r(in.src);
    case Form::Neg: return m + " " + r(in.dst);
    case Form::Ja: return m + " " + detail::format_offset(in.offset);
    case Form::JmpImm:
      return m + " " + r(in.dst) + ", " + std::to_string(in.imm) + ", " + detail::format_offset(in.offset);
    case Form::JmpReg:
      return m + " " + r(in.dst) + ", " + r(in.src) + ", " + detail::format_offset(in.offset);
    case Form::Call: {
      if (const auto* h = find_helper(kStandardHelpers, in.imm)) return m + " " + std::string(h->name);
      return m + " " + std::to_string(in.imm);
    }
    case Form::Exit: return m;
    case Form::Ldx: return m + " " + r(in.dst) + ", " + detail::format_mem(in.src, in.offset);
    case Form::St: return m + " " + detail::format_mem(in.dst, in.offset) + ", " + std::to_string(in.imm);
    case Form::Stx: return m + " " + detail::format_mem(in.dst, in.offset) + ", " + r(in.src);
    case Form::Lddw: {
      if (pc + 1 >= p.size()) return m + " " + r(in.dst) + ", <truncated>";
      std::ostringstream os;
      os << m << " " << r(in.dst) << ", 0x" << std::hex << p.wide_imm(pc);
      return os.str();
    }
  }
  return m;
}

inline std::string disassemble(const Program& p) {
  std::string out;
  for (std::size_t pc = 0; pc < p.size(); ++pc) {
    if (!out.empty()) out += '\n';
    out += disassemble_insn(p, pc);
    if (p[pc].opcode == op::kLddw) ++pc;
  }
  return out;
}

}  // namespace bpfstore
