#pragma once

// Static safety verifier for appcode.
//
// The analysis is abstract interpretation over the loop-free control-flow
// graph. Jumps may only go forward, so slot order is a topological order:
// every instruction is visited once, with the join of the states flowing in
// from its predecessors. Each register carries a kind (scalar, or a pointer
// into ctx, the data region, or the stack) and, for scalars, an unsigned
// interval. The state also records how many data bytes the current path has
// proven to exist, which only grows through comparisons of a data pointer
// against data_end.

#include <algorithm>
#include <array>
#include <bitset>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bpfstore/abi.hpp"
#include "bpfstore/assembler.hpp"
#include "bpfstore/bytecode.hpp"

namespace bpfstore {

enum class RegKind : uint8_t { Uninit, Scalar, CtxAddr, DataAddr, DataEndAddr, StackAddr };

inline std::string_view to_string(RegKind k) {
  switch (k) {
    case RegKind::Uninit: return "uninit";
    case RegKind::Scalar: return "scalar";
    case RegKind::CtxAddr: return "ctx pointer";
    case RegKind::DataAddr: return "data pointer";
    case RegKind::DataEndAddr: return "data_end pointer";
    case RegKind::StackAddr: return "stack pointer";
  }
  return "?";
}

struct RegState {
  RegKind kind = RegKind::Uninit;
  // Scalar only.
  uint64_t umin = 0;
  uint64_t umax = 0;
  // Address kinds: byte displacement from the region base. Exact
  // (min == max) for everything but data pointers, which may carry a
  // bounded variable offset.
  int64_t disp_min = 0;
  int64_t disp_max = 0;
  // Uninit because a helper invalidated the data region.
  bool stale = false;

  static RegState scalar(uint64_t lo, uint64_t hi) {
    RegState r;
    r.kind = RegKind::Scalar;
    r.umin = lo;
    r.umax = hi;
    return r;
  }
  static RegState constant(uint64_t v) { return scalar(v, v); }
  static RegState unknown() { return scalar(0, std::numeric_limits<uint64_t>::max()); }
  static RegState address(RegKind k, int64_t disp) {
    RegState r;
    r.kind = k;
    r.disp_min = r.disp_max = disp;
    return r;
  }
  static RegState invalidated() {
    RegState r;
    r.stale = true;
    return r;
  }

  bool is_scalar() const { return kind == RegKind::Scalar; }
  bool is_const() const { return is_scalar() && umin == umax; }
  bool is_pointer() const { return kind != RegKind::Uninit && kind != RegKind::Scalar; }

  friend bool operator==(const RegState&, const RegState&) = default;
};

struct AbstractState {
  std::array<RegState, kNumRegisters> regs{};
  uint64_t data_bound = 0;              // bytes proven available from the data base
  std::bitset<kStackSize> stack_init;   // bit i covers frame offset i - 512
  uint64_t insn_budget_used = 0;        // longest path (in instructions) reaching here

  friend bool operator==(const AbstractState&, const AbstractState&) = default;
};

struct VerifyLimits {
  std::size_t max_insns = kMaxProgramSlots;
  std::size_t max_path = 65536;
  std::size_t max_states = std::size_t{1} << 20;
};

enum class VerifyErrc {
  BackEdge,
  BadJump,
  OutOfBounds,
  UninitRead,
  BudgetExceeded,
  BadHelper,
  StaleDataAddr,
  CtxWrite,
  StateExplosion,
  TypeMismatch,
};

inline std::string_view to_string(VerifyErrc e) {
  switch (e) {
    case VerifyErrc::BackEdge: return "BackEdge";
    case VerifyErrc::BadJump: return "BadJump";
    case VerifyErrc::OutOfBounds: return "OutOfBounds";
    case VerifyErrc::UninitRead: return "UninitRead";
    case VerifyErrc::BudgetExceeded: return "BudgetExceeded";
    case VerifyErrc::BadHelper: return "BadHelper";
    case VerifyErrc::StaleDataAddr: return "StaleDataAddr";
    case VerifyErrc::CtxWrite: return "CtxWrite";
    case VerifyErrc::StateExplosion: return "StateExplosion";
    case VerifyErrc::TypeMismatch: return "TypeMismatch";
  }
  return "?";
}

struct VerifyFailure {
  VerifyErrc kind;
  std::size_t pc = 0;
  int reg = -1;
  MemRegion region = MemRegion::None;
  int32_t helper_id = 0;
  std::string insn;    // disassembly of the offending instruction
  std::string detail;
};

inline std::string explain(const VerifyFailure& f);

class VerifyError : public std::runtime_error {
 public:
  explicit VerifyError(VerifyFailure f) : std::runtime_error(explain(f)), failure_(std::move(f)) {}

  const VerifyFailure& failure() const { return failure_; }
  VerifyErrc kind() const { return failure_.kind; }
  std::size_t pc() const { return failure_.pc; }
  int reg() const { return failure_.reg; }
  MemRegion region() const { return failure_.region; }

 private:
  VerifyFailure failure_;
};

inline std::string explain(const VerifyFailure& f) {
  std::string rule;
  switch (f.kind) {
    case VerifyErrc::BackEdge: rule = "backward jump (loops are not allowed)"; break;
    case VerifyErrc::BadJump: rule = "control flow leaves the program"; break;
    case VerifyErrc::OutOfBounds:
      rule = "out-of-bounds access to the " + std::string(to_string(f.region)) + " region";
      break;
    case VerifyErrc::UninitRead:
      rule = f.reg >= 0 ? "read of uninitialized register r" + std::to_string(f.reg)
                        : "read of uninitialized memory";
      break;
    case VerifyErrc::BudgetExceeded: rule = "instruction budget exceeded"; break;
    case VerifyErrc::BadHelper: rule = "invalid call to helper " + std::to_string(f.helper_id); break;
    case VerifyErrc::StaleDataAddr:
      rule = "r" + std::to_string(f.reg) + " holds a data pointer invalidated by data_realloc";
      break;
    case VerifyErrc::CtxWrite: rule = "store to the read-only context"; break;
    case VerifyErrc::StateExplosion: rule = "too many abstract states"; break;
    case VerifyErrc::TypeMismatch: rule = "invalid operand types"; break;
  }
  std::string out = "pc=" + std::to_string(f.pc);
  if (!f.insn.empty()) out += " (" + f.insn + ")";
  out += ": " + rule;
  if (!f.detail.empty()) out += ": " + f.detail;
  return out;
}

inline std::string explain(const VerifyError& e) { return e.what(); }

// A program that passed verify(). Only verify() constructs one.
class VerifiedProgram {
 public:
  const Program& program() const { return program_; }
  std::size_t max_path_len() const { return max_path_len_; }
  const std::vector<int32_t>& helper_set() const { return helper_set_; }

  // Region a load/store at pc accesses; None for other instructions and
  // unreachable code.
  MemRegion access_region(std::size_t pc) const { return regions_[pc]; }

  // Proven data bytes on entry to pc, if pc is reachable.
  std::optional<uint64_t> data_bound_at(std::size_t pc) const { return data_bounds_[pc]; }

 private:
  friend class VerifierEngine;
  VerifiedProgram() = default;

  Program program_;
  std::size_t max_path_len_ = 0;
  std::vector<int32_t> helper_set_;
  std::vector<MemRegion> regions_;
  std::vector<std::optional<uint64_t>> data_bounds_;
};

// Largest constant displacement added to a pointer, and largest variable
// offset added to a data pointer.
inline constexpr int64_t kMaxPointerDisp = int64_t{1} << 29;
inline constexpr uint64_t kMaxVariableOffset = kMaxDataSize;

class VerifierEngine {
 public:
  VerifierEngine(const Program& p, const VerifyLimits& limits,
                 std::span<const HelperSignature> helpers)
      : p_(p), limits_(limits), helpers_(helpers) {}

  VerifiedProgram run() {
    if (p_.size() == 0) fail(VerifyErrc::BadJump, 0, "empty program");
    if (p_.size() > limits_.max_insns) {
      fail(VerifyErrc::BudgetExceeded, 0,
           std::to_string(p_.size()) + " slots exceed max_insns=" + std::to_string(limits_.max_insns));
    }
    structural_pass();

    in_.assign(p_.size(), std::nullopt);
    regions_.assign(p_.size(), MemRegion::None);
    bounds_.assign(p_.size(), std::nullopt);

    AbstractState entry;
    entry.regs[1] = RegState::address(RegKind::CtxAddr, 0);
    entry.regs[kFrameRegister] = RegState::address(RegKind::StackAddr, 0);
    in_[0] = entry;
    states_ = 1;

    for (std::size_t pc = 0; pc < p_.size(); ++pc) {
      if (continuation_[pc] || !in_[pc]) continue;
      AbstractState s = std::move(*in_[pc]);
      in_[pc].reset();
      step(pc, std::move(s));
    }

    VerifiedProgram vp;
    vp.program_ = p_;
    vp.max_path_len_ = max_path_;
    vp.helper_set_.assign(used_helpers_.begin(), used_helpers_.end());
    vp.regions_ = std::move(regions_);
    vp.data_bounds_ = std::move(bounds_);
    return vp;
  }

 private:
  [[noreturn]] void fail(VerifyErrc kind, std::size_t pc, std::string detail, int reg = -1,
                         MemRegion region = MemRegion::None, int32_t helper = 0) const {
    VerifyFailure f;
    f.kind = kind;
    f.pc = pc;
    f.reg = reg;
    f.region = region;
    f.helper_id = helper;
    f.detail = std::move(detail);
    if (pc < p_.size()) f.insn = disassemble_insn(p_, pc);
    throw VerifyError(std::move(f));
  }

  void structural_pass() {
    continuation_.assign(p_.size(), false);
    for (std::size_t pc = 0; pc < p_.size(); ++pc) {
      if (p_[pc].opcode == op::kLddw && pc + 1 < p_.size()) continuation_[++pc] = true;
    }
    for (std::size_t pc = 0; pc < p_.size(); ++pc) {
      if (continuation_[pc]) continue;
      auto info = lookup_opcode(p_[pc].opcode);
      if (!info) fail(VerifyErrc::TypeMismatch, pc, "unknown opcode");
      if (!is_jump(info->form)) continue;
      int64_t target = static_cast<int64_t>(pc) + 1 + p_[pc].offset;
      if (target <= static_cast<int64_t>(pc)) {
        fail(VerifyErrc::BackEdge, pc, "target pc " + std::to_string(target) + " is not after the jump");
      }
      if (target >= static_cast<int64_t>(p_.size()) || continuation_[static_cast<std::size_t>(target)]) {
        fail(VerifyErrc::BadJump, pc, "target pc " + std::to_string(target) + " is not an instruction");
      }
    }
  }

  static RegState join(const RegState& a, const RegState& b) {
    if (a == b) return a;
    if (a.kind != b.kind) {
      RegState r;
      r.stale = a.stale || b.stale;
      return r;
    }
    switch (a.kind) {
      case RegKind::Uninit: {
        RegState r;
        r.stale = a.stale || b.stale;
        return r;
      }
      case RegKind::Scalar: return RegState::scalar(std::min(a.umin, b.umin), std::max(a.umax, b.umax));
      case RegKind::DataAddr: {
        RegState r = a;
        r.disp_min = std::min(a.disp_min, b.disp_min);
        r.disp_max = std::max(a.disp_max, b.disp_max);
        return r;
      }
      default: return RegState{};  // differing exact displacements
    }
  }

  static void join_into(AbstractState& into, const AbstractState& from) {
    for (std::size_t i = 0; i < kNumRegisters; ++i) into.regs[i] = join(into.regs[i], from.regs[i]);
    into.data_bound = std::min(into.data_bound, from.data_bound);
    into.stack_init &= from.stack_init;
    into.insn_budget_used = std::max(into.insn_budget_used, from.insn_budget_used);
  }

  void propagate(std::size_t pc, std::size_t target, AbstractState s) {
    if (target >= p_.size() || continuation_[target]) {
      fail(VerifyErrc::BadJump, pc, "execution falls off the end of the program");
    }
    if (++states_ > limits_.max_states) {
      fail(VerifyErrc::StateExplosion, pc, "explored more than " + std::to_string(limits_.max_states) + " states");
    }
    if (in_[target]) {
      join_into(*in_[target], s);
    } else {
      in_[target] = std::move(s);
    }
  }

  const RegState& use(const AbstractState& s, uint8_t reg, std::size_t pc) const {
    const RegState& r = s.regs[reg];
    if (r.kind == RegKind::Uninit) {
      if (r.stale) fail(VerifyErrc::StaleDataAddr, pc, "", reg);
      fail(VerifyErrc::UninitRead, pc, "", reg);
    }
    return r;
  }

  void check_writable(uint8_t reg, std::size_t pc) const {
    if (reg == kFrameRegister) fail(VerifyErrc::TypeMismatch, pc, "r10 is read-only", reg);
  }

  void step(std::size_t pc, AbstractState s) {
    if (s.insn_budget_used + 1 > limits_.max_path) {
      fail(VerifyErrc::BudgetExceeded, pc,
           "path length exceeds max_path=" + std::to_string(limits_.max_path));
    }
    ++s.insn_budget_used;
    bounds_[pc] = s.data_bound;

    const Instruction& in = p_[pc];
    const Form form = lookup_opcode(in.opcode)->form;
    switch (form) {
      case Form::AluImm:
      case Form::AluReg:
      case Form::Neg:
        alu(pc, s, in, form);
        propagate(pc, pc + 1, std::move(s));
        return;
      case Form::Lddw:
        check_writable(in.dst, pc);
        s.regs[in.dst] = RegState::constant(p_.wide_imm(pc));
        propagate(pc, pc + 2, std::move(s));
        return;
      case Form::Ldx:
      case Form::St:
      case Form::Stx:
        memory(pc, s, in, form);
        propagate(pc, pc + 1, std::move(s));
        return;
      case Form::Ja:
        propagate(pc, pc + 1 + in.offset, std::move(s));
        return;
      case Form::JmpImm:
      case Form::JmpReg:
        branch(pc, std::move(s), in, form);
        return;
      case Form::Call:
        call(pc, s, in);
        propagate(pc, pc + 1, std::move(s));
        return;
      case Form::Exit: {
        const RegState& r0 = use(s, 0, pc);
        if (!r0.is_scalar()) fail(VerifyErrc::TypeMismatch, pc, "r0 must be a scalar at exit", 0);
        max_path_ = std::max<std::size_t>(max_path_, s.insn_budget_used);
        return;
      }
    }
  }

  // --- ALU -----------------------------------------------------------------

  static uint64_t fill_below(uint64_t x) {
    return x == 0 ? 0 : std::numeric_limits<uint64_t>::max() >> __builtin_clzll(x);
  }

  static RegState scalar_alu(uint8_t code, const RegState& a, const RegState& b) {
    constexpr uint64_t kAll = std::numeric_limits<uint64_t>::max();
    if (a.is_const() && b.is_const()) return RegState::constant(alu64(code, a.umin, b.umin));
    switch (code) {
      case op::kAdd: {
        uint64_t lo, hi;
        bool olo = __builtin_add_overflow(a.umin, b.umin, &lo);
        bool ohi = __builtin_add_overflow(a.umax, b.umax, &hi);
        if (olo != ohi) return RegState::unknown();
        return RegState::scalar(lo, hi);
      }
      case op::kSub: {
        if (a.umin >= b.umax) return RegState::scalar(a.umin - b.umax, a.umax - b.umin);
        if (a.umax < b.umin) return RegState::scalar(a.umin - b.umax, a.umax - b.umin);
        return RegState::unknown();
      }
      case op::kMul: {
        uint64_t hi;
        if (__builtin_mul_overflow(a.umax, b.umax, &hi)) return RegState::unknown();
        return RegState::scalar(a.umin * b.umin, hi);
      }
      case op::kDiv: {
        if (b.umax == 0) return RegState::constant(0);
        uint64_t lo = b.umin == 0 ? 0 : a.umin / b.umax;
        uint64_t hi = a.umax / std::max<uint64_t>(b.umin, 1);
        return RegState::scalar(lo, hi);
      }
      case op::kMod: {
        if (b.umax == 0) return RegState::constant(0);
        if (b.umin > 0 && a.umax < b.umin) return a;
        return RegState::scalar(0, std::min(a.umax, b.umax - 1));
      }
      case op::kAnd: return RegState::scalar(0, std::min(a.umax, b.umax));
      case op::kOr:
        return RegState::scalar(std::max(a.umin, b.umin), fill_below(std::max(a.umax, b.umax)));
      case op::kXor: return RegState::scalar(0, fill_below(std::max(a.umax, b.umax)));
      case op::kLsh: {
        if (!b.is_const()) return RegState::unknown();
        unsigned k = b.umin & 63;
        if (k != 0 && (a.umax >> (64 - k)) != 0) return RegState::unknown();
        return RegState::scalar(a.umin << k, a.umax << k);
      }
      case op::kRsh: {
        if (!b.is_const()) return RegState::scalar(0, a.umax);
        unsigned k = b.umin & 63;
        return RegState::scalar(a.umin >> k, a.umax >> k);
      }
      case op::kArsh: {
        if (b.is_const() && a.umax <= static_cast<uint64_t>(std::numeric_limits<int64_t>::max())) {
          unsigned k = b.umin & 63;
          return RegState::scalar(a.umin >> k, a.umax >> k);
        }
        return RegState::unknown();
      }
    }
    return RegState::scalar(0, kAll);
  }

  void pointer_offset(std::size_t pc, RegState& ptr, const RegState& delta, bool subtract,
                      uint8_t reg) const {
    if (ptr.kind == RegKind::DataEndAddr) {
      fail(VerifyErrc::TypeMismatch, pc, "arithmetic on data_end is not allowed", reg);
    }
    int64_t lo, hi;
    if (delta.is_const()) {
      lo = hi = static_cast<int64_t>(delta.umin);
    } else if (ptr.kind == RegKind::DataAddr && delta.umax <= kMaxVariableOffset) {
      lo = static_cast<int64_t>(delta.umin);
      hi = static_cast<int64_t>(delta.umax);
    } else {
      fail(VerifyErrc::TypeMismatch, pc,
           "variable offset on a " + std::string(to_string(ptr.kind)) + " must be a small bounded scalar",
           reg);
    }
    if (lo < -kMaxPointerDisp || hi > kMaxPointerDisp) {
      fail(VerifyErrc::TypeMismatch, pc, "pointer offset out of range", reg);
    }
    if (subtract) {
      ptr.disp_min -= hi;
      ptr.disp_max -= lo;
    } else {
      ptr.disp_min += lo;
      ptr.disp_max += hi;
    }
    if (ptr.disp_min < -kMaxPointerDisp || ptr.disp_max > kMaxPointerDisp) {
      fail(VerifyErrc::TypeMismatch, pc, "pointer offset out of range", reg);
    }
  }

  void alu(std::size_t pc, AbstractState& s, const Instruction& in, Form form) {
    check_writable(in.dst, pc);
    const uint8_t code = op::alu_code(in.opcode);
    if (form == Form::Neg) {
      const RegState& a = use(s, in.dst, pc);
      if (!a.is_scalar()) fail(VerifyErrc::TypeMismatch, pc, "neg64 on a pointer", in.dst);
      s.regs[in.dst] = a.is_const() ? RegState::constant(alu64(op::kNeg, a.umin, 0)) : RegState::unknown();
      return;
    }
    RegState src = form == Form::AluReg ? use(s, in.src, pc) : RegState::constant(sign_extend(in.imm));
    if (code == op::kMov) {
      s.regs[in.dst] = src;
      return;
    }
    RegState dst = use(s, in.dst, pc);
    if (dst.is_scalar() && src.is_scalar()) {
      s.regs[in.dst] = scalar_alu(code, dst, src);
      return;
    }
    if (code == op::kAdd && dst.is_pointer() && src.is_scalar()) {
      pointer_offset(pc, dst, src, false, in.dst);
      s.regs[in.dst] = dst;
      return;
    }
    if (code == op::kAdd && dst.is_scalar() && src.is_pointer()) {
      pointer_offset(pc, src, dst, false, in.src);
      s.regs[in.dst] = src;
      return;
    }
    if (code == op::kSub && dst.is_pointer() && src.is_scalar()) {
      pointer_offset(pc, dst, src, true, in.dst);
      s.regs[in.dst] = dst;
      return;
    }
    fail(VerifyErrc::TypeMismatch, pc,
         "operation not allowed on " + std::string(to_string(dst.kind)) + " and " +
             std::string(to_string(src.kind)),
         in.dst);
  }

  // --- memory --------------------------------------------------------------

  static RegState loaded_scalar(std::size_t size) {
    return size == 8 ? RegState::unknown() : RegState::scalar(0, (uint64_t{1} << (8 * size)) - 1);
  }

  void memory(std::size_t pc, AbstractState& s, const Instruction& in, Form form) {
    const bool store = form != Form::Ldx;
    const uint8_t base_reg = store ? in.dst : in.src;
    const std::size_t size = op::access_size(in.opcode);
    const RegState& base = use(s, base_reg, pc);

    if (form == Form::Stx) {
      const RegState& v = use(s, in.src, pc);
      if (!v.is_scalar()) {
        fail(VerifyErrc::TypeMismatch, pc, "storing a pointer to memory is not allowed", in.src);
      }
    }
    if (!store) check_writable(in.dst, pc);

    RegState result;
    switch (base.kind) {
      case RegKind::CtxAddr: {
        if (store) fail(VerifyErrc::CtxWrite, pc, "", base_reg, MemRegion::Ctx);
        const int64_t at = base.disp_min + in.offset;
        if (at < 0 || at + static_cast<int64_t>(size) > ctx_layout::kSize) {
          fail(VerifyErrc::OutOfBounds, pc,
               "ctx offset " + std::to_string(at) + " size " + std::to_string(size), base_reg, MemRegion::Ctx);
        }
        if (at == ctx_layout::kData && size == 8) {
          result = RegState::address(RegKind::DataAddr, 0);
        } else if (at == ctx_layout::kDataEnd && size == 8) {
          result = RegState::address(RegKind::DataEndAddr, 0);
        } else if (at + static_cast<int64_t>(size) <= ctx_layout::kData) {
          result = loaded_scalar(size);
        } else {
          fail(VerifyErrc::OutOfBounds, pc, "partial access to a ctx pointer field", base_reg, MemRegion::Ctx);
        }
        regions_[pc] = MemRegion::Ctx;
        break;
      }
      case RegKind::DataAddr: {
        const int64_t lo = base.disp_min + in.offset;
        const int64_t hi = base.disp_max + in.offset + static_cast<int64_t>(size);
        if (lo < 0 || hi > static_cast<int64_t>(s.data_bound)) {
          fail(VerifyErrc::OutOfBounds, pc,
               "access [" + std::to_string(lo) + ", " + std::to_string(hi) + ") but only " +
                   std::to_string(s.data_bound) + " bytes are proven",
               base_reg, MemRegion::Data);
        }
        if (!store) result = loaded_scalar(size);
        regions_[pc] = MemRegion::Data;
        break;
      }
      case RegKind::StackAddr: {
        const int64_t at = base.disp_min + in.offset;
        if (at < -kStackSize || at + static_cast<int64_t>(size) > 0) {
          fail(VerifyErrc::OutOfBounds, pc,
               "stack offset " + std::to_string(at) + " size " + std::to_string(size), base_reg,
               MemRegion::Stack);
        }
        const std::size_t first = static_cast<std::size_t>(at + kStackSize);
        if (store) {
          for (std::size_t i = 0; i < size; ++i) s.stack_init.set(first + i);
        } else {
          for (std::size_t i = 0; i < size; ++i) {
            if (!s.stack_init.test(first + i)) {
              fail(VerifyErrc::UninitRead, pc,
                   "stack bytes at offset " + std::to_string(at) + " are not initialized", -1,
                   MemRegion::Stack);
            }
          }
          result = loaded_scalar(size);
        }
        regions_[pc] = MemRegion::Stack;
        break;
      }
      default:
        fail(VerifyErrc::TypeMismatch, pc, "dereference of a " + std::string(to_string(base.kind)), base_reg);
    }
    if (!store) s.regs[in.dst] = result;
  }

  // --- branches ------------------------------------------------------------

  enum class Rel { Eq, Ne, Gt, Ge, Lt, Le };

  static Rel relation(uint8_t code) {
    switch (code) {
      case op::kJeq: return Rel::Eq;
      case op::kJne: return Rel::Ne;
      case op::kJgt: case op::kJsgt: return Rel::Gt;
      case op::kJge: case op::kJsge: return Rel::Ge;
      case op::kJlt: case op::kJslt: return Rel::Lt;
      default: return Rel::Le;
    }
  }

  static bool is_signed(uint8_t code) {
    return code == op::kJsgt || code == op::kJsge || code == op::kJslt || code == op::kJsle;
  }

  static Rel negate(Rel r) {
    switch (r) {
      case Rel::Eq: return Rel::Ne;
      case Rel::Ne: return Rel::Eq;
      case Rel::Gt: return Rel::Le;
      case Rel::Ge: return Rel::Lt;
      case Rel::Lt: return Rel::Ge;
      case Rel::Le: return Rel::Gt;
    }
    return r;
  }

  static Rel mirror(Rel r) {
    switch (r) {
      case Rel::Gt: return Rel::Lt;
      case Rel::Ge: return Rel::Le;
      case Rel::Lt: return Rel::Gt;
      case Rel::Le: return Rel::Ge;
      default: return r;
    }
  }

  // Can "a rel b" hold for some values in the intervals (unsigned order)?
  static bool feasible(Rel r, const RegState& a, const RegState& b) {
    switch (r) {
      case Rel::Eq: return std::max(a.umin, b.umin) <= std::min(a.umax, b.umax);
      case Rel::Ne: return !(a.is_const() && b.is_const() && a.umin == b.umin);
      case Rel::Gt: return a.umax > b.umin;
      case Rel::Ge: return a.umax >= b.umin;
      case Rel::Lt: return a.umin < b.umax;
      case Rel::Le: return a.umin <= b.umax;
    }
    return true;
  }

  // Narrow both intervals assuming "a rel b" holds; only called when feasible.
  static void refine(Rel r, RegState& a, RegState& b) {
    const RegState oa = a, ob = b;
    switch (r) {
      case Rel::Eq:
        a.umin = b.umin = std::max(oa.umin, ob.umin);
        a.umax = b.umax = std::min(oa.umax, ob.umax);
        break;
      case Rel::Ne:
        if (ob.is_const() && oa.umin < oa.umax) {
          if (oa.umin == ob.umin) ++a.umin;
          else if (oa.umax == ob.umin) --a.umax;
        }
        if (oa.is_const() && ob.umin < ob.umax) {
          if (ob.umin == oa.umin) ++b.umin;
          else if (ob.umax == oa.umin) --b.umax;
        }
        break;
      case Rel::Gt:
        a.umin = std::max(oa.umin, ob.umin + 1);
        b.umax = std::min(ob.umax, oa.umax - 1);
        break;
      case Rel::Ge:
        a.umin = std::max(oa.umin, ob.umin);
        b.umax = std::min(ob.umax, oa.umax);
        break;
      case Rel::Lt: refine(Rel::Gt, b, a); break;
      case Rel::Le: refine(Rel::Ge, b, a); break;
    }
  }

  // 0: non-negative as int64, 1: negative, -1: straddles.
  static int sign_half(const RegState& r) {
    constexpr uint64_t kTop = uint64_t{1} << 63;
    if (r.umax < kTop) return 0;
    if (r.umin >= kTop) return 1;
    return -1;
  }

  void branch(std::size_t pc, AbstractState s, const Instruction& in, Form form) {
    const uint8_t code = op::alu_code(in.opcode);
    const bool reg_form = form == Form::JmpReg;
    const RegState a = use(s, in.dst, pc);
    const RegState b = reg_form ? use(s, in.src, pc) : RegState::constant(sign_extend(in.imm));
    const std::size_t taken_pc = pc + 1 + in.offset;
    const std::size_t fall_pc = pc + 1;
    const Rel rel = relation(code);

    if (a.is_scalar() && b.is_scalar()) {
      if (reg_form && in.dst == in.src) {
        const bool always = rel == Rel::Eq || rel == Rel::Ge || rel == Rel::Le;
        propagate(pc, always ? taken_pc : fall_pc, std::move(s));
        return;
      }
      bool can_take = true, can_fall = true, refinable = true;
      if (is_signed(code)) {
        int ha = sign_half(a), hb = sign_half(b);
        if (ha < 0 || hb < 0) {
          refinable = false;
        } else if (ha != hb) {
          // a non-negative and b negative means a > b, and vice versa
          const bool a_greater = ha == 0;
          const bool holds = (rel == Rel::Gt || rel == Rel::Ge) ? a_greater : !a_greater;
          can_take = holds;
          can_fall = !holds;
          refinable = false;
        }
      }
      if (refinable) {
        can_take = feasible(rel, a, b);
        can_fall = feasible(negate(rel), a, b);
      }
      auto emit = [&](bool taken, AbstractState st) {
        if (refinable) {
          RegState ra = a, rb = b;
          refine(taken ? rel : negate(rel), ra, rb);
          st.regs[in.dst] = ra;
          if (reg_form) st.regs[in.src] = rb;
        }
        propagate(pc, taken ? taken_pc : fall_pc, std::move(st));
      };
      if (can_take && can_fall) {
        emit(true, s);
        emit(false, std::move(s));
      } else if (can_take) {
        emit(true, std::move(s));
      } else {
        emit(false, std::move(s));
      }
      return;
    }

    const bool data_vs_end = (a.kind == RegKind::DataAddr && b.kind == RegKind::DataEndAddr) ||
                             (a.kind == RegKind::DataEndAddr && b.kind == RegKind::DataAddr);
    if (data_vs_end && !is_signed(code)) {
      // Normalise to "ptr rel data_end".
      const RegState& ptr = a.kind == RegKind::DataAddr ? a : b;
      const Rel taken_rel = a.kind == RegKind::DataAddr ? rel : mirror(rel);
      const uint64_t bound = s.data_bound;
      const bool surely_le = ptr.disp_max <= static_cast<int64_t>(bound);
      const bool surely_lt = ptr.disp_max < static_cast<int64_t>(bound);
      auto possible = [&](Rel r) {
        if (r == Rel::Gt) return !surely_le;
        if (r == Rel::Ge || r == Rel::Eq) return !surely_lt;
        return true;
      };
      auto refined = [&](Rel r, AbstractState st) {
        if (ptr.disp_min >= 0) {
          uint64_t proven = static_cast<uint64_t>(ptr.disp_min);
          if (r == Rel::Lt) ++proven;
          if (r == Rel::Le || r == Rel::Eq || r == Rel::Lt) {
            st.data_bound = std::max(st.data_bound, std::min<uint64_t>(proven, kMaxDataSize));
          }
        }
        return st;
      };
      const bool can_take = possible(taken_rel);
      const bool can_fall = possible(negate(taken_rel));
      if (can_take) propagate(pc, taken_pc, refined(taken_rel, s));
      if (can_fall) propagate(pc, fall_pc, refined(negate(taken_rel), std::move(s)));
      return;
    }

    if (a.kind == RegKind::DataAddr && b.kind == RegKind::DataAddr && !is_signed(code)) {
      propagate(pc, taken_pc, s);
      propagate(pc, fall_pc, std::move(s));
      return;
    }

    fail(VerifyErrc::TypeMismatch, pc,
         "cannot compare " + std::string(to_string(a.kind)) + " with " + std::string(to_string(b.kind)),
         a.is_pointer() ? in.dst : in.src);
  }

  // --- calls ---------------------------------------------------------------

  void call(std::size_t pc, AbstractState& s, const Instruction& in) {
    const HelperSignature* h = find_helper(helpers_, in.imm);
    if (!h) fail(VerifyErrc::BadHelper, pc, "no helper with this id", -1, MemRegion::None, in.imm);
    for (int r = 1; r <= h->arity; ++r) {
      const RegState& arg = use(s, static_cast<uint8_t>(r), pc);
      if (!arg.is_scalar()) {
        fail(VerifyErrc::BadHelper, pc,
             std::string(h->name) + " argument r" + std::to_string(r) + " must be a scalar", r,
             MemRegion::None, in.imm);
      }
    }
    used_helpers_.insert(h->id);
    s.regs[0] = RegState::unknown();
    for (int r = 1; r <= 5; ++r) s.regs[r] = RegState{};
    if (h->invalidates_data) {
      for (auto& r : s.regs) {
        if (r.kind == RegKind::DataAddr || r.kind == RegKind::DataEndAddr) r = RegState::invalidated();
      }
      s.data_bound = 0;
    }
  }

  const Program& p_;
  VerifyLimits limits_;
  std::span<const HelperSignature> helpers_;
  std::vector<bool> continuation_;
  std::vector<std::optional<AbstractState>> in_;
  std::vector<MemRegion> regions_;
  std::vector<std::optional<uint64_t>> bounds_;
  std::size_t states_ = 0;
  std::size_t max_path_ = 0;
  std::set<int32_t> used_helpers_;
};

// Proves p safe or throws VerifyError. p must satisfy validate_program().
inline VerifiedProgram verify(const Program& p, const VerifyLimits& limits = {},
                              std::span<const HelperSignature> helpers = kStandardHelpers) {
  return VerifierEngine(p, limits, helpers).run();
}

}  // namespace bpfstore
