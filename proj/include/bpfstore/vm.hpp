#pragma once

// Interpreter for verified appcode and the storage helpers it may call.

#include <array>
#include <cstdint>
#include <cstring>
#include <functional>
#include <new>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bpfstore/abi.hpp"
#include "bpfstore/bytecode.hpp"
#include "bpfstore/device.hpp"
#include "bpfstore/verifier.hpp"

namespace bpfstore {

struct ReplyRegion {
  uint32_t offset = 0;
  uint32_t length = 0;
};

// Execution context of one appcode invocation. The data region's size is
// the context's len field.
struct AppContext {
  uint32_t req_type = 0;
  uint64_t from = 0;
  std::vector<uint8_t> data;
  std::optional<ReplyRegion> reply;
  Device* device = nullptr;

  uint32_t len() const { return static_cast<uint32_t>(data.size()); }

  std::span<const uint8_t> reply_bytes() const {
    if (!reply) return {};
    return std::span<const uint8_t>(data).subspan(reply->offset, reply->length);
  }
};

namespace detail {

inline bool fits(uint64_t offset, uint64_t len, uint64_t size) {
  return offset <= size && len <= size - offset;
}

}  // namespace detail

inline int64_t helper_data_realloc(AppContext& ctx, uint64_t new_size) {
  if (new_size > kMaxDataSize) return kErrInval;
  try {
    ctx.data.resize(static_cast<std::size_t>(new_size), 0);
  } catch (const std::bad_alloc&) {
    return kErrNoMem;
  }
  if (ctx.reply && !detail::fits(ctx.reply->offset, ctx.reply->length, ctx.data.size())) {
    ctx.reply.reset();
  }
  return 0;
}

inline int64_t helper_io_read(AppContext& ctx, uint64_t dev_off, uint64_t data_off, uint64_t size) {
  if (size == 0 || !detail::fits(data_off, size, ctx.data.size())) return kErrInval;
  if (ctx.device == nullptr) return kErrIo;
  if (!ctx.device->in_range(dev_off, size)) return kErrInval;
  try {
    ctx.device->read(dev_off, std::span<uint8_t>(ctx.data).subspan(data_off, size));
  } catch (const std::exception&) {
    return kErrIo;
  }
  return 0;
}

inline int64_t helper_io_write(AppContext& ctx, uint64_t dev_off, uint64_t data_off, uint64_t size) {
  if (size == 0 || !detail::fits(data_off, size, ctx.data.size())) return kErrInval;
  if (ctx.device == nullptr) return kErrIo;
  if (!ctx.device->in_range(dev_off, size)) return kErrInval;
  try {
    ctx.device->write(dev_off, std::span<const uint8_t>(ctx.data).subspan(data_off, size));
  } catch (const std::exception&) {
    return kErrIo;
  }
  return 0;
}

inline int64_t helper_reply_set(AppContext& ctx, uint64_t data_off, uint64_t size) {
  if (!detail::fits(data_off, size, ctx.data.size())) return kErrInval;
  ctx.reply = ReplyRegion{static_cast<uint32_t>(data_off), static_cast<uint32_t>(size)};
  return 0;
}

using HelperArgs = std::array<uint64_t, 5>;
using HelperFn = std::function<int64_t(AppContext&, const HelperArgs&)>;

struct HelperEntry {
  HelperSignature signature;
  HelperFn impl;
};

// Helper id -> implementation. Fixed once the server starts.
class HelperTable {
 public:
  explicit HelperTable(std::vector<HelperEntry> entries) : entries_(std::move(entries)) {
    for (const auto& e : entries_) {
      signatures_.push_back(e.signature);
      auto id = static_cast<std::size_t>(e.signature.id);
      if (index_.size() <= id) index_.resize(id + 1, -1);
      index_[id] = static_cast<int>(&e - entries_.data());
    }
  }

  static const HelperTable& standard() {
    static const HelperTable table({
        {kStandardHelpers[0], [](AppContext& c, const HelperArgs& a) { return helper_data_realloc(c, a[0]); }},
        {kStandardHelpers[1], [](AppContext& c, const HelperArgs& a) { return helper_io_read(c, a[0], a[1], a[2]); }},
        {kStandardHelpers[2], [](AppContext& c, const HelperArgs& a) { return helper_io_write(c, a[0], a[1], a[2]); }},
        {kStandardHelpers[3], [](AppContext& c, const HelperArgs& a) { return helper_reply_set(c, a[0], a[1]); }},
    });
    return table;
  }

  const HelperEntry* find(int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= index_.size() || index_[id] < 0) return nullptr;
    return &entries_[static_cast<std::size_t>(index_[id])];
  }

  std::span<const HelperSignature> signatures() const { return signatures_; }

 private:
  std::vector<HelperEntry> entries_;
  std::vector<HelperSignature> signatures_;
  std::vector<int> index_;
};

enum class VmFaultKind { InternalLimit, MemoryFault };

// Raised only if a verified program misbehaves, which means a verifier bug.
class VmFault : public std::runtime_error {
 public:
  VmFault(VmFaultKind kind, std::size_t pc, const std::string& what)
      : std::runtime_error("vm fault at pc=" + std::to_string(pc) + ": " + what), kind_(kind), pc_(pc) {}

  VmFaultKind kind() const { return kind_; }
  std::size_t pc() const { return pc_; }

 private:
  VmFaultKind kind_;
  std::size_t pc_;
};

// Test hooks. on_access runs before the VM's own bounds check.
class ExecutionObserver {
 public:
  virtual ~ExecutionObserver() = default;
  virtual void on_instruction(std::size_t /*pc*/) {}
  virtual void on_access(MemRegion /*region*/, int64_t /*offset*/, std::size_t /*size*/, bool /*write*/,
                         uint64_t /*region_size*/) {}
};

struct ExecutionResult {
  std::array<uint64_t, kNumRegisters> regs{};
  uint64_t executed = 0;

  uint32_t status() const { return static_cast<uint32_t>(regs[0]); }
};

namespace detail {

class Interpreter {
 public:
  Interpreter(const VerifiedProgram& vp, AppContext& ctx, const HelperTable& helpers,
              ExecutionObserver* observer)
      : vp_(vp), p_(vp.program()), ctx_(ctx), helpers_(helpers), obs_(observer) {}

  ExecutionResult run() {
    ExecutionResult res;
    auto& r = res.regs;
    r[1] = vm_base::kCtx;
    r[kFrameRegister] = vm_base::kFramePointer;
    const uint64_t fuse = vp_.max_path_len();
    std::size_t pc = 0;
    while (true) {
      if (pc >= p_.size()) throw VmFault(VmFaultKind::InternalLimit, pc, "pc left the program");
      if (++res.executed > fuse) throw VmFault(VmFaultKind::InternalLimit, pc, "instruction fuse blown");
      if (obs_) obs_->on_instruction(pc);
      const Instruction& in = p_[pc];
      const uint8_t code = op::alu_code(in.opcode);
      switch (lookup_opcode(in.opcode)->form) {
        case Form::AluImm:
          r[in.dst] = alu64(code, r[in.dst], sign_extend(in.imm));
          break;
        case Form::AluReg:
          r[in.dst] = alu64(code, r[in.dst], r[in.src]);
          break;
        case Form::Neg:
          r[in.dst] = alu64(op::kNeg, r[in.dst], 0);
          break;
        case Form::Lddw:
          r[in.dst] = p_.wide_imm(pc);
          ++pc;
          break;
        case Form::Ldx: {
          const std::size_t size = op::access_size(in.opcode);
          const uint8_t* src = resolve(pc, r[in.src] + sign_extend(in.offset), size, false);
          uint64_t v = 0;
          for (std::size_t i = 0; i < size; ++i) v |= static_cast<uint64_t>(src[i]) << (8 * i);
          r[in.dst] = v;
          break;
        }
        case Form::St:
        case Form::Stx: {
          const std::size_t size = op::access_size(in.opcode);
          uint8_t* dst = resolve(pc, r[in.dst] + sign_extend(in.offset), size, true);
          const uint64_t v = lookup_opcode(in.opcode)->form == Form::St ? sign_extend(in.imm) : r[in.src];
          for (std::size_t i = 0; i < size; ++i) dst[i] = static_cast<uint8_t>(v >> (8 * i));
          break;
        }
        case Form::Ja:
          pc += static_cast<std::size_t>(static_cast<int64_t>(in.offset));
          break;
        case Form::JmpImm:
          if (jump_taken(code, r[in.dst], sign_extend(in.imm))) pc += static_cast<std::size_t>(static_cast<int64_t>(in.offset));
          break;
        case Form::JmpReg:
          if (jump_taken(code, r[in.dst], r[in.src])) pc += static_cast<std::size_t>(static_cast<int64_t>(in.offset));
          break;
        case Form::Call: {
          const HelperEntry* h = helpers_.find(in.imm);
          if (!h) throw VmFault(VmFaultKind::InternalLimit, pc, "unknown helper " + std::to_string(in.imm));
          const HelperArgs args{r[1], r[2], r[3], r[4], r[5]};
          r[0] = static_cast<uint64_t>(h->impl(ctx_, args));
          for (int i = 1; i <= 5; ++i) r[i] = 0;
          break;
        }
        case Form::Exit:
          return res;
      }
      ++pc;
    }
  }

 private:
  uint8_t* resolve(std::size_t pc, uint64_t addr, std::size_t size, bool write) {
    const MemRegion region = vp_.access_region(pc);
    uint64_t base = 0;
    uint8_t* mem = nullptr;
    uint64_t region_size = 0;
    switch (region) {
      case MemRegion::Ctx:
        refresh_ctx_image();
        base = vm_base::kCtx;
        mem = ctx_image_.data();
        region_size = ctx_image_.size();
        break;
      case MemRegion::Data:
        base = vm_base::kData;
        mem = ctx_.data.data();
        region_size = ctx_.data.size();
        break;
      case MemRegion::Stack:
        base = vm_base::kStack;
        mem = stack_.data();
        region_size = stack_.size();
        break;
      case MemRegion::None:
        throw VmFault(VmFaultKind::MemoryFault, pc, "memory access without a verified region");
    }
    const auto offset = static_cast<int64_t>(addr - base);
    if (obs_) obs_->on_access(region, offset, size, write, region_size);
    if (offset < 0 || !fits(static_cast<uint64_t>(offset), size, region_size)) {
      throw VmFault(VmFaultKind::MemoryFault, pc,
                    "access at " + std::string(to_string(region)) + "+" + std::to_string(offset) +
                        " size " + std::to_string(size) + " outside region of " + std::to_string(region_size));
    }
    if (write && region == MemRegion::Ctx) throw VmFault(VmFaultKind::MemoryFault, pc, "ctx write");
    return mem + offset;
  }

  void refresh_ctx_image() {
    auto put = [this](int64_t at, uint64_t v, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) ctx_image_[static_cast<std::size_t>(at) + i] = static_cast<uint8_t>(v >> (8 * i));
    };
    put(ctx_layout::kType, ctx_.req_type, 4);
    put(ctx_layout::kLen, ctx_.len(), 4);
    put(ctx_layout::kFrom, ctx_.from, 8);
    put(ctx_layout::kData, vm_base::kData, 8);
    put(ctx_layout::kDataEnd, vm_base::kData + ctx_.data.size(), 8);
  }

  const VerifiedProgram& vp_;
  const Program& p_;
  AppContext& ctx_;
  const HelperTable& helpers_;
  ExecutionObserver* obs_;
  std::array<uint8_t, kStackSize> stack_{};
  std::array<uint8_t, ctx_layout::kSize> ctx_image_{};
};

}  // namespace detail

inline ExecutionResult run(const VerifiedProgram& vp, AppContext& ctx,
                           const HelperTable& helpers = HelperTable::standard(),
                           ExecutionObserver* observer = nullptr) {
  return detail::Interpreter(vp, ctx, helpers, observer).run();
}

// Runs vp to completion and returns the low 32 bits of r0.
inline uint32_t execute(const VerifiedProgram& vp, AppContext& ctx,
                        const HelperTable& helpers = HelperTable::standard()) {
  return run(vp, ctx, helpers).status();
}

}  // namespace bpfstore
