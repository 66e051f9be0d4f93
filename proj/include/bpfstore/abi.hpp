#pragma once

// Contract between appcode, the verifier and the VM: context layout,
// helper ids, memory regions and helper error codes.

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace bpfstore {

// Context image seen by appcode (read-only, little-endian).
namespace ctx_layout {
inline constexpr int64_t kType = 0;      // u32
inline constexpr int64_t kLen = 4;       // u32
inline constexpr int64_t kFrom = 8;      // u64
inline constexpr int64_t kData = 16;     // data base address
inline constexpr int64_t kDataEnd = 24;  // data end address
inline constexpr int64_t kSize = 32;
}  // namespace ctx_layout

inline constexpr int64_t kStackSize = 512;

// Largest data region a request may grow to.
inline constexpr uint64_t kMaxDataSize = 1u << 20;

enum class MemRegion : uint8_t { None, Ctx, Data, Stack };

inline std::string_view to_string(MemRegion r) {
  switch (r) {
    case MemRegion::None: return "none";
    case MemRegion::Ctx: return "ctx";
    case MemRegion::Data: return "data";
    case MemRegion::Stack: return "stack";
  }
  return "?";
}

// Runtime values of pointer registers. Each region lives in its own
// address window; the verifier never lets these values escape into scalars.
namespace vm_base {
inline constexpr uint64_t kCtx = 0x0000'1000'0000'0000ull;
inline constexpr uint64_t kData = 0x0000'2000'0000'0000ull;
inline constexpr uint64_t kStack = 0x0000'3000'0000'0000ull;
inline constexpr uint64_t kFramePointer = kStack + kStackSize;
}  // namespace vm_base

// Helper error returns, errno-style negatives.
inline constexpr int64_t kErrIo = -5;
inline constexpr int64_t kErrNoMem = -12;
inline constexpr int64_t kErrInval = -22;

enum class HelperId : int32_t {
  DataRealloc = 1,
  IoRead = 2,
  IoWrite = 3,
  ReplySet = 4,
};

struct HelperSignature {
  int32_t id;
  std::string_view name;
  int arity;               // scalar arguments in r1..r<arity>
  bool invalidates_data;   // data pointers are dangling after the call
};

inline constexpr std::array<HelperSignature, 4> kStandardHelpers = {{
    {static_cast<int32_t>(HelperId::DataRealloc), "data_realloc", 1, true},
    {static_cast<int32_t>(HelperId::IoRead), "io_read", 3, false},
    {static_cast<int32_t>(HelperId::IoWrite), "io_write", 3, false},
    {static_cast<int32_t>(HelperId::ReplySet), "reply_set", 2, false},
}};

inline const HelperSignature* find_helper(std::span<const HelperSignature> set, int32_t id) {
  auto it = std::find_if(set.begin(), set.end(), [id](const auto& h) { return h.id == id; });
  return it == set.end() ? nullptr : &*it;
}

inline const HelperSignature* find_helper(std::span<const HelperSignature> set,
                                          std::string_view name) {
  auto it =
      std::find_if(set.begin(), set.end(), [name](const auto& h) { return h.name == name; });
  return it == set.end() ? nullptr : &*it;
}

}  // namespace bpfstore
