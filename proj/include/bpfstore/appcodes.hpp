#pragma once

// The shipped workloads: key-value increment, unrolled binary search and
// column-metadata filtering. Each source is generated here and also checked
// in under appcode/.

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bpfstore/assembler.hpp"
#include "bpfstore/bytecode.hpp"

namespace bpfstore::appcode {

inline constexpr uint32_t kStatusOk = 0;
inline constexpr uint32_t kStatusNoKey = 2;
inline constexpr uint32_t kStatusInval = 22;

// increment
inline constexpr std::size_t kMaxKeyLen = 32;
inline constexpr uint32_t kRecordHeader = 6;  // key_len u16, val_len u32
inline constexpr uint32_t kValueLen = 8;
inline constexpr uint32_t kIncrementScratch = 96;
inline constexpr uint32_t kIncrementRecordAt = 48;

// binary search
inline constexpr uint64_t kMaxSearchElems = 1u << 20;
inline constexpr uint32_t kSearchScratch = 32;

// meta filter
inline constexpr uint32_t kMaxFilterEntries = 64;
inline constexpr uint32_t kFilterSpecSize = 13;
inline constexpr uint32_t kMetaEntrySize = 32;
inline constexpr uint32_t kFilterCountAt = 16;
inline constexpr uint32_t kFilterIdsAt = 20;
inline constexpr uint32_t kFilterEntriesAt = kFilterIdsAt + 8 * kMaxFilterEntries;
inline constexpr uint32_t kFilterScratch = kFilterEntriesAt + kMetaEntrySize * kMaxFilterEntries;

namespace detail {

class Src {
 public:
  Src& line(const std::string& s) {
    text_ += "    " + s + "\n";
    return *this;
  }
  Src& label(const std::string& s) {
    text_ += s + ":\n";
    return *this;
  }
  Src& comment(const std::string& s) {
    text_ += "; " + s + "\n";
    return *this;
  }
  Src& blank() {
    text_ += "\n";
    return *this;
  }
  // r2 = data, r3 = data_end, then prove size bytes are in bounds.
  Src& reload_data(uint32_t size, const std::string& on_fail) {
    line("ldxdw r2, [r6+16]");
    line("ldxdw r3, [r6+24]");
    line("mov64 r4, r2");
    line("add64 r4, " + std::to_string(size));
    line("jgt r4, r3, " + on_fail);
    return *this;
  }
  std::string str() const { return text_; }

 private:
  std::string text_;
};

inline std::string n(uint64_t v) { return std::to_string(v); }

}  // namespace detail

// Payload: record_size (u32 le) + key. from: device offset of the record.
// Record: key_len (u16 le), val_len (u32 le), key, value (u64 le).
inline std::string increment_source() {
  detail::Src s;
  s.comment("increment: read a key-value record, compare the full key,")
      .comment("add one to its 8-byte value and write the record back.")
      .comment("  from    = device offset of the record")
      .comment("  payload = record_size (u32 le) + key (<= 32 bytes)")
      .comment("status: 0 ok, 2 key mismatch, 22 malformed, else helper errno")
      .blank();
  s.line("mov64 r6, r1");
  s.line("ldxw r7, [r6+4]");
  s.line("jlt r7, 4, inval");
  s.line("sub64 r7, 4                ; r7 = key length");
  s.line("jgt r7, " + detail::n(kMaxKeyLen) + ", inval");
  s.line("mov64 r1, " + detail::n(kIncrementScratch));
  s.line("call data_realloc");
  s.line("jne r0, 0, fail");
  s.reload_data(kIncrementScratch, "inval");
  s.line("ldxw r8, [r2+0]            ; r8 = record size");
  s.line("mov64 r4, r7");
  s.line("add64 r4, " + detail::n(kRecordHeader + kValueLen));
  s.line("jne r8, r4, inval");
  s.blank();
  s.line("ldxdw r1, [r6+8]");
  s.line("mov64 r2, " + detail::n(kIncrementRecordAt));
  s.line("mov64 r3, r8");
  s.line("call io_read");
  s.line("jne r0, 0, fail");
  s.reload_data(kIncrementScratch, "inval");
  s.line("ldxh r4, [r2+48]");
  s.line("jne r4, r7, nokey");
  s.line("ldxw r4, [r2+50]");
  s.line("jne r4, " + detail::n(kValueLen) + ", inval");
  s.blank();
  s.comment("key compare, unrolled");
  for (std::size_t i = 0; i < kMaxKeyLen; ++i) {
    s.line("jle r7, " + detail::n(i) + ", match");
    s.line("ldxb r4, [r2+" + detail::n(4 + i) + "]");
    s.line("ldxb r5, [r2+" + detail::n(kIncrementRecordAt + kRecordHeader + i) + "]");
    s.line("jne r4, r5, nokey");
  }
  s.blank();
  s.label("match");
  s.line("mov64 r3, r2");
  s.line("add64 r3, r7");
  s.line("ldxdw r4, [r3+" + detail::n(kIncrementRecordAt + kRecordHeader) + "]");
  s.line("add64 r4, 1");
  s.line("stxdw [r3+" + detail::n(kIncrementRecordAt + kRecordHeader) + "], r4");
  s.line("ldxdw r1, [r6+8]");
  s.line("mov64 r2, " + detail::n(kIncrementRecordAt));
  s.line("mov64 r3, r8");
  s.line("call io_write");
  s.line("jne r0, 0, fail");
  s.line("mov64 r0, 0");
  s.line("exit");
  s.label("nokey");
  s.line("mov64 r0, " + detail::n(kStatusNoKey));
  s.line("exit");
  s.label("inval");
  s.line("mov64 r0, " + detail::n(kStatusInval));
  s.line("exit");
  s.label("fail");
  s.line("neg64 r0");
  s.line("exit");
  return s.str();
}

// Payload: target (u64 le) + element count (u64 le, power of two in
// [2, 2^20]). from: device offset of a sorted array of u64 le values.
// Reply: 8-byte index of the first element equal to target, or ~0.
//
// Probes a[lo+h-1] for h = N/2 .. 2, then one 16-byte read of a[lo], a[lo+1]
// settles the last level and the equality test: log2(N) device reads.
inline std::string binary_search_source() {
  detail::Src s;
  s.comment("binary search over a sorted on-device array of u64 le values.")
      .comment("  from    = device offset of a[0]")
      .comment("  payload = target (u64 le) + N (u64 le, power of two, 2 <= N <= 2^20)")
      .comment("reply: index of the first a[i] == target, or 0xffffffffffffffff")
      .comment("status: 0 ok, 22 malformed, else helper errno")
      .blank();
  s.line("mov64 r6, r1");
  s.line("ldxw r2, [r6+4]");
  s.line("jlt r2, 16, inval");
  s.line("mov64 r1, " + detail::n(kSearchScratch));
  s.line("call data_realloc");
  s.line("jne r0, 0, fail");
  s.reload_data(kSearchScratch, "inval");
  s.line("ldxdw r9, [r2+8]           ; r9 = N");
  s.line("jlt r9, 2, inval");
  s.line("jgt r9, " + detail::n(kMaxSearchElems) + ", inval");
  s.line("mov64 r4, r9");
  s.line("sub64 r4, 1");
  s.line("and64 r4, r9");
  s.line("jne r4, 0, inval");
  s.line("ldxdw r8, [r6+8]           ; r8 = array base");
  s.line("mov64 r7, 0                ; r7 = lo");
  for (uint64_t h = kMaxSearchElems / 2; h >= 2; h /= 2) {
    const std::string next = "l" + detail::n(h);
    s.blank();
    s.line("jle r9, " + detail::n(h) + ", " + next);
    s.line("mov64 r1, r7");
    s.line("add64 r1, " + detail::n(h - 1));
    s.line("lsh64 r1, 3");
    s.line("add64 r1, r8");
    s.line("mov64 r2, 16");
    s.line("mov64 r3, 8");
    s.line("call io_read");
    s.line("jne r0, 0, fail");
    s.reload_data(kSearchScratch, "inval");
    s.line("ldxdw r4, [r2+16]");
    s.line("ldxdw r5, [r2+0]");
    s.line("jge r4, r5, " + next);
    s.line("add64 r7, " + detail::n(h));
    s.label(next);
  }
  s.blank();
  s.line("mov64 r1, r7");
  s.line("lsh64 r1, 3");
  s.line("add64 r1, r8");
  s.line("mov64 r2, 16");
  s.line("mov64 r3, 16");
  s.line("call io_read");
  s.line("jne r0, 0, fail");
  s.reload_data(kSearchScratch, "inval");
  s.line("ldxdw r5, [r2+0]");
  s.line("ldxdw r4, [r2+16]");
  s.line("jeq r4, r5, found");
  s.line("ldxdw r4, [r2+24]");
  s.line("jeq r4, r5, found_next");
  s.line("mov64 r4, -1");
  s.line("ja done");
  s.label("found_next");
  s.line("add64 r7, 1");
  s.label("found");
  s.line("mov64 r4, r7");
  s.label("done");
  s.line("stxdw [r2+0], r4");
  s.line("mov64 r1, 0");
  s.line("mov64 r2, 8");
  s.line("call reply_set");
  s.line("jne r0, 0, fail");
  s.line("mov64 r0, 0");
  s.line("exit");
  s.label("inval");
  s.line("mov64 r0, " + detail::n(kStatusInval));
  s.line("exit");
  s.label("fail");
  s.line("neg64 r0");
  s.line("exit");
  return s.str();
}

enum class FilterOp : uint8_t { Eq = 0, Lt = 1, Gt = 2, Le = 3, Ge = 4 };

// Payload: op (u8), value (i64 le), entry count (u32 le, <= 64); 13 bytes.
// from: device offset of entry_count 32-byte MetaEntry records.
// Reply: match count (u32 le) + matching block ids (u64 le each).
//
// Every predicate is rewritten as min <= A && max >= B (signed).
inline std::string meta_filter_source() {
  detail::Src s;
  s.comment("column metadata filter: return the ids of blocks whose [min, max]")
      .comment("can satisfy one predicate.")
      .comment("  from    = device offset of the MetaEntry array")
      .comment("  payload = op (u8: eq lt gt le ge) + value (i64 le) + count (u32 le, <= 64)")
      .comment("  entry   = id (u64) + min (i64) + max (i64) + flags (u64, bit 0 = all null)")
      .comment("reply: match count (u32 le) + ids (u64 le)")
      .comment("status: 0 ok, 22 malformed, else helper errno")
      .blank();
  s.line("mov64 r6, r1");
  s.line("ldxw r2, [r6+4]");
  s.line("jlt r2, " + detail::n(kFilterSpecSize) + ", inval");
  s.line("mov64 r1, " + detail::n(kFilterScratch));
  s.line("call data_realloc");
  s.line("jne r0, 0, fail");
  s.reload_data(kFilterScratch, "inval");
  s.line("ldxb r4, [r2+0]");
  s.line("jgt r4, 4, inval");
  s.line("ldxw r9, [r2+9]            ; r9 = entry count");
  s.line("jgt r9, " + detail::n(kMaxFilterEntries) + ", inval");
  s.line("jeq r9, 0, loaded");
  s.line("ldxdw r1, [r6+8]");
  s.line("mov64 r2, " + detail::n(kFilterEntriesAt));
  s.line("mov64 r3, r9");
  s.line("lsh64 r3, 5");
  s.line("call io_read");
  s.line("jne r0, 0, fail");
  s.label("loaded");
  s.reload_data(kFilterScratch, "inval");
  s.line("mov64 r4, 0                ; r4 = matches");
  s.line("ldxb r3, [r2+0]");
  s.line("ldxdw r5, [r2+1]");
  s.line("lddw r8, 0x8000000000000000");
  s.line("lddw r7, 0x7fffffffffffffff");
  s.line("jeq r3, 0, op_eq");
  s.line("jeq r3, 1, op_lt");
  s.line("jeq r3, 2, op_gt");
  s.line("jeq r3, 3, op_le");
  s.comment("ge: max >= v");
  s.line("mov64 r8, r5");
  s.line("ja scan");
  s.label("op_eq");
  s.line("mov64 r7, r5");
  s.line("mov64 r8, r5");
  s.line("ja scan");
  s.label("op_lt");
  s.line("jeq r5, r8, finish");
  s.line("mov64 r7, r5");
  s.line("sub64 r7, 1");
  s.line("ja scan");
  s.label("op_gt");
  s.line("jeq r5, r7, finish");
  s.line("mov64 r8, r5");
  s.line("add64 r8, 1");
  s.line("ja scan");
  s.label("op_le");
  s.line("mov64 r7, r5");
  s.blank();
  s.label("scan");
  s.line("mov64 r5, r2");
  s.line("add64 r5, " + detail::n(kFilterIdsAt) + "           ; r5 = output cursor");
  for (uint32_t i = 0; i < kMaxFilterEntries; ++i) {
    const uint32_t at = kFilterEntriesAt + kMetaEntrySize * i;
    const std::string next = i + 1 < kMaxFilterEntries ? "e" + detail::n(i + 1) : "finish";
    s.label("e" + detail::n(i));
    s.line("jle r9, " + detail::n(i) + ", finish");
    s.line("ldxdw r3, [r2+" + detail::n(at + 24) + "]");
    s.line("and64 r3, 1");
    s.line("jne r3, 0, " + next);
    s.line("ldxdw r3, [r2+" + detail::n(at + 8) + "]");
    s.line("jsgt r3, r7, " + next);
    s.line("ldxdw r3, [r2+" + detail::n(at + 16) + "]");
    s.line("jslt r3, r8, " + next);
    s.line("ldxdw r3, [r2+" + detail::n(at) + "]");
    s.line("stxdw [r5+0], r3");
    s.line("add64 r5, 8");
    s.line("add64 r4, 1");
  }
  s.blank();
  s.label("finish");
  s.line("stxw [r2+" + detail::n(kFilterCountAt) + "], r4");
  s.line("mov64 r2, r4");
  s.line("lsh64 r2, 3");
  s.line("add64 r2, 4");
  s.line("mov64 r1, " + detail::n(kFilterCountAt));
  s.line("call reply_set");
  s.line("jne r0, 0, fail");
  s.line("mov64 r0, 0");
  s.line("exit");
  s.label("inval");
  s.line("mov64 r0, " + detail::n(kStatusInval));
  s.line("exit");
  s.label("fail");
  s.line("neg64 r0");
  s.line("exit");
  return s.str();
}

inline Program increment() { return assemble(increment_source()); }
inline Program binary_search() { return assemble(binary_search_source()); }
inline Program meta_filter() { return assemble(meta_filter_source()); }

namespace le {

inline void put(std::vector<uint8_t>& out, uint64_t v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

inline uint64_t get(std::span<const uint8_t> in, std::size_t at, std::size_t n) {
  uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v |= static_cast<uint64_t>(in[at + i]) << (8 * i);
  return v;
}

}  // namespace le

struct KvRecord {
  std::vector<uint8_t> key;
  uint64_t value = 0;

  uint32_t size() const { return kRecordHeader + static_cast<uint32_t>(key.size()) + kValueLen; }
};

inline std::vector<uint8_t> encode_record(const KvRecord& r) {
  std::vector<uint8_t> out;
  le::put(out, r.key.size(), 2);
  le::put(out, kValueLen, 4);
  out.insert(out.end(), r.key.begin(), r.key.end());
  le::put(out, r.value, 8);
  return out;
}

inline std::vector<uint8_t> increment_payload(uint32_t record_size, std::span<const uint8_t> key) {
  std::vector<uint8_t> out;
  le::put(out, record_size, 4);
  out.insert(out.end(), key.begin(), key.end());
  return out;
}

inline std::vector<uint8_t> binary_search_payload(uint64_t target, uint64_t count) {
  std::vector<uint8_t> out;
  le::put(out, target, 8);
  le::put(out, count, 8);
  return out;
}

inline constexpr uint64_t kNotFound = ~0ull;

struct FilterSpec {
  uint8_t op = 0;  // FilterOp, kept raw so malformed specs can be expressed
  int64_t value = 0;
  uint32_t count = 0;
};

inline std::vector<uint8_t> encode_filter(const FilterSpec& f) {
  std::vector<uint8_t> out;
  le::put(out, f.op, 1);
  le::put(out, static_cast<uint64_t>(f.value), 8);
  le::put(out, f.count, 4);
  return out;
}

struct MetaEntry {
  uint64_t id = 0;
  int64_t min = 0;
  int64_t max = 0;
  uint64_t flags = 0;

  bool all_null() const { return flags & 1; }
};

inline std::vector<uint8_t> encode_entries(std::span<const MetaEntry> entries) {
  std::vector<uint8_t> out;
  out.reserve(entries.size() * kMetaEntrySize);
  for (const auto& e : entries) {
    le::put(out, e.id, 8);
    le::put(out, static_cast<uint64_t>(e.min), 8);
    le::put(out, static_cast<uint64_t>(e.max), 8);
    le::put(out, e.flags, 8);
  }
  return out;
}

inline std::vector<MetaEntry> decode_entries(std::span<const uint8_t> bytes) {
  std::vector<MetaEntry> out(bytes.size() / kMetaEntrySize);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t at = i * kMetaEntrySize;
    out[i] = {le::get(bytes, at, 8), static_cast<int64_t>(le::get(bytes, at + 8, 8)),
              static_cast<int64_t>(le::get(bytes, at + 16, 8)), le::get(bytes, at + 24, 8)};
  }
  return out;
}

// Reply payload of meta_filter: count followed by ids.
inline std::vector<uint64_t> decode_filter_reply(std::span<const uint8_t> reply) {
  if (reply.size() < 4) throw std::invalid_argument("filter reply shorter than 4 bytes");
  const uint64_t count = le::get(reply, 0, 4);
  if (reply.size() != 4 + 8 * count) throw std::invalid_argument("filter reply length does not match count");
  std::vector<uint64_t> ids(count);
  for (std::size_t i = 0; i < count; ++i) ids[i] = le::get(reply, 4 + 8 * i, 8);
  return ids;
}

}  // namespace bpfstore::appcode
