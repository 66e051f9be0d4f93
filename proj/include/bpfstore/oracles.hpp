#pragma once

// Host-side equivalents of the shipped appcodes. The remote_* variants use
// only plain READ/WRITE requests and double as the benchmark's remote path.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "bpfstore/appcodes.hpp"
#include "bpfstore/client.hpp"
#include "bpfstore/protocol.hpp"

namespace bpfstore::oracle {

inline bool filter_matches(const appcode::MetaEntry& e, appcode::FilterOp op, int64_t v) {
  if (e.all_null()) return false;
  switch (op) {
    case appcode::FilterOp::Eq: return e.min <= v && v <= e.max;
    case appcode::FilterOp::Lt: return e.min < v;
    case appcode::FilterOp::Gt: return e.max > v;
    case appcode::FilterOp::Le: return e.min <= v;
    case appcode::FilterOp::Ge: return e.max >= v;
  }
  return false;
}

inline std::vector<uint64_t> filter_ids(std::span<const appcode::MetaEntry> entries, appcode::FilterOp op,
                                        int64_t v) {
  std::vector<uint64_t> ids;
  for (const auto& e : entries) {
    if (filter_matches(e, op, v)) ids.push_back(e.id);
  }
  return ids;
}

// Index of the first element equal to target, or kNotFound.
inline uint64_t search_index(std::span<const uint64_t> sorted, uint64_t target) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), target);
  if (it == sorted.end() || *it != target) return appcode::kNotFound;
  return static_cast<uint64_t>(it - sorted.begin());
}

namespace detail {

inline uint32_t status_of(const ServerError& e) { return e.code(); }

inline CallResult fail(uint32_t status) { return {status, {}}; }

}  // namespace detail

// Read, compare, increment, write back: two round trips on success.
inline CallResult remote_increment(Session& s, uint64_t from, std::span<const uint8_t> payload) {
  using namespace appcode;
  if (payload.size() < 4) return detail::fail(kStatusInval);
  const std::size_t key_len = payload.size() - 4;
  if (key_len > kMaxKeyLen) return detail::fail(kStatusInval);
  const auto record_size = static_cast<uint32_t>(le::get(payload, 0, 4));
  if (record_size != kRecordHeader + key_len + kValueLen) return detail::fail(kStatusInval);
  std::vector<uint8_t> rec;
  try {
    rec = s.read(from, record_size);
  } catch (const ServerError& e) {
    return detail::fail(detail::status_of(e));
  }
  if (le::get(rec, 0, 2) != key_len) return detail::fail(kStatusNoKey);
  if (le::get(rec, 2, 4) != kValueLen) return detail::fail(kStatusInval);
  if (!std::equal(payload.begin() + 4, payload.end(), rec.begin() + kRecordHeader)) {
    return detail::fail(kStatusNoKey);
  }
  const std::size_t at = kRecordHeader + key_len;
  const uint64_t v = le::get(rec, at, 8) + 1;
  for (std::size_t i = 0; i < 8; ++i) rec[at + i] = static_cast<uint8_t>(v >> (8 * i));
  try {
    s.write(from, rec);
  } catch (const ServerError& e) {
    return detail::fail(detail::status_of(e));
  }
  return {kStatusOk, {}};
}

// Same probe sequence as the appcode, one READ per probe: log2(N) round trips.
inline CallResult remote_binary_search(Session& s, uint64_t base, std::span<const uint8_t> payload) {
  using namespace appcode;
  if (payload.size() < 16) return detail::fail(kStatusInval);
  const uint64_t target = le::get(payload, 0, 8);
  const uint64_t n = le::get(payload, 8, 8);
  if (n < 2 || n > kMaxSearchElems || (n & (n - 1)) != 0) return detail::fail(kStatusInval);
  try {
    uint64_t lo = 0;
    for (uint64_t h = n / 2; h >= 2; h /= 2) {
      const auto probe = s.read(base + 8 * (lo + h - 1), 8);
      if (le::get(probe, 0, 8) < target) lo += h;
    }
    const auto pair = s.read(base + 8 * lo, 16);
    uint64_t index = kNotFound;
    if (le::get(pair, 0, 8) == target) {
      index = lo;
    } else if (le::get(pair, 8, 8) == target) {
      index = lo + 1;
    }
    std::vector<uint8_t> reply;
    le::put(reply, index, 8);
    return {kStatusOk, std::move(reply)};
  } catch (const ServerError& e) {
    return detail::fail(detail::status_of(e));
  }
}

// One READ of the entry array, then a local scan.
inline CallResult remote_meta_filter(Session& s, uint64_t from, std::span<const uint8_t> payload) {
  using namespace appcode;
  if (payload.size() < kFilterSpecSize) return detail::fail(kStatusInval);
  const auto op = static_cast<uint8_t>(le::get(payload, 0, 1));
  const auto v = static_cast<int64_t>(le::get(payload, 1, 8));
  const auto count = static_cast<uint32_t>(le::get(payload, 9, 4));
  if (op > 4 || count > kMaxFilterEntries) return detail::fail(kStatusInval);
  std::vector<MetaEntry> entries;
  if (count > 0) {
    try {
      entries = decode_entries(s.read(from, count * kMetaEntrySize));
    } catch (const ServerError& e) {
      return detail::fail(detail::status_of(e));
    }
  }
  const auto ids = filter_ids(entries, static_cast<FilterOp>(op), v);
  std::vector<uint8_t> reply;
  le::put(reply, ids.size(), 4);
  for (uint64_t id : ids) le::put(reply, id, 8);
  return {kStatusOk, std::move(reply)};
}

}  // namespace bpfstore::oracle
