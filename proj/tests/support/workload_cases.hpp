#pragma once

// Randomized end-to-end cases for the three appcodes. Each case runs the
// appcode through the server, the READ/WRITE oracle through the same
// server, and a direct computation over the bytes the test wrote.

#include <climits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bpfstore/appcodes.hpp"
#include "bpfstore/client.hpp"
#include "bpfstore/oracles.hpp"

namespace cases {

using namespace bpfstore;
using namespace bpfstore::appcode;

struct Report {
  uint64_t cases = 0;
  uint64_t mismatches = 0;
  std::string first_mismatch;
  // outcome mix
  uint64_t ok = 0, nokey = 0, inval = 0;
  uint64_t found = 0, absent = 0, nonempty = 0;

  void mismatch(const std::string& what) {
    ++mismatches;
    if (first_mismatch.empty()) first_mismatch = "case " + std::to_string(cases) + ": " + what;
  }
};

namespace detail {

inline std::string hex(std::span<const uint8_t> b) {
  std::ostringstream o;
  for (uint8_t x : b) o << "0123456789abcdef"[x >> 4] << "0123456789abcdef"[x & 15];
  return o.str();
}

inline uint64_t u64le(std::span<const uint8_t> b, std::size_t at) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[at + static_cast<std::size_t>(i)];
  return v;
}

}  // namespace detail

// Expected outcome computed straight from the record bytes on the device.
inline uint32_t expected_increment(std::vector<uint8_t>& rec, uint64_t dev_size, uint64_t from,
                                   std::span<const uint8_t> payload) {
  if (payload.size() < 4 || payload.size() - 4 > 32) return 22;
  const std::size_t klen = payload.size() - 4;
  const uint32_t rsize = payload[0] | payload[1] << 8 | payload[2] << 16 | static_cast<uint32_t>(payload[3]) << 24;
  if (rsize != 14 + klen) return 22;
  if (from > dev_size || rsize > dev_size - from) return 22;
  if ((rec[0] | rec[1] << 8) != static_cast<int>(klen)) return 2;
  if (rec[2] != 8 || rec[3] || rec[4] || rec[5]) return 22;
  for (std::size_t i = 0; i < klen; ++i) {
    if (rec[6 + i] != payload[4 + i]) return 2;
  }
  uint64_t v = detail::u64le(rec, 6 + klen) + 1;
  for (std::size_t i = 0; i < 8; ++i, v >>= 8) rec[6 + klen + i] = static_cast<uint8_t>(v);
  return 0;
}

inline Report increment(Session& s, uint64_t seed, uint64_t count) {
  std::mt19937_64 rng(seed);
  Report rep;
  const uint32_t type = s.register_appcode(appcode::increment());
  const uint64_t dev = s.export_size();
  const uint64_t half = dev / 2;
  for (; rep.cases < count; ++rep.cases) {
    const std::size_t klen = rng() % 33;
    std::vector<uint8_t> key(klen);
    for (auto& b : key) b = static_cast<uint8_t>('a' + rng() % 4);
    const uint64_t value = rng() % 8 == 0 ? ~0ull - rng() % 2 : rng();
    std::vector<uint8_t> rec = encode_record({key, value});
    rec.resize(rec.size() + 16);  // trailing bytes the call may over-read

    std::vector<uint8_t> call_key = key;
    uint32_t rsize = static_cast<uint32_t>(14 + klen);
    std::vector<uint8_t> payload;
    bool raw = false;
    uint64_t a = rng() % (half - 128), b = a + half;
    switch (rng() % 10) {
      case 0: case 1: case 2: break;
      case 3:
        if (klen) call_key[rng() % klen] ^= 1 + rng() % 3;
        break;
      case 4:  // different key length, sizes consistent with the call
        call_key.resize(rng() % 33);
        for (auto& c : call_key) c = static_cast<uint8_t>('a' + rng() % 4);
        rsize = static_cast<uint32_t>(14 + call_key.size());
        break;
      case 5: rsize += static_cast<uint32_t>(1 + rng() % 4) * (rng() % 2 ? 1u : -1u); break;
      case 6: rec[2 + rng() % 4] ^= static_cast<uint8_t>(1 + rng() % 255); break;
      case 7: call_key.assign(33 + rng() % 8, 'a'); rsize = static_cast<uint32_t>(14 + call_key.size()); break;
      case 8: payload.assign(rng() % 4, 0x0e); raw = true; break;
      default: a = dev - rng() % rsize; b = a; break;  // record runs past the end
    }
    if (!raw) payload = increment_payload(rsize, call_key);

    const bool in_range = a + rec.size() <= dev;
    if (in_range) {
      s.write(a, rec);
      if (b != a) s.write(b, rec);
    }
    std::vector<uint8_t> expect_rec = rec;
    const uint32_t want = expected_increment(expect_rec, dev, a, payload);

    const CallResult app = s.call(type, a, payload);
    const CallResult remote = oracle::remote_increment(s, b, payload);
    std::ostringstream why;
    if (app.status != want) why << "appcode status " << app.status << " want " << want << "; ";
    if (remote.status != want) why << "oracle status " << remote.status << " want " << want << "; ";
    if (!app.payload.empty() || !remote.payload.empty()) why << "unexpected reply payload; ";
    if (in_range) {
      const auto got_a = s.read(a, static_cast<uint32_t>(rec.size()));
      const auto got_b = b != a ? s.read(b, static_cast<uint32_t>(rec.size())) : got_a;
      if (got_a != expect_rec) why << "appcode device " << detail::hex(got_a) << " want " << detail::hex(expect_rec) << "; ";
      if (got_b != expect_rec) why << "oracle device " << detail::hex(got_b) << "; ";
    }
    if (!why.str().empty()) rep.mismatch(why.str() + " payload " + detail::hex(payload));
    if (want == 0) ++rep.ok;
    else if (want == 2) ++rep.nokey;
    else ++rep.inval;
  }
  return rep;
}

inline Report binary_search(Session& s, uint64_t seed, uint64_t count) {
  std::mt19937_64 rng(seed);
  Report rep;
  const uint32_t type = s.register_appcode(appcode::binary_search());
  const uint64_t dev = s.export_size();
  for (; rep.cases < count; ++rep.cases) {
    const uint64_t n = 1ull << (1 + rng() % 10);
    std::vector<uint64_t> a(n);
    uint64_t v = rng() % 4 == 0 ? ~0ull - 4 * n : rng() % 1000;
    for (auto& x : a) {
      v += rng() % 4;
      x = v;
    }
    uint64_t base = rng() % (dev - 8 * n);
    std::vector<uint8_t> bytes;
    for (uint64_t x : a) le::put(bytes, x, 8);
    s.write(base, bytes);

    uint64_t target = rng() % 2 ? a[rng() % n] : a.front() + rng() % (a.back() - a.front() + 3);
    std::vector<uint8_t> payload = binary_search_payload(target, n);
    bool valid = true;
    switch (rng() % 8) {
      case 0: {
        static const uint64_t bad[] = {0, 1, 3, 6, 1000, (1ull << 20) + 1, 1ull << 21, 1ull << 63};
        payload = binary_search_payload(target, bad[rng() % 8]);
        valid = false;
        break;
      }
      case 1:
        if (rng() % 2) {
          payload.resize(rng() % 16);
          valid = false;
        } else {
          payload.resize(16 + rng() % 8, 0xee);  // trailing bytes are ignored
        }
        break;
      case 2:
        if (rng() % 4 == 0) {
          base = dev - 15 + rng() % 64;  // every probe lands past the end
          valid = false;
        }
        break;
      default: break;
    }
    std::vector<uint8_t> want;
    uint32_t want_status = 22;
    if (valid) {
      uint64_t idx = kNotFound;
      for (uint64_t i = 0; i < n; ++i) {
        if (a[i] == target) {
          idx = i;
          break;
        }
      }
      le::put(want, idx, 8);
      want_status = 0;
      ++(idx == kNotFound ? rep.absent : rep.found);
    } else {
      ++rep.inval;
    }

    const CallResult app = s.call(type, base, payload);
    const CallResult remote = oracle::remote_binary_search(s, base, payload);
    std::ostringstream why;
    if (app.status != want_status || app.payload != want) {
      why << "appcode " << app.status << "/" << detail::hex(app.payload) << " want " << want_status << "/"
          << detail::hex(want) << "; ";
    }
    if (remote.status != want_status || remote.payload != want) {
      why << "oracle " << remote.status << "/" << detail::hex(remote.payload) << "; ";
    }
    if (!why.str().empty()) rep.mismatch(why.str() + "n=" + std::to_string(n) + " target=" + std::to_string(target));
  }
  return rep;
}

inline bool entry_can_match(const MetaEntry& e, uint8_t op, int64_t v) {
  if (e.flags & 1) return false;
  if (op == 0) return e.min <= v && e.max >= v;
  if (op == 1) return e.min < v;
  if (op == 2) return e.max > v;
  if (op == 3) return e.min <= v;
  return e.max >= v;
}

inline Report meta_filter(Session& s, uint64_t seed, uint64_t count) {
  std::mt19937_64 rng(seed);
  Report rep;
  const uint32_t type = s.register_appcode(appcode::meta_filter());
  const uint64_t dev = s.export_size();
  auto value = [&]() -> int64_t {
    switch (rng() % 12) {
      case 0: return INT64_MIN + static_cast<int64_t>(rng() % 2);
      case 1: return INT64_MAX - static_cast<int64_t>(rng() % 2);
      default: return static_cast<int64_t>(rng() % 121) - 60;
    }
  };
  for (; rep.cases < count; ++rep.cases) {
    const uint32_t n = static_cast<uint32_t>(rng() % 65);
    std::vector<MetaEntry> entries(n);
    for (auto& e : entries) {
      e.id = rng();
      int64_t x = value(), y = value();
      if (x > y) std::swap(x, y);
      e.min = x;
      e.max = y;
      e.flags = rng() % 10 == 0 ? 1 | (rng() & ~1ull) : rng() % 4 == 0 ? rng() & ~1ull : 0;
    }
    uint64_t from = rng() % (dev - 32 * 64);
    const auto bytes = encode_entries(entries);
    if (!bytes.empty()) s.write(from, bytes);

    FilterSpec spec{static_cast<uint8_t>(rng() % 5), value(), n};
    bool valid = true;
    std::vector<uint8_t> payload;
    switch (rng() % 10) {
      case 0: spec.op = static_cast<uint8_t>(5 + rng() % 251); valid = false; break;
      case 1: spec.count = 65 + static_cast<uint32_t>(rng() % 1000); valid = false; break;
      case 2:
        if (n > 0 && rng() % 3 == 0) {
          from = dev - 32 * n + 1 + rng() % 32;
          valid = false;
        }
        break;
      default: break;
    }
    payload = encode_filter(spec);
    if (rng() % 20 == 0) {
      payload.resize(rng() % 13);
      valid = false;
    }

    std::vector<uint8_t> want;
    uint32_t want_status = 22;
    if (valid) {
      std::vector<uint64_t> ids;
      for (const auto& e : entries) {
        if (entry_can_match(e, spec.op, spec.value)) ids.push_back(e.id);
      }
      le::put(want, ids.size(), 4);
      for (uint64_t id : ids) le::put(want, id, 8);
      want_status = 0;
      if (!ids.empty()) ++rep.nonempty;
    } else {
      ++rep.inval;
    }

    const CallResult app = s.call(type, from, payload);
    const CallResult remote = oracle::remote_meta_filter(s, from, payload);
    std::ostringstream why;
    if (app.status != want_status || app.payload != want) {
      why << "appcode " << app.status << "/" << detail::hex(app.payload) << " want " << want_status << "/"
          << detail::hex(want) << "; ";
    }
    if (remote.status != want_status || remote.payload != want) {
      why << "oracle " << remote.status << "/" << detail::hex(remote.payload) << "; ";
    }
    if (!why.str().empty()) {
      rep.mismatch(why.str() + "op=" + std::to_string(spec.op) + " v=" + std::to_string(spec.value) +
                   " n=" + std::to_string(n));
    }
  }
  return rep;
}

}  // namespace cases
