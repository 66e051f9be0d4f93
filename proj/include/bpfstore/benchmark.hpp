#pragma once

// Measures remote (READ/WRITE) against offloaded (one appcode call)
// execution of a workload over a live session.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "bpfstore/appcodes.hpp"
#include "bpfstore/client.hpp"
#include "bpfstore/latency.hpp"
#include "bpfstore/oracles.hpp"
#include "bpfstore/server.hpp"

namespace bpfstore {

struct BenchOptions {
  int iterations = 20;
  uint64_t fixture_offset = 0;  // device offset where fixtures are written
  uint64_t seed = 1;
};

struct BenchResult {
  Workload workload;
  int iterations = 0;
  double remote_us = 0;  // medians
  double offload_us = 0;
  double reduction = 0;
  uint64_t remote_round_trips = 0;  // per operation
  uint64_t offload_round_trips = 0;
};

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : (v[m - 1] + v[m]) / 2;
}

class RoundTripMeter {
 public:
  explicit RoundTripMeter(const Session& s) : s_(s) {}

  template <typename F>
  double time(F&& f) {
    const uint64_t before = s_.round_trips();
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    const uint64_t delta = s_.round_trips() - before;
    if (seen_ && delta != trips_) throw std::logic_error("round trips per operation are not constant");
    trips_ = delta;
    seen_ = true;
    return std::chrono::duration<double, std::micro>(t1 - t0).count();
  }

  uint64_t trips() const { return trips_; }

 private:
  const Session& s_;
  uint64_t trips_ = 0;
  bool seen_ = false;
};

inline void write_chunked(Session& s, uint64_t at, const std::vector<uint8_t>& bytes) {
  constexpr std::size_t kChunk = proto::kMaxPayload;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const std::size_t n = std::min(kChunk, bytes.size() - off);
    s.write(at + off, std::span<const uint8_t>(bytes).subspan(off, n));
  }
}

template <typename Remote, typename Offload>
BenchResult measure(Session& s, const Workload& w, int iterations, Remote&& remote, Offload&& offload) {
  RoundTripMeter rm(s), om(s);
  std::vector<double> rt, ot;
  remote();
  offload();
  for (int i = 0; i < iterations; ++i) {
    rt.push_back(rm.time(remote));
    ot.push_back(om.time(offload));
  }
  BenchResult r;
  r.workload = w;
  r.iterations = iterations;
  r.remote_us = median(rt);
  r.offload_us = median(ot);
  r.reduction = r.remote_us > 0 ? 1.0 - r.offload_us / r.remote_us : 0.0;
  r.remote_round_trips = rm.trips();
  r.offload_round_trips = om.trips();
  return r;
}

inline void expect_ok(const CallResult& r, const char* what) {
  if (r.status != 0) throw std::runtime_error(std::string(what) + " returned status " + std::to_string(r.status));
}

}  // namespace detail

// Writes its own fixtures at opts.fixture_offset and registers the appcode.
inline BenchResult run_benchmark(Session& s, const Workload& w, const BenchOptions& opts = {}) {
  if (opts.iterations < 10) throw std::invalid_argument("run_benchmark needs at least 10 iterations");
  const uint64_t base = opts.fixture_offset;
  if (w.kind == WorkloadKind::Increment) {
    const appcode::KvRecord rec{{'b', 'e', 'n', 'c', 'h'}, 0};
    s.write(base, appcode::encode_record(rec));
    const uint32_t type = s.register_appcode(appcode::increment());
    const auto payload = appcode::increment_payload(rec.size(), rec.key);
    return detail::measure(
        s, w, opts.iterations, [&] { detail::expect_ok(oracle::remote_increment(s, base, payload), "remote increment"); },
        [&] { detail::expect_ok(s.call(type, base, payload), "increment appcode"); });
  }

  const uint64_t n = w.elems;
  if (n < 2 || n > appcode::kMaxSearchElems || (n & (n - 1)) != 0) {
    throw std::invalid_argument("binary search benchmark needs a power of two in [2, 2^20]");
  }
  if (base + 8 * n > s.export_size()) throw std::invalid_argument("export too small for the search array");
  std::vector<uint8_t> array;
  array.reserve(8 * n);
  for (uint64_t i = 0; i < n; ++i) appcode::le::put(array, 3 * i + 1, 8);
  detail::write_chunked(s, base, array);
  const uint32_t type = s.register_appcode(appcode::binary_search());
  std::mt19937_64 rng(opts.seed);
  std::vector<uint8_t> payload;
  auto next_payload = [&] { payload = appcode::binary_search_payload(3 * (rng() % n) + 1, n); };
  next_payload();
  return detail::measure(
      s, w, opts.iterations,
      [&] {
        next_payload();
        detail::expect_ok(oracle::remote_binary_search(s, base, payload), "remote binary search");
      },
      [&] { detail::expect_ok(s.call(type, base, payload), "binary search appcode"); });
}

struct BenchRow {
  BenchResult measured;
  LatencyPrediction predicted;
};

inline std::string format_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "workload,iterations,predicted_remote_us,predicted_offload_us,predicted_reduction,"
         "measured_remote_us,measured_offload_us,measured_reduction,remote_round_trips,offload_round_trips\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{},{:.1f},{:.1f},{:.4f},{:.1f},{:.1f},{:.4f},{},{}\n", r.measured.workload.name(),
                       r.measured.iterations, r.predicted.remote_us, r.predicted.offload_us, r.predicted.reduction,
                       r.measured.remote_us, r.measured.offload_us, r.measured.reduction,
                       r.measured.remote_round_trips, r.measured.offload_round_trips);
  }
  return out.str();
}

inline std::string format_table(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << fmt::format("{:<22} {:>12} {:>12} {:>9} {:>12} {:>12} {:>9} {:>7}\n", "workload", "pred remote", "pred offl",
                     "pred red", "meas remote", "meas offl", "meas red", "trips");
  for (const auto& r : rows) {
    out << fmt::format("{:<22} {:>10.1f}us {:>10.1f}us {:>8.1f}% {:>10.1f}us {:>10.1f}us {:>8.1f}% {:>3}/{:<3}\n",
                       r.measured.workload.name(), r.predicted.remote_us, r.predicted.offload_us,
                       100 * r.predicted.reduction, r.measured.remote_us, r.measured.offload_us,
                       100 * r.measured.reduction, r.measured.remote_round_trips, r.measured.offload_round_trips);
  }
  return out.str();
}

// Loopback server with injected delays. net_delay is one-way, so the
// modelled round trip is twice that.
struct LocalBenchConfig {
  std::chrono::microseconds net_delay{500};
  std::chrono::microseconds read_delay{50};
  std::chrono::microseconds write_delay{80};
  uint64_t search_elems = appcode::kMaxSearchElems;
  int iterations = 20;
};

inline LatencyParams model_params(const LocalBenchConfig& c) {
  return {2.0 * static_cast<double>(c.net_delay.count()), static_cast<double>(c.read_delay.count()),
          static_cast<double>(c.write_delay.count())};
}

inline std::vector<BenchRow> run_suite(Session& s, const LatencyParams& model, uint64_t search_elems, int iterations) {
  std::vector<BenchRow> rows;
  for (const Workload& w : {Workload::increment(), Workload::binary_search(search_elems)}) {
    BenchOptions opts;
    opts.iterations = iterations;
    opts.fixture_offset = w.kind == WorkloadKind::Increment ? 0 : 4096;
    rows.push_back({run_benchmark(s, w, opts), predict_latency(model, w)});
  }
  return rows;
}

inline std::vector<BenchRow> run_local_suite(const LocalBenchConfig& c) {
  MemoryDevice dev(4096 + 8 * c.search_elems);
  ServerConfig cfg;
  cfg.listen = "127.0.0.1:0";
  cfg.net_delay = c.net_delay;
  cfg.storage_read_delay = c.read_delay;
  cfg.storage_write_delay = c.write_delay;
  Server server(dev, cfg);
  server.start();
  Session s = Session::connect("127.0.0.1:" + std::to_string(server.port()));
  return run_suite(s, model_params(c), c.search_elems, c.iterations);
}

}  // namespace bpfstore
