#pragma once

// Analytic latency model for remote versus offloaded execution.

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace bpfstore {

struct LatencyParams {
  double rtt_us = 0;
  double read_us = 0;
  double write_us = 0;
};

// 64 B TCP round trip and NVMe read/write latency on a modern datacenter
// host.
inline constexpr LatencyParams kDatacenterParams{41.9, 5.6, 8.0};

enum class WorkloadKind { Increment, BinarySearch };

struct Workload {
  WorkloadKind kind = WorkloadKind::Increment;
  uint64_t elems = 0;  // binary search only

  static Workload increment() { return {WorkloadKind::Increment, 0}; }
  static Workload binary_search(uint64_t n) { return {WorkloadKind::BinarySearch, n}; }

  std::string name() const {
    if (kind == WorkloadKind::Increment) return "increment";
    if (std::has_single_bit(elems)) return "binary_search(2^" + std::to_string(std::countr_zero(elems)) + ")";
    return "binary_search(" + std::to_string(elems) + ")";
  }
};

struct LatencyPrediction {
  double remote_us = 0;
  double offload_us = 0;
  double reduction = 0;  // 1 - offload / remote
};

inline uint32_t ceil_log2(uint64_t n) {
  return n <= 1 ? 0 : static_cast<uint32_t>(std::bit_width(n - 1));
}

inline LatencyPrediction predict_latency(const LatencyParams& p, const Workload& w) {
  LatencyPrediction out;
  if (w.kind == WorkloadKind::Increment) {
    out.remote_us = 2 * p.rtt_us + p.read_us + p.write_us;
    out.offload_us = p.rtt_us + p.read_us + p.write_us;
  } else {
    if (w.elems < 2) throw std::invalid_argument("binary search needs at least 2 elements");
    const double levels = ceil_log2(w.elems);
    out.remote_us = levels * (p.rtt_us + p.read_us);
    out.offload_us = p.rtt_us + levels * p.read_us;
  }
  out.reduction = out.remote_us > 0 ? 1.0 - out.offload_us / out.remote_us : 0.0;
  return out;
}

}  // namespace bpfstore
