#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mlvtg/aligner.hpp"
#include "mlvtg/param.hpp"
#include "mlvtg/tensor.hpp"

namespace mlvtg {

// Single-head scaled dot-product attention with learned projections:
// softmax(QKᵀ/√D)·V. Quadratic in L by construction; the comparison anchor
// for the scaling harness.
class AttentionBaseline {
 public:
  AttentionBaseline(std::size_t d, Rng& rng);

  Tensor forward(const Tensor& z) const;  // [L, D] -> [L, D]
  void collect(ParamList& out);

 private:
  Parameter w_q_, w_k_, w_v_;
};

struct BenchRow {
  std::string component;
  std::size_t length = 0;
  double median_ms = 0, p10_ms = 0, p90_ms = 0;
  std::size_t peak_bytes = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;  // sorted by (component, length)
  std::string environment;
  std::size_t d = 64;
  std::size_t repeats = 9;
  std::size_t warmup = 3;
  double attention_time_slope = 0, attention_mem_slope = 0;
  double aligner_time_slope = 0, aligner_mem_slope = 0;
};

// Least-squares slope of log(y) against log(x).
double fit_loglog_slope(const std::vector<std::pair<double, double>>& xy);

std::vector<std::size_t> default_bench_lengths();  // 512 ... 8192

// Times single-threaded forward passes of one aligner block and the
// attention baseline over seeded inputs, with peak transient allocation per
// pass. Short timings auto-increase their inner iteration count until each
// measurement spans at least a millisecond scale.
BenchReport run_bench(const std::vector<std::size_t>& lengths, std::size_t repeats,
                      std::size_t warmup, std::size_t d = 64, std::uint64_t seed = 0);

std::string bench_csv(const BenchReport& rep);
std::string bench_json(const BenchReport& rep);

}  // namespace mlvtg
