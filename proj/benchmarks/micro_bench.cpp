// Microbenchmarks for the scan variants, one aligner block, and the quadratic
// attention baseline. Complements `mlvtg bench`, which owns the slope-fit
// report; this is for quick interactive profiling of individual pieces.

#include <benchmark/benchmark.h>

#include "mlvtg/aligner.hpp"
#include "mlvtg/bench.hpp"
#include "mlvtg/rng.hpp"
#include "mlvtg/ssm.hpp"
#include "mlvtg/tensor.hpp"

namespace {

using namespace mlvtg;

constexpr std::size_t kD = 64;
constexpr std::size_t kState = 16;

Tensor make_input(std::size_t l, std::size_t d) {
  Rng rng(1234);
  return Tensor::randn({l, d}, rng);
}

void bm_selective_recurrent(benchmark::State& state) {
  NoGradGuard ng;
  std::size_t l = std::size_t(state.range(0));
  Rng rng(7);
  SsmParams p = make_selective_ssm(kD, kState, rng);
  Tensor x = make_input(l, kD);
  for (auto _ : state) {
    Tensor y = ssm_forward(p, SsmMode::selective_recurrent, x);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetComplexityN(int64_t(l));
}

void bm_selective_parallel_scan(benchmark::State& state) {
  NoGradGuard ng;
  std::size_t l = std::size_t(state.range(0));
  Rng rng(7);
  SsmParams p = make_selective_ssm(kD, kState, rng);
  Tensor x = make_input(l, kD);
  for (auto _ : state) {
    Tensor y = ssm_forward(p, SsmMode::selective_parallel_scan, x);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetComplexityN(int64_t(l));
}

void bm_aligner_block(benchmark::State& state) {
  NoGradGuard ng;
  std::size_t l = std::size_t(state.range(0));
  AlignerConfig cfg;
  cfg.d = kD;
  cfg.d_inner = 2 * kD;
  cfg.n_state = kState;
  cfg.n_blocks = 1;
  Rng rng(7);
  AlignerBlock block("bench", cfg, rng);
  Tensor x = make_input(l, kD);
  for (auto _ : state) {
    Tensor y = block.forward(x);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetComplexityN(int64_t(l));
}

void bm_attention_baseline(benchmark::State& state) {
  NoGradGuard ng;
  std::size_t l = std::size_t(state.range(0));
  Rng rng(7);
  AttentionBaseline attn(kD, rng);
  Tensor x = make_input(l, kD);
  for (auto _ : state) {
    Tensor y = attn.forward(x);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetComplexityN(int64_t(l));
}

BENCHMARK(bm_selective_recurrent)->RangeMultiplier(2)->Range(256, 4096)->Complexity();
BENCHMARK(bm_selective_parallel_scan)->RangeMultiplier(2)->Range(256, 4096)->Complexity();
BENCHMARK(bm_aligner_block)->RangeMultiplier(2)->Range(256, 4096)->Complexity();
BENCHMARK(bm_attention_baseline)->RangeMultiplier(2)->Range(256, 2048)->Complexity();

}  // namespace

BENCHMARK_MAIN();
