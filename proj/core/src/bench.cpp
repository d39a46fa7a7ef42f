#include "mlvtg/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "mlvtg/error.hpp"
#include "mlvtg/memtrack.hpp"
#include "mlvtg/ops.hpp"

namespace mlvtg {

AttentionBaseline::AttentionBaseline(std::size_t d, Rng& rng)
    : w_q_("attn.w_q", Tensor::randn({d, d}, rng, real(1) / std::sqrt(real(d)))),
      w_k_("attn.w_k", Tensor::randn({d, d}, rng, real(1) / std::sqrt(real(d)))),
      w_v_("attn.w_v", Tensor::randn({d, d}, rng, real(1) / std::sqrt(real(d)))) {}

Tensor AttentionBaseline::forward(const Tensor& z) const {
  if (z.rank() != 2) throw DimensionError("attention expects [L, D]");
  std::size_t d = z.shape()[1];
  Tensor q = ops::matmul(z, w_q_.tensor);
  Tensor k = ops::matmul(z, w_k_.tensor);
  Tensor v = ops::matmul(z, w_v_.tensor);
  Tensor scores = ops::scale(ops::matmul(q, ops::transpose(k)), real(1) / std::sqrt(real(d)));
  return ops::matmul(ops::softmax(scores), v);
}

void AttentionBaseline::collect(ParamList& out) {
  out.push_back(&w_q_);
  out.push_back(&w_k_);
  out.push_back(&w_v_);
}

double fit_loglog_slope(const std::vector<std::pair<double, double>>& xy) {
  if (xy.size() < 2) throw DimensionError("slope fit needs at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [x, y] : xy) {
    double lx = std::log(x), ly = std::log(y);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  double n = double(xy.size());
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::vector<std::size_t> default_bench_lengths() { return {512, 1024, 2048, 4096, 8192}; }

namespace {

using clock_t_ = std::chrono::steady_clock;

double time_once_ms(const std::function<void()>& fn, std::size_t iters) {
  auto t0 = clock_t_::now();
  for (std::size_t i = 0; i < iters; ++i) fn();
  auto t1 = clock_t_::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / double(iters);
}

BenchRow measure(const std::string& name, std::size_t L, std::size_t repeats,
                 std::size_t warmup, const std::function<void()>& fn) {
  for (std::size_t i = 0; i < warmup; ++i) fn();

  // Grow the inner count until one measurement spans at least 5 ms. This is
  // both a timer-resolution guard and noise armor: short samples on a busy
  // machine pick up scheduler blips that tilt the fitted slope.
  std::size_t iters = 1;
  while (time_once_ms(fn, iters) * double(iters) < 5.0 && iters < (std::size_t(1) << 20)) {
    iters *= 2;
  }

  std::vector<double> ms(repeats);
  for (std::size_t r = 0; r < repeats; ++r) ms[r] = time_once_ms(fn, iters);
  std::sort(ms.begin(), ms.end());
  auto pick = [&](double q) {
    return ms[std::size_t(std::llround(q * double(repeats - 1)))];
  };

  std::size_t before = memtrack::current_bytes();
  memtrack::reset_peak();
  fn();
  std::size_t peak = memtrack::peak_bytes() - before;

  BenchRow row;
  row.component = name;
  row.length = L;
  row.median_ms = pick(0.5);
  row.p10_ms = pick(0.1);
  row.p90_ms = pick(0.9);
  row.peak_bytes = peak;
  return row;
}

}  // namespace

BenchReport run_bench(const std::vector<std::size_t>& lengths, std::size_t repeats,
                      std::size_t warmup, std::size_t d, std::uint64_t seed) {
  if (repeats < 5) throw DimensionError("run_bench needs repeats >= 5");
  if (warmup < 1) throw DimensionError("run_bench needs warmup >= 1");
  if (lengths.size() < 2) throw DimensionError("run_bench needs at least two lengths");
  if (!std::is_sorted(lengths.begin(), lengths.end())) {
    throw DimensionError("run_bench lengths must be ascending");
  }

  NoGradGuard ng;
  Rng rng(seed);
  AttentionBaseline attn(d, rng);
  AlignerConfig acfg;
  acfg.d = d;
  acfg.d_inner = 2 * d;
  acfg.n_state = 16;
  acfg.conv_width = 3;
  acfg.n_blocks = 1;
  acfg.ssm_mode = SsmMode::selective_recurrent;
  AlignerBlock block("bench", acfg, rng);

  BenchReport rep;
  rep.d = d;
  rep.repeats = repeats;
  rep.warmup = warmup;
  {
    std::ostringstream env;
#if defined(__VERSION__)
    env << "gcc-compatible " << __VERSION__ << ", ";
#endif
    env << (sizeof(void*) * 8) << "-bit, single-threaded, real=" << sizeof(real) << " bytes";
    rep.environment = env.str();
  }

  std::vector<std::pair<double, double>> al_t, al_m, at_t, at_m;
  for (std::size_t L : lengths) {
    Rng in_rng = rng.fork(L);
    Tensor z = Tensor::randn({L, d}, in_rng);
    Tensor sink;
    BenchRow a = measure("aligner_block", L, repeats, warmup, [&] { sink = block.forward(z); });
    BenchRow b =
        measure("attention_baseline", L, repeats, warmup, [&] { sink = attn.forward(z); });
    al_t.push_back({double(L), a.median_ms});
    al_m.push_back({double(L), double(a.peak_bytes)});
    at_t.push_back({double(L), b.median_ms});
    at_m.push_back({double(L), double(b.peak_bytes)});
    rep.rows.push_back(a);
    rep.rows.push_back(b);
  }
  std::stable_sort(rep.rows.begin(), rep.rows.end(), [](const BenchRow& x, const BenchRow& y) {
    return x.component != y.component ? x.component < y.component : x.length < y.length;
  });
  rep.aligner_time_slope = fit_loglog_slope(al_t);
  rep.aligner_mem_slope = fit_loglog_slope(al_m);
  rep.attention_time_slope = fit_loglog_slope(at_t);
  rep.attention_mem_slope = fit_loglog_slope(at_m);
  return rep;
}

std::string bench_csv(const BenchReport& rep) {
  std::ostringstream os;
  os << "component,L,median_ms,p10_ms,p90_ms,peak_bytes\n";
  for (const auto& r : rep.rows) {
    os << r.component << ',' << r.length << ',' << r.median_ms << ',' << r.p10_ms << ','
       << r.p90_ms << ',' << r.peak_bytes << '\n';
  }
  return os.str();
}

std::string bench_json(const BenchReport& rep) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rep.rows) {
    rows.push_back({{"component", r.component},
                    {"L", r.length},
                    {"median_ms", r.median_ms},
                    {"p10_ms", r.p10_ms},
                    {"p90_ms", r.p90_ms},
                    {"peak_bytes", r.peak_bytes}});
  }
  nlohmann::json j = {{"environment", rep.environment},
                      {"d", rep.d},
                      {"repeats", rep.repeats},
                      {"warmup", rep.warmup},
                      {"rows", rows},
                      {"slopes",
                       {{"attention_time", rep.attention_time_slope},
                        {"attention_mem", rep.attention_mem_slope},
                        {"aligner_time", rep.aligner_time_slope},
                        {"aligner_mem", rep.aligner_mem_slope}}}};
  return j.dump(2) + "\n";
}

}  // namespace mlvtg
