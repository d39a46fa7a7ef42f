#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlvtg/bench.hpp"
#include "mlvtg/error.hpp"
#include "test_util.hpp"

using namespace mlvtg;
using test::max_abs_diff;

TEST_SUITE("bench") {

TEST_CASE("attention baseline matches a naive softmax(QK^T/sqrt(d))V") {
  NoGradGuard ng;
  const std::size_t L = 4, D = 3;
  Rng rng(11);
  AttentionBaseline attn(D, rng);

  ParamList ps;
  attn.collect(ps);
  REQUIRE(ps.size() == 3);
  CHECK(ps[0]->name == "attn.w_q");
  CHECK(ps[1]->name == "attn.w_k");
  CHECK(ps[2]->name == "attn.w_v");

  Rng zr(12);
  Tensor z = Tensor::randn({L, D}, zr);
  Tensor got = attn.forward(z);
  REQUIRE(got.shape() == Shape{L, D});

  auto matmul_ref = [](const Tensor& a, const Tensor& b) {
    std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
    std::vector<std::vector<double>> out(n, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < m; ++j)
          out[i][j] += double(a.at(i, p)) * double(b.at(p, j));
    return out;
  };
  auto q = matmul_ref(z, ps[0]->tensor);
  auto k = matmul_ref(z, ps[1]->tensor);
  auto v = matmul_ref(z, ps[2]->tensor);

  double inv = 1.0 / std::sqrt(double(D));
  for (std::size_t i = 0; i < L; ++i) {
    std::vector<double> w(L, 0.0);
    double norm = 0;
    for (std::size_t j = 0; j < L; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < D; ++c) s += q[i][c] * k[j][c];
      w[j] = std::exp(s * inv);
      norm += w[j];
    }
    for (std::size_t c = 0; c < D; ++c) {
      double o = 0;
      for (std::size_t j = 0; j < L; ++j) o += (w[j] / norm) * v[j][c];
      CHECK(std::abs(double(got.at(i, c)) - o) < 1e-12);
    }
  }

  CHECK_THROWS_AS(attn.forward(Tensor::vector({1, 2, 3})), DimensionError);
}

TEST_CASE("log-log slope recovers exact power laws") {
  auto curve = [](double c, double p, std::vector<double> xs) {
    std::vector<std::pair<double, double>> xy;
    for (double x : xs) xy.push_back({x, c * std::pow(x, p)});
    return xy;
  };
  CHECK(std::abs(fit_loglog_slope(curve(3.0, 2.0, {2, 4, 8, 16})) - 2.0) < 1e-12);
  CHECK(std::abs(fit_loglog_slope(curve(0.5, 1.0, {1, 2, 3, 4, 5})) - 1.0) < 1e-12);
  CHECK(std::abs(fit_loglog_slope(curve(7.0, 1.5, {10, 100, 1000})) - 1.5) < 1e-12);
  CHECK(std::abs(fit_loglog_slope(curve(4.0, 0.0, {1, 10, 100}))) < 1e-12);
  CHECK_THROWS_AS(fit_loglog_slope({{2.0, 4.0}}), DimensionError);
  CHECK_THROWS_AS(fit_loglog_slope({}), DimensionError);
}

TEST_CASE("default sweep covers 512 through 8192") {
  CHECK(default_bench_lengths() == std::vector<std::size_t>{512, 1024, 2048, 4096, 8192});
}

TEST_CASE("harness rejects unusable sampling plans") {
  CHECK_THROWS_AS(run_bench({8, 16}, 4, 1, 4), DimensionError);
  CHECK_THROWS_AS(run_bench({8, 16}, 5, 0, 4), DimensionError);
  CHECK_THROWS_AS(run_bench({8}, 5, 1, 4), DimensionError);
  CHECK_THROWS_AS(run_bench({16, 8}, 5, 1, 4), DimensionError);
}

TEST_CASE("a small sweep yields ordered, positive measurements") {
  BenchReport rep = run_bench({8, 16}, 5, 1, 4, 0);

  REQUIRE(rep.rows.size() == 4);
  CHECK(rep.rows[0].component == "aligner_block");
  CHECK(rep.rows[0].length == 8);
  CHECK(rep.rows[1].component == "aligner_block");
  CHECK(rep.rows[1].length == 16);
  CHECK(rep.rows[2].component == "attention_baseline");
  CHECK(rep.rows[2].length == 8);
  CHECK(rep.rows[3].component == "attention_baseline");
  CHECK(rep.rows[3].length == 16);
  for (const BenchRow& r : rep.rows) {
    CHECK(r.median_ms > 0);
    CHECK(r.p10_ms <= r.median_ms);
    CHECK(r.median_ms <= r.p90_ms);
    CHECK(r.peak_bytes > 0);
  }
  CHECK(rep.d == 4);
  CHECK(rep.repeats == 5);
  CHECK(!rep.environment.empty());
  CHECK(std::isfinite(rep.aligner_time_slope));
  CHECK(std::isfinite(rep.attention_time_slope));
  CHECK(rep.aligner_mem_slope > 0);
  CHECK(rep.attention_mem_slope > 0);

  std::string csv = bench_csv(rep);
  CHECK(csv.rfind("component,L,median_ms,p10_ms,p90_ms,peak_bytes\n", 0) == 0);
  std::size_t lines = 0, commas_first_row = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == 5);
  std::size_t row_start = csv.find('\n') + 1;
  for (std::size_t i = row_start; csv[i] != '\n'; ++i) commas_first_row += csv[i] == ',';
  CHECK(commas_first_row == 5);

  nlohmann::json j = nlohmann::json::parse(bench_json(rep));
  CHECK(j["rows"].size() == 4);
  CHECK(j["rows"][0]["component"] == "aligner_block");
  CHECK(j["slopes"].contains("aligner_time"));
  CHECK(j["d"] == 4);
}

}  // TEST_SUITE
