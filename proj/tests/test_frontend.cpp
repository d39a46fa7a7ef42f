#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>

#include "mlvtg/error.hpp"
#include "mlvtg/frontend.hpp"
#include "mlvtg/grad_check.hpp"
#include "mlvtg/ops.hpp"
#include "test_util.hpp"

using namespace mlvtg;
using test::bitwise_equal;
using test::max_abs_diff;

namespace {

Parameter* find_param(ParamList& params, const std::string& name) {
  for (Parameter* p : params) {
    if (p->name == name) return p;
  }
  REQUIRE_MESSAGE(false, "missing parameter ", name);
  return nullptr;
}

}  // namespace

TEST_SUITE("frontend") {

TEST_CASE("projection network shapes follow [L, d_in] -> [L, d_out]") {
  Rng rng(31);
  Ffn ffn("f", 6, 4, rng);
  Tensor x = Tensor::randn({5, 6}, rng);
  Tensor y = ffn.forward(x, 0, nullptr);
  CHECK(y.shape() == Shape{5, 4});
  ParamList ps;
  ffn.collect(ps);
  REQUIRE(ps.size() == 4);
  CHECK(ps[0]->name == "f.w1");
  CHECK(ps[3]->tensor.shape() == Shape{4});
}

TEST_CASE("projection network with shifted identity weights is near-identity") {
  // w1 = w2 = I with a +20/-20 bias pair keeps SiLU in its linear regime,
  // so the whole stack collapses to x within the activation tail error.
  Rng rng(32);
  Ffn ffn("f", 4, 4, rng);
  ffn.w1.tensor = Tensor::identity(4);
  ffn.b1.tensor = Tensor::full({4}, 20);
  ffn.w2.tensor = Tensor::identity(4);
  ffn.b2.tensor = Tensor::full({4}, -20);
  Tensor x = Tensor::rand_uniform({7, 4}, rng, -1, 1);
  Tensor y = ffn.forward(x, 0, nullptr);
  CHECK(max_abs_diff(x, y) < 1e-6);
}

TEST_CASE("projection network gradients pass the finite-difference oracle") {
  Rng rng(33);
  Ffn ffn("f", 3, 4, rng);
  Parameter x("x", Tensor::randn({5, 3}, rng));
  ParamList ps;
  ffn.collect(ps);
  ps.push_back(&x);
  auto loss = [&] { return ops::sum_all(ops::tanh_(ffn.forward(x.tensor, 0, nullptr))); };
  GradCheckResult res = check_gradients(loss, ps);
  CHECK(res.checked > 0);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("joint sequence puts query tokens first and adds both embeddings") {
  Rng rng(34);
  FrontendConfig cfg;
  cfg.d_in_video = 5;
  cfg.d_in_query = 3;
  cfg.d = 4;
  cfg.max_len = 16;
  Frontend fe(cfg, rng);
  ParamList ps;
  fe.collect(ps);
  Tensor pos_q = find_param(ps, "frontend.pos_query")->tensor;
  Tensor pos_v = find_param(ps, "frontend.pos_video")->tensor;
  Tensor type_q = find_param(ps, "frontend.type_query")->tensor;
  Tensor type_v = find_param(ps, "frontend.type_video")->tensor;

  const std::size_t lv = 6, lq = 4;
  Tensor video = Tensor::randn({lv, cfg.d_in_video}, rng);
  Tensor query = Tensor::randn({lq, cfg.d_in_query}, rng);
  FrontendOut out = fe.forward(video, query, false, nullptr);

  CHECK(out.tokens.boundary == lq);
  REQUIRE(out.tokens.z.shape() == Shape{lq + lv, cfg.d});
  REQUIRE(out.q_proj.shape() == Shape{lq, cfg.d});
  REQUIRE(out.v_proj.shape() == Shape{lv, cfg.d});
  CHECK(out.tokens.s.shape() == Shape{1, cfg.d});

  for (std::size_t i = 0; i < lq; ++i) {
    for (std::size_t j = 0; j < cfg.d; ++j) {
      real want = (out.q_proj.at(i, j) + pos_q.at(i, j)) + type_q.at(j);
      CHECK(out.tokens.z.at(i, j) == want);
    }
  }
  for (std::size_t i = 0; i < lv; ++i) {
    for (std::size_t j = 0; j < cfg.d; ++j) {
      real want = (out.v_proj.at(i, j) + pos_v.at(i, j)) + type_v.at(j);
      CHECK(out.tokens.z.at(lq + i, j) == want);
    }
  }
}

TEST_CASE("pooling identical rows returns that row") {
  Rng rng(35);
  FrontendConfig cfg;
  cfg.d = 5;
  Frontend fe(cfg, rng);
  std::vector<real> row(5);
  for (auto& v : row) v = real(rng.normal());
  std::vector<real> data;
  for (int i = 0; i < 6; ++i) data.insert(data.end(), row.begin(), row.end());
  Tensor s = fe.attentive_pool(Tensor::from({6, 5}, std::move(data)));
  for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(double(s.at(0, j)) - double(row[j])) < 1e-12);
}

TEST_CASE("pooled vector is a convex combination of the rows") {
  Rng rng(36);
  FrontendConfig cfg;
  cfg.d = 6;
  Frontend fe(cfg, rng);
  Tensor q = Tensor::randn({9, 6}, rng);
  Tensor s = fe.attentive_pool(q);
  for (std::size_t j = 0; j < 6; ++j) {
    real lo = q.at(0, j), hi = q.at(0, j);
    for (std::size_t i = 1; i < 9; ++i) {
      lo = std::min(lo, q.at(i, j));
      hi = std::max(hi, q.at(i, j));
    }
    CHECK(double(s.at(0, j)) >= double(lo) - 1e-12);
    CHECK(double(s.at(0, j)) <= double(hi) + 1e-12);
  }
}

TEST_CASE("pooling is invariant to duplicating every row") {
  Rng rng(37);
  FrontendConfig cfg;
  cfg.d = 4;
  Frontend fe(cfg, rng);
  Tensor q = Tensor::randn({5, 4}, rng);
  Tensor q2 = ops::concat_rows(q, q);
  CHECK(max_abs_diff(fe.attentive_pool(q), fe.attentive_pool(q2)) < 1e-12);
}

TEST_CASE("non-finite features are rejected") {
  Rng rng(38);
  FrontendConfig cfg;
  Frontend fe(cfg, rng);
  Tensor query = Tensor::randn({3, cfg.d_in_query}, rng);
  std::vector<real> bad(2 * cfg.d_in_video, 0);
  bad[3] = std::numeric_limits<real>::quiet_NaN();
  Tensor video = Tensor::from({2, cfg.d_in_video}, std::move(bad));
  CHECK_THROWS_AS(fe.forward(video, query, false, nullptr), NumericError);
}

TEST_CASE("sequences beyond the positional table capacity are rejected") {
  Rng rng(39);
  FrontendConfig cfg;
  cfg.max_len = 8;
  Frontend fe(cfg, rng);
  Tensor video = Tensor::zeros({9, cfg.d_in_video});
  Tensor query = Tensor::zeros({2, cfg.d_in_query});
  bool names_capacity = false;
  try {
    fe.forward(video, query, false, nullptr);
  } catch (const CapacityError& e) {
    names_capacity = std::string(e.what()).find("8") != std::string::npos;
  }
  CHECK(names_capacity);
  // query side is checked against the same table size
  CHECK_THROWS_AS(fe.forward(Tensor::zeros({4, cfg.d_in_video}),
                             Tensor::zeros({9, cfg.d_in_query}), false, nullptr),
                  CapacityError);
}

TEST_CASE("inference is deterministic and training dropout is seed-reproducible") {
  Rng rng(40);
  FrontendConfig cfg;
  cfg.d = 8;
  cfg.dropout = real(0.4);
  Frontend fe(cfg, rng);
  Tensor video = Tensor::randn({5, cfg.d_in_video}, rng);
  Tensor query = Tensor::randn({3, cfg.d_in_query}, rng);

  Tensor a = fe.forward(video, query, false, nullptr).tokens.z;
  Tensor b = fe.forward(video, query, false, nullptr).tokens.z;
  CHECK(bitwise_equal(a, b));

  Rng d1(99), d2(99), d3(100);
  Tensor t1 = fe.forward(video, query, true, &d1).tokens.z;
  Tensor t2 = fe.forward(video, query, true, &d2).tokens.z;
  Tensor t3 = fe.forward(video, query, true, &d3).tokens.z;
  CHECK(bitwise_equal(t1, t2));
  CHECK(max_abs_diff(t1, t3) > 0);
  // dropout must actually perturb the eval-mode output
  CHECK(max_abs_diff(t1, a) > 0);
}

TEST_CASE("frontend gradients pass the finite-difference oracle") {
  Rng rng(41);
  FrontendConfig cfg;
  cfg.d_in_video = 3;
  cfg.d_in_query = 2;
  cfg.d = 4;
  cfg.max_len = 8;
  Frontend fe(cfg, rng);
  Parameter video("video", Tensor::randn({3, 3}, rng));
  Parameter query("query", Tensor::randn({2, 2}, rng));
  ParamList ps;
  fe.collect(ps);
  ps.push_back(&video);
  ps.push_back(&query);
  auto loss = [&] {
    FrontendOut out = fe.forward(video.tensor, query.tensor, false, nullptr);
    return ops::add(ops::sum_all(ops::tanh_(out.tokens.z)), ops::sum_all(out.tokens.s));
  };
  GradCheckResult res = check_gradients(loss, ps, 1e-5, 6);
  CHECK(res.checked > 0);
  CHECK(res.max_rel_err < 1e-4);
}

}  // TEST_SUITE
