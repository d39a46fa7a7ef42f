#include <doctest.h>

#include <cstring>
#include <set>

#include "mlvtg/error.hpp"
#include "mlvtg/grad_check.hpp"
#include "mlvtg/memtrack.hpp"
#include "mlvtg/ops.hpp"
#include "mlvtg/optim.hpp"
#include "mlvtg/param.hpp"
#include "mlvtg/tensor.hpp"
#include "test_util.hpp"

using namespace mlvtg;
using test::bitwise_equal;

TEST_SUITE("tensor") {

TEST_CASE("shape and buffer length agree for every constructor") {
  CHECK(Tensor::zeros({2, 3}).numel() == 6);
  CHECK(Tensor::full({4}, 2.5).numel() == 4);
  CHECK(Tensor::identity(3).numel() == 9);
  CHECK(Tensor::scalar(7).numel() == 1);
  CHECK(Tensor::vector({1, 2, 3}).shape() == Shape{3});
  Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  CHECK(m.shape() == Shape{2, 2});
  CHECK(m.at(1, 0) == 3);
  CHECK(Tensor::scalar(7).item() == 7);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
}

TEST_CASE("identity matrix has ones on the diagonal only") {
  Tensor i3 = Tensor::identity(3);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(i3.at(r, c) == (r == c ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("mutable_data writes through to the buffer") {
  Tensor t = Tensor::zeros({3});
  t.mutable_data()[1] = 5;
  CHECK(t.at(1) == 5);
}

TEST_CASE("backward of x*x gives 2x") {
  Tensor x = Tensor::scalar(3).set_requires_grad(true);
  Tensor y = ops::mul(x, x);
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(6).epsilon(1e-12));
}

TEST_CASE("gradient accumulates over every use of a tensor") {
  Tensor x = Tensor::scalar(2).set_requires_grad(true);
  // y = x*x + x  =>  dy/dx = 2x + 1 = 5
  Tensor y = ops::add(ops::mul(x, x), x);
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(5).epsilon(1e-12));
}

TEST_CASE("zero_grad clears an accumulated gradient") {
  Tensor x = Tensor::scalar(3).set_requires_grad(true);
  ops::mul(x, x).backward();
  REQUIRE(x.has_grad());
  x.zero_grad();
  for (real g : x.grad()) CHECK(g == 0);
}

TEST_CASE("detach copies values and drops the tape") {
  Tensor x = Tensor::scalar(3).set_requires_grad(true);
  Tensor y = ops::mul(x, x);
  Tensor d = y.detach();
  CHECK(d.item() == y.item());
  CHECK_FALSE(d.requires_grad());
}

TEST_CASE("NoGradGuard suppresses tape recording") {
  Tensor x = Tensor::scalar(3).set_requires_grad(true);
  {
    NoGradGuard ng;
    Tensor y = ops::mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  Tensor y2 = ops::mul(x, x);
  CHECK(y2.requires_grad());
}

TEST_CASE("randn is deterministic per seed and scaled") {
  Rng a(42), b(42), c(43);
  Tensor ta = Tensor::randn({32}, a);
  Tensor tb = Tensor::randn({32}, b);
  Tensor tc = Tensor::randn({32}, c);
  CHECK(bitwise_equal(ta, tb));
  CHECK_FALSE(bitwise_equal(ta, tc));
}

TEST_CASE("rng fork yields an independent stream") {
  Rng r(7);
  Rng f = r.fork(1);
  Rng g = r.fork(2);
  CHECK(f.next_u64() != g.next_u64());
  // forking does not advance the parent
  Rng r2(7);
  r2.fork(1);
  Rng r3(7);
  CHECK(r2.next_u64() == r3.next_u64());
}

TEST_CASE("uniform_int covers both inclusive endpoints") {
  Rng r(11);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 200; ++i) seen.insert(r.uniform_int(0, 3));
  CHECK(seen == std::set<std::int64_t>{0, 1, 2, 3});
}

TEST_CASE("normal draws have roughly standard moments") {
  Rng r(5);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double v = r.normal();
    s += v;
    s2 += v * v;
  }
  CHECK(std::abs(s / n) < 0.05);
  CHECK(std::abs(s2 / n - 1.0) < 0.05);
}

TEST_CASE("memtrack follows tensor buffer lifetime") {
  std::size_t before = memtrack::current_bytes();
  {
    Tensor t = Tensor::zeros({1024});
    CHECK(memtrack::current_bytes() >= before + 1024 * sizeof(real));
    CHECK(memtrack::peak_bytes() >= memtrack::current_bytes());
  }
  CHECK(memtrack::current_bytes() == before);
  memtrack::reset_peak();
  CHECK(memtrack::peak_bytes() == memtrack::current_bytes());
}

TEST_CASE("frozen parameter bytes survive an arbitrary optimizer step sequence") {
  Rng rng(3);
  Parameter train("w", Tensor::randn({4, 4}, rng));
  Parameter frozen("f", Tensor::randn({4, 4}, rng));
  frozen.freeze();

  std::vector<real> before(frozen.tensor.data().begin(), frozen.tensor.data().end());
  Adam adam({&train, &frozen}, 0.05);
  Tensor x = Tensor::randn({3, 4}, rng);
  for (int step = 0; step < 7; ++step) {
    adam.zero_grad();
    Tensor loss = ops::sum_all(ops::matmul(ops::matmul(x, train.tensor), frozen.tensor));
    loss.backward();
    adam.step();
  }
  auto after = frozen.tensor.data();
  CHECK(std::memcmp(before.data(), after.data(), before.size() * sizeof(real)) == 0);
  CHECK_FALSE(frozen.tensor.has_grad());
}

TEST_CASE("optimizer moves trainable weights that received gradients") {
  Rng rng(4);
  Parameter w("w", Tensor::randn({4}, rng));
  std::vector<real> before(w.tensor.data().begin(), w.tensor.data().end());
  Adam adam({&w}, 0.01);
  adam.zero_grad();
  ops::sum_all(ops::mul(w.tensor, w.tensor)).backward();
  adam.step();
  CHECK_FALSE(std::equal(before.begin(), before.end(), w.tensor.data().begin()));
}

TEST_CASE("grad_check confirms d(x^2)/dx at x=3") {
  Parameter x("x", Tensor::scalar(3));
  GradCheckResult res =
      check_gradients([&] { return ops::mul(x.tensor, x.tensor); }, {&x});
  CHECK(res.checked == 1);
  CHECK(res.max_rel_err < 1e-8);
}

TEST_CASE("grad_check rejects a non-deterministic function") {
  Rng rng(9);
  Parameter x("x", Tensor::scalar(1));
  auto noisy = [&]() -> Tensor {
    return ops::scale(x.tensor, real(1) + real(rng.uniform()));
  };
  CHECK_THROWS_AS(check_gradients(noisy, {&x}), OracleError);
}

TEST_CASE("grad_check skips frozen parameters") {
  Parameter x("x", Tensor::scalar(3));
  x.freeze();
  GradCheckResult res =
      check_gradients([&] { return ops::mul(x.tensor, x.tensor); }, {&x});
  CHECK(res.checked == 0);
  CHECK(res.max_rel_err == 0);
}

}  // TEST_SUITE
