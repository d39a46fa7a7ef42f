#include <doctest.h>

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mlvtg/error.hpp"
#include "mlvtg/grad_check.hpp"
#include "mlvtg/ops.hpp"
#include "mlvtg/optim.hpp"
#include "mlvtg/refiner.hpp"
#include "mlvtg/serialize.hpp"
#include "test_util.hpp"

using namespace mlvtg;
using test::bitwise_equal;
using test::max_abs_diff;
using test::TempDir;

namespace {

Parameter* by_name(ParamList& ps, const std::string& name) {
  for (Parameter* p : ps) {
    if (p->name == name) return p;
  }
  REQUIRE_MESSAGE(false, "missing parameter ", name);
  return nullptr;
}

Parameter& block_param(FrozenBlock& b, const std::string& name) {
  for (auto& p : b.params()) {
    if (p.name == name) return p;
  }
  REQUIRE_MESSAGE(false, "missing frozen parameter ", name);
  return b.params().front();
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

// patch a field, then re-stamp the trailing hash so only that field is wrong
std::vector<std::uint8_t> rehash(std::vector<std::uint8_t> bytes) {
  std::uint64_t h = fnv1a64(std::span<const std::uint8_t>(bytes).first(bytes.size() - 8));
  for (int i = 0; i < 8; ++i) {
    bytes[bytes.size() - 8 + std::size_t(i)] = std::uint8_t(h >> (8 * i));
  }
  return bytes;
}

}  // namespace

TEST_SUITE("refiner") {

TEST_CASE("surrogate construction is seed-deterministic") {
  FrozenBlock a = FrozenBlock::make_surrogate(FrozenArch::mamba_block, 4, 3, 12, 99);
  FrozenBlock b = FrozenBlock::make_surrogate(FrozenArch::mamba_block, 4, 3, 12, 99);
  FrozenBlock c = FrozenBlock::make_surrogate(FrozenArch::mamba_block, 4, 3, 12, 100);
  CHECK(a.serialize() == b.serialize());
  CHECK(a.checksum() == b.checksum());
  CHECK(a.checksum() != c.checksum());
  CHECK(a.layer_index() == 12);
  CHECK(a.d_llm() == 4);
}

TEST_CASE("linear-residual block computes x + xW + b") {
  Rng rng(71);
  FrozenBlock fb = FrozenBlock::make_surrogate(FrozenArch::linear_residual, 4, 0, 0, 7);
  Tensor w = block_param(fb, "frozen.w").tensor;
  Tensor bias = block_param(fb, "frozen.b").tensor;
  Tensor x = Tensor::randn({5, 4}, rng);
  Tensor want = ops::add(x, ops::linear(x, w, bias));
  CHECK(bitwise_equal(fb.forward(x), want));
  CHECK_THROWS_AS(fb.forward(Tensor::zeros({5, 3})), DimensionError);
}

TEST_CASE("gated state-space surrogate replays from its named parameters") {
  Rng rng(72);
  FrozenBlock fb = FrozenBlock::make_surrogate(FrozenArch::mamba_block, 3, 2, 5, 21);
  SsmParams sp;
  sp.a_diag = block_param(fb, "frozen.ssm.a").tensor;
  sp.w_delta = block_param(fb, "frozen.ssm.w_delta").tensor;
  sp.b_delta = block_param(fb, "frozen.ssm.b_delta").tensor;
  sp.w_b = block_param(fb, "frozen.ssm.w_b").tensor;
  sp.b_b = block_param(fb, "frozen.ssm.b_b").tensor;
  sp.w_c = block_param(fb, "frozen.ssm.w_c").tensor;
  sp.b_c = block_param(fb, "frozen.ssm.b_c").tensor;

  Tensor x = Tensor::randn({6, 3}, rng);
  Tensor zn = ops::layer_norm(x, block_param(fb, "frozen.norm_gamma").tensor,
                              block_param(fb, "frozen.norm_beta").tensor);
  Tensor v = ops::linear(zn, block_param(fb, "frozen.w_x").tensor,
                         block_param(fb, "frozen.b_x").tensor);
  Tensor g = ops::linear(zn, block_param(fb, "frozen.w_g").tensor,
                         block_param(fb, "frozen.b_g").tensor);
  Tensor c = ops::silu(ops::conv1d_depthwise(v, block_param(fb, "frozen.conv").tensor, true));
  Tensor y = ssm_forward(sp, SsmMode::selective_recurrent, c);
  Tensor want = ops::add(x, ops::linear(ops::mul(ops::silu(g), y),
                                        block_param(fb, "frozen.w_out").tensor,
                                        block_param(fb, "frozen.b_out").tensor));
  CHECK(bitwise_equal(fb.forward(x), want));
}

TEST_CASE("checksum verification catches any weight mutation") {
  FrozenBlock fb = FrozenBlock::make_surrogate(FrozenArch::linear_residual, 3, 0, 0, 5);
  CHECK(fb.verify_frozen());
  auto data = block_param(fb, "frozen.w").tensor.mutable_data();
  real saved = data[2];
  data[2] += real(1e-3);
  CHECK_FALSE(fb.verify_frozen());
  data[2] = saved;
  CHECK(fb.verify_frozen());
}

TEST_CASE("save/load round trip reproduces the image and the map") {
  Rng rng(73);
  TempDir dir("refiner_rt");
  FrozenBlock fb = FrozenBlock::make_surrogate(FrozenArch::mamba_block, 4, 3, 2, 31);
  auto path = dir.file("block.mlvg");
  save_frozen_block(path, fb);
  FrozenBlock loaded = load_frozen_block(path, 4);
  CHECK(loaded.verify_frozen());
  CHECK(loaded.arch() == FrozenArch::mamba_block);
  CHECK(loaded.layer_index() == 2);
  CHECK(loaded.serialize() == fb.serialize());
  // weights travel as f32, so the map matches to single precision
  Tensor x = Tensor::randn({5, 4}, rng);
  CHECK(max_abs_diff(fb.forward(x), loaded.forward(x)) < 1e-5);
}

TEST_CASE("corrupt or mismatched files are rejected with a reason") {
  TempDir dir("refiner_bad");
  FrozenBlock fb = FrozenBlock::make_surrogate(FrozenArch::linear_residual, 3, 0, 1, 11);
  std::vector<std::uint8_t> img = fb.serialize();

  auto expect_format_error = [&](const std::vector<std::uint8_t>& bytes, const char* needle,
                                 std::size_t expected_d = 0) {
    auto p = dir.file(std::string("case_") + needle + ".mlvg");
    write_bytes(p, bytes);
    bool matched = false;
    try {
      load_frozen_block(p, expected_d);
    } catch (const FormatError& e) {
      matched = std::string(e.what()).find(needle) != std::string::npos;
      if (!matched) MESSAGE("got: ", e.what());
    }
    CHECK(matched);
  };

  auto flipped = img;
  flipped[img.size() / 2] ^= 0x40;
  expect_format_error(flipped, "checksum mismatch");

  expect_format_error({0x01, 0x02, 0x03}, "too small");

  auto bad_magic = img;
  bad_magic[0] = 'X';
  expect_format_error(rehash(bad_magic), "magic");

  auto bad_version = img;
  bad_version[4] = 9;
  expect_format_error(rehash(bad_version), "version");

  auto bad_arch = img;
  bad_arch[6] = 7;
  expect_format_error(rehash(bad_arch), "architecture");

  expect_format_error(img, "does not match expected", 999);
}

TEST_CASE("identity adapters around a zeroed block form the identity map") {
  Rng rng(74);
  const std::size_t d = 3, d_llm = 5;
  FrozenBlock fb = FrozenBlock::make_surrogate(FrozenArch::linear_residual, d_llm, 0, 0, 3);
  for (auto& p : fb.params()) {
    auto data = p.tensor.mutable_data();
    for (auto& v : data) v = 0;
  }
  Refiner ref(d, std::move(fb), false, rng);
  ParamList ps;
  ref.collect(ps);
  // W1 = [I | 0], W2 = [I ; 0], so F_L2(F_llm(F_L1(z))) collapses to z
  std::vector<real> w1(d * d_llm, 0), w2(d_llm * d, 0);
  for (std::size_t i = 0; i < d; ++i) {
    w1[i * d_llm + i] = 1;
    w2[i * d + i] = 1;
  }
  by_name(ps, "refiner.w1")->tensor = Tensor::from({d, d_llm}, std::move(w1));
  by_name(ps, "refiner.w2")->tensor = Tensor::from({d_llm, d}, std::move(w2));

  Tensor z = Tensor::randn({6, d}, rng);
  CHECK(bitwise_equal(ref.forward(z), z));
}

TEST_CASE("residual mode adds the refinement back onto the input") {
  Rng rng(75);
  FrozenBlock fb = FrozenBlock::make_surrogate(FrozenArch::linear_residual, 4, 0, 0, 17);
  Refiner plain(3, fb, false, rng);
  Rng rng2(75);
  FrozenBlock fb2 = FrozenBlock::make_surrogate(FrozenArch::linear_residual, 4, 0, 0, 17);
  Refiner res(3, fb2, true, rng2);
  CHECK_FALSE(plain.residual());
  CHECK(res.residual());
  Tensor z = Tensor::randn({5, 3}, rng);
  CHECK(bitwise_equal(res.forward(z), ops::add(z, plain.forward(z))));
}

TEST_CASE("gradients reach the adapters through the frozen block") {
  Rng rng(76);
  FrozenBlock fb = FrozenBlock::make_surrogate(FrozenArch::mamba_block, 3, 2, 0, 41);
  Refiner ref(2, std::move(fb), true, rng);
  Parameter z("z", Tensor::randn({4, 2}, rng));
  ParamList ps;
  ref.collect(ps);
  ps.push_back(&z);
  auto loss = [&] { return ops::sum_all(ops::tanh_(ref.forward(z.tensor))); };
  GradCheckResult res = check_gradients(loss, ps);
  // only the four adapters and z are trainable
  CHECK(res.checked == (2 * 3 + 3 + 3 * 2 + 2) + 4 * 2);
  CAPTURE(res.worst_param);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("an optimizer step moves adapters but never the frozen weights") {
  Rng rng(77);
  FrozenBlock fb = FrozenBlock::make_surrogate(FrozenArch::mamba_block, 3, 2, 0, 43);
  Refiner ref(2, std::move(fb), true, rng);
  ParamList ps;
  ref.collect(ps);

  std::vector<std::vector<real>> frozen_before;
  for (Parameter* p : ps) {
    if (p->frozen()) {
      auto d = p->tensor.data();
      frozen_before.emplace_back(d.begin(), d.end());
    }
  }
  Tensor w1_before = by_name(ps, "refiner.w1")->tensor.detach();

  Adam adam(ps, real(0.05));
  Tensor z = Tensor::randn({6, 2}, rng);
  for (int it = 0; it < 5; ++it) {
    adam.zero_grad();
    ops::sum_all(ops::tanh_(ref.forward(z))).backward();
    adam.step();
  }

  CHECK(ref.frozen().verify_frozen());
  std::size_t fi = 0;
  for (Parameter* p : ps) {
    if (!p->frozen()) continue;
    auto d = p->tensor.data();
    REQUIRE(d.size() == frozen_before[fi].size());
    CHECK(std::memcmp(d.data(), frozen_before[fi].data(), d.size() * sizeof(real)) == 0);
    ++fi;
  }
  CHECK(max_abs_diff(by_name(ps, "refiner.w1")->tensor, w1_before) > 0);
}

}  // TEST_SUITE
