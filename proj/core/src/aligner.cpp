#include "mlvtg/aligner.hpp"

#include <cmath>

#include "mlvtg/error.hpp"
#include "mlvtg/ops.hpp"

namespace mlvtg {

namespace {

void collect_ssm(std::vector<Parameter>& store, const std::string& prefix, SsmParams& p) {
  store.emplace_back(prefix + ".a", p.a_diag);
  store.emplace_back(prefix + ".w_delta", p.w_delta);
  store.emplace_back(prefix + ".b_delta", p.b_delta);
  store.emplace_back(prefix + ".w_b", p.w_b);
  store.emplace_back(prefix + ".b_b", p.b_b);
  store.emplace_back(prefix + ".w_c", p.w_c);
  store.emplace_back(prefix + ".b_c", p.b_c);
}

}  // namespace

AlignerBlock::AlignerBlock(const std::string& prefix, const AlignerConfig& cfg, Rng& rng)
    : norm_gamma(prefix + ".norm_gamma", Tensor::full({cfg.d}, real(1))),
      norm_beta(prefix + ".norm_beta", Tensor::zeros({cfg.d})),
      w_x(prefix + ".w_x",
          Tensor::randn({cfg.d, cfg.d_inner}, rng, real(1) / std::sqrt(real(cfg.d)))),
      b_x(prefix + ".b_x", Tensor::zeros({cfg.d_inner})),
      w_g(prefix + ".w_g",
          Tensor::randn({cfg.d, cfg.d_inner}, rng, real(1) / std::sqrt(real(cfg.d)))),
      b_g(prefix + ".b_g", Tensor::zeros({cfg.d_inner})),
      conv_kernel(prefix + ".conv",
                  Tensor::randn({cfg.conv_width, cfg.d_inner}, rng,
                                real(1) / std::sqrt(real(cfg.conv_width)))),
      ssm_f(make_selective_ssm(cfg.d_inner, cfg.n_state, rng)),
      ssm_b(make_selective_ssm(cfg.d_inner, cfg.n_state, rng)),
      w_out(prefix + ".w_out", Tensor::zeros({cfg.d_inner, cfg.d})),
      b_out(prefix + ".b_out", Tensor::zeros({cfg.d})),
      gate(cfg.gate),
      ssm_mode(cfg.ssm_mode) {
  collect_ssm(ssm_params_, prefix + ".ssm_f", ssm_f);
  collect_ssm(ssm_params_, prefix + ".ssm_b", ssm_b);
}

Tensor AlignerBlock::forward(const Tensor& z) const {
  Tensor zn = ops::layer_norm(z, norm_gamma.tensor, norm_beta.tensor);
  Tensor x = ops::linear(zn, w_x.tensor, b_x.tensor);
  Tensor g = ops::linear(zn, w_g.tensor, b_g.tensor);
  Tensor c = ops::silu(ops::conv1d_depthwise(x, conv_kernel.tensor, true));
  Tensor yf = ssm_forward(ssm_f, ssm_mode, c);
  Tensor yb = ops::reverse_rows(ssm_forward(ssm_b, ssm_mode, ops::reverse_rows(c)));
  Tensor gate_v = gate == GateMode::silu ? ops::silu(g) : ops::sigmoid(g);
  Tensor fused = ops::add(ops::mul(gate_v, yf),
                          ops::mul(ops::add_scalar(ops::neg(gate_v), real(1)), yb));
  return ops::add(z, ops::linear(fused, w_out.tensor, b_out.tensor));
}

void AlignerBlock::collect(ParamList& out) {
  out.push_back(&norm_gamma);
  out.push_back(&norm_beta);
  out.push_back(&w_x);
  out.push_back(&b_x);
  out.push_back(&w_g);
  out.push_back(&b_g);
  out.push_back(&conv_kernel);
  for (auto& p : ssm_params_) out.push_back(&p);
  out.push_back(&w_out);
  out.push_back(&b_out);
}

AlignerStack::AlignerStack(const AlignerConfig& cfg, Rng& rng) {
  if (cfg.n_blocks < 1) throw DimensionError("aligner needs at least one block");
  blocks.reserve(cfg.n_blocks);
  for (std::size_t k = 0; k < cfg.n_blocks; ++k) {
    blocks.emplace_back("aligner.block" + std::to_string(k), cfg, rng);
  }
}

Tensor AlignerStack::forward(const Tensor& z) const {
  Tensor cur = z;
  for (const auto& b : blocks) cur = b.forward(cur);
  return cur;
}

void AlignerStack::collect(ParamList& out) {
  for (auto& b : blocks) b.collect(out);
}

}  // namespace mlvtg
