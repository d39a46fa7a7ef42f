#pragma once

#include <cstddef>
#include <vector>

#include "mlvtg/param.hpp"
#include "mlvtg/ssm.hpp"

namespace mlvtg {

enum class GateMode { silu, sigmoid };

struct AlignerConfig {
  std::size_t d = 16;
  std::size_t d_inner = 32;
  std::size_t n_state = 8;
  std::size_t conv_width = 3;
  std::size_t n_blocks = 2;
  GateMode gate = GateMode::silu;
  SsmMode ssm_mode = SsmMode::selective_recurrent;
};

// One bidirectional gated state-space block. The input is normalized and
// split into a value path (projection, causal conv, SiLU, forward and
// reversed scans) and a gate path; the two directional outputs are fused as
// gate·y_f + (1-gate)·y_b and projected back onto the residual stream.
// out_proj starts at zero, so a fresh block is the identity map.
struct AlignerBlock {
  Parameter norm_gamma, norm_beta;
  Parameter w_x, b_x, w_g, b_g;
  Parameter conv_kernel;  // [conv_width, d_inner]
  SsmParams ssm_f, ssm_b;
  Parameter w_out, b_out;
  GateMode gate = GateMode::silu;
  SsmMode ssm_mode = SsmMode::selective_recurrent;

  AlignerBlock() = default;
  AlignerBlock(const std::string& prefix, const AlignerConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& z) const;
  void collect(ParamList& out);

 private:
  std::vector<Parameter> ssm_params_;
};

struct AlignerStack {
  std::vector<AlignerBlock> blocks;

  AlignerStack() = default;
  AlignerStack(const AlignerConfig& cfg, Rng& rng);

  Tensor forward(const Tensor& z) const;
  void collect(ParamList& out);
};

}  // namespace mlvtg
