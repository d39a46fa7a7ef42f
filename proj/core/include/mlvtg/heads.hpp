#pragma once

#include <cstddef>
#include <vector>

#include "mlvtg/param.hpp"
#include "mlvtg/tensor.hpp"

namespace mlvtg {

struct TlOutput {
  Tensor offsets;    // [L_v, 2]: non-negative (distance to start, distance to end)
  Tensor fg_logits;  // [L_v]
};

struct HdOutput {
  Tensor saliency;  // [L_v]
};

struct ScoredSpan {
  double st = 0;
  double ed = 0;
  double confidence = 0;
};

// Span regression + foreground classification over the video rows of the
// refined sequence: two parallel branches, each a depthwise conv followed by
// a pointwise projection. Offsets pass through softplus so st < ed holds by
// construction.
class TlHead {
 public:
  TlHead() = default;
  TlHead(std::size_t d, std::size_t conv_width, Rng& rng);

  TlOutput forward(const Tensor& z_refine, std::size_t boundary) const;
  void collect(ParamList& out);

 private:
  Parameter conv_off_, w_off_, b_off_;
  Parameter conv_fg_, w_fg_, b_fg_;
};

// Saliency head: cosine similarity between each projected clip and the
// sentence vector, scaled by a learnable temperature. A zero clip row scores
// exactly 0.
class HdHead {
 public:
  HdHead() = default;
  explicit HdHead(Rng& rng);

  HdOutput forward(const Tensor& v_proj, const Tensor& s) const;
  void collect(ParamList& out);

 private:
  Parameter temperature_;  // [1]
};

// Per-clip spans (center - d_st, center + d_ed) clamped to [0,1], confidence
// sigmoid(fg_logit), greedy 1-D non-maximum suppression at nms_iou, ranked
// by confidence (ties break toward the lower clip index).
std::vector<ScoredSpan> decode_spans(const TlOutput& out, std::size_t top_k, double nms_iou);

struct LossWeights {
  real lambda_f = 4;
  real lambda_reg = 1;
  real lambda_inter = 1;
  real lambda_intra = 1;
};

struct LossTargets {
  std::vector<double> spans_st;   // normalized ground-truth spans
  std::vector<double> spans_ed;
  std::vector<int> saliency;      // 0-4 per clip
};

struct LossBreakdown {
  Tensor total;
  Tensor l_f, l_reg, l_inter, l_intra;
  bool tl_skipped = false;  // no foreground clip: TL terms contributed 0
};

// Composite objective: summed stable BCE on foreground logits, L1 + (1 -
// span IoU) at foreground clips, InfoNCE (temperature 0.07) between the
// sentence vector and the mean foreground clip feature against the provided
// negatives, and a margin-0.2 hinge between foreground and background
// saliency scores.
LossBreakdown total_loss(const TlOutput& tl, const HdOutput& hd, const Tensor& s,
                         const Tensor& v_proj, const LossTargets& targets,
                         const std::vector<Tensor>& negative_feats, const LossWeights& w);

// Foreground mask: clip center inside any ground-truth span.
std::vector<char> foreground_mask(std::size_t n_clips, const LossTargets& targets);

}  // namespace mlvtg
