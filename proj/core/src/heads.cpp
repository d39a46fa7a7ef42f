#include "mlvtg/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mlvtg/error.hpp"
#include "mlvtg/ops.hpp"

namespace mlvtg {

namespace {

double iou_1d(double a0, double a1, double b0, double b1) {
  double inter = std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  double uni = (a1 - a0) + (b1 - b0) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace

TlHead::TlHead(std::size_t d, std::size_t conv_width, Rng& rng)
    : conv_off_("tl.conv_off", Tensor::randn({conv_width, d}, rng,
                                             real(1) / std::sqrt(real(conv_width)))),
      w_off_("tl.w_off", Tensor::randn({d, 2}, rng, real(1) / std::sqrt(real(d)))),
      b_off_("tl.b_off", Tensor::zeros({2})),
      conv_fg_("tl.conv_fg", Tensor::randn({conv_width, d}, rng,
                                           real(1) / std::sqrt(real(conv_width)))),
      w_fg_("tl.w_fg", Tensor::randn({d, 1}, rng, real(1) / std::sqrt(real(d)))),
      b_fg_("tl.b_fg", Tensor::zeros({1})) {}

TlOutput TlHead::forward(const Tensor& z_refine, std::size_t boundary) const {
  std::size_t L = z_refine.shape()[0];
  if (boundary >= L) throw DimensionError("tl_head: boundary leaves no video rows");
  Tensor vid = ops::slice_rows(z_refine, boundary, L);
  TlOutput out;
  Tensor off_h = ops::silu(ops::conv1d_depthwise(vid, conv_off_.tensor, false));
  out.offsets = ops::softplus(ops::linear(off_h, w_off_.tensor, b_off_.tensor));
  Tensor fg_h = ops::silu(ops::conv1d_depthwise(vid, conv_fg_.tensor, false));
  out.fg_logits = ops::reshape(ops::linear(fg_h, w_fg_.tensor, b_fg_.tensor), {L - boundary});
  return out;
}

void TlHead::collect(ParamList& out) {
  out.push_back(&conv_off_);
  out.push_back(&w_off_);
  out.push_back(&b_off_);
  out.push_back(&conv_fg_);
  out.push_back(&w_fg_);
  out.push_back(&b_fg_);
}

HdHead::HdHead(Rng&) : temperature_("hd.temperature", Tensor::full({1}, real(1))) {}

HdOutput HdHead::forward(const Tensor& v_proj, const Tensor& s) const {
  Tensor sim = ops::cosine_sim_matrix(v_proj, s);  // [L_v, 1]
  HdOutput out;
  out.saliency =
      ops::mul_scalar_tensor(ops::reshape(sim, {v_proj.shape()[0]}), temperature_.tensor);
  return out;
}

void HdHead::collect(ParamList& out) { out.push_back(&temperature_); }

std::vector<ScoredSpan> decode_spans(const TlOutput& out, std::size_t top_k, double nms_iou) {
  if (top_k < 1) throw DimensionError("decode_spans needs top_k >= 1");
  std::size_t n = out.fg_logits.numel();
  auto off = out.offsets.data();
  auto lg = out.fg_logits.data();
  std::vector<ScoredSpan> cand(n);
  for (std::size_t i = 0; i < n; ++i) {
    double center = (double(i) + 0.5) / double(n);
    double st = std::clamp(center - double(off[i * 2]), 0.0, 1.0);
    double ed = std::clamp(center + double(off[i * 2 + 1]), 0.0, 1.0);
    if (ed <= st) {
      if (st >= 1.0) st = 1.0 - 1e-6;
      ed = std::min(1.0, st + 1e-6);
    }
    double z = double(lg[i]);
    double conf = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    cand[i] = {st, ed, conf};
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cand[a].confidence > cand[b].confidence;
  });
  std::vector<ScoredSpan> kept;
  for (std::size_t i : order) {
    if (kept.size() >= top_k) break;
    bool overlap = false;
    for (const auto& k : kept) {
      if (iou_1d(cand[i].st, cand[i].ed, k.st, k.ed) >= nms_iou) {
        overlap = true;
        break;
      }
    }
    if (!overlap) kept.push_back(cand[i]);
  }
  return kept;
}

std::vector<char> foreground_mask(std::size_t n_clips, const LossTargets& targets) {
  std::vector<char> mask(n_clips, 0);
  for (std::size_t i = 0; i < n_clips; ++i) {
    double c = (double(i) + 0.5) / double(n_clips);
    for (std::size_t k = 0; k < targets.spans_st.size(); ++k) {
      if (c >= targets.spans_st[k] && c <= targets.spans_ed[k]) {
        mask[i] = 1;
        break;
      }
    }
  }
  return mask;
}

LossBreakdown total_loss(const TlOutput& tl, const HdOutput& hd, const Tensor& s,
                         const Tensor& v_proj, const LossTargets& targets,
                         const std::vector<Tensor>& negative_feats, const LossWeights& w) {
  std::size_t n = tl.fg_logits.numel();
  std::vector<char> mask = foreground_mask(n, targets);
  std::vector<std::size_t> fg_idx, bg_idx;
  for (std::size_t i = 0; i < n; ++i) (mask[i] ? fg_idx : bg_idx).push_back(i);

  LossBreakdown out;
  std::vector<real> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = mask[i] ? real(1) : real(0);
  out.l_f = ops::bce_with_logits_sum(tl.fg_logits, Tensor::from({n}, std::move(labels)));

  if (fg_idx.empty()) {
    out.tl_skipped = true;
    out.l_reg = Tensor::scalar(0);
    out.l_inter = Tensor::scalar(0);
  } else {
    std::size_t F = fg_idx.size();
    std::vector<real> centers(F), gst(F), ged(F);
    for (std::size_t k = 0; k < F; ++k) {
      double c = (double(fg_idx[k]) + 0.5) / double(n);
      centers[k] = real(c);
      for (std::size_t j = 0; j < targets.spans_st.size(); ++j) {
        if (c >= targets.spans_st[j] && c <= targets.spans_ed[j]) {
          gst[k] = real(targets.spans_st[j]);
          ged[k] = real(targets.spans_ed[j]);
          break;
        }
      }
    }
    Tensor cvec = Tensor::from({F}, std::move(centers));
    Tensor gt_st = Tensor::from({F}, std::move(gst));
    Tensor gt_ed = Tensor::from({F}, std::move(ged));
    Tensor off_fg = ops::gather_rows(tl.offsets, fg_idx);
    Tensor pred_st = ops::sub(cvec, ops::select_col(off_fg, 0));
    Tensor pred_ed = ops::add(cvec, ops::select_col(off_fg, 1));
    Tensor l1 = ops::add(ops::abs_(ops::sub(pred_st, gt_st)),
                         ops::abs_(ops::sub(pred_ed, gt_ed)));
    Tensor inter = ops::relu(ops::sub(ops::minimum(pred_ed, gt_ed),
                                      ops::maximum(pred_st, gt_st)));
    Tensor uni = ops::sub(ops::add(ops::sub(pred_ed, pred_st), ops::sub(gt_ed, gt_st)), inter);
    Tensor iou = ops::div(inter, uni);
    out.l_reg = ops::mean_all(ops::add(l1, ops::add_scalar(ops::neg(iou), real(1))));

    Tensor pos = ops::mean_rows(ops::gather_rows(v_proj, fg_idx));  // [D]
    std::vector<Tensor> cands;
    cands.reserve(1 + negative_feats.size());
    cands.push_back(pos);
    for (const auto& t : negative_feats) cands.push_back(t);
    Tensor sims = ops::cosine_sim_matrix(s, ops::stack_rows(cands));  // [1, 1+B]
    Tensor logits = ops::scale(ops::reshape(sims, {cands.size()}), real(1) / real(0.07));
    out.l_inter = ops::cross_entropy_index(logits, 0);
  }

  Tensor sal_fg = fg_idx.empty() ? Tensor::zeros({0}) : ops::gather_rows(hd.saliency, fg_idx);
  Tensor sal_bg = bg_idx.empty() ? Tensor::zeros({0}) : ops::gather_rows(hd.saliency, bg_idx);
  out.l_intra = ops::pairwise_hinge(sal_fg, sal_bg, real(0.2));

  out.total = ops::add(
      ops::add(ops::scale(out.l_f, w.lambda_f), ops::scale(out.l_reg, w.lambda_reg)),
      ops::add(ops::scale(out.l_inter, w.lambda_inter),
               ops::scale(out.l_intra, w.lambda_intra)));
  return out;
}

}  // namespace mlvtg
