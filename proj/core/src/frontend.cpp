#include "mlvtg/frontend.hpp"

#include <cmath>

#include "mlvtg/error.hpp"
#include "mlvtg/ops.hpp"

namespace mlvtg {

Ffn::Ffn(const std::string& prefix, std::size_t d_in, std::size_t d_out, Rng& rng)
    : w1(prefix + ".w1", Tensor::randn({d_in, d_out}, rng, real(1) / std::sqrt(real(d_in)))),
      b1(prefix + ".b1", Tensor::zeros({d_out})),
      w2(prefix + ".w2", Tensor::randn({d_out, d_out}, rng, real(1) / std::sqrt(real(d_out)))),
      b2(prefix + ".b2", Tensor::zeros({d_out})) {}

Tensor Ffn::forward(const Tensor& x, real dropout_p, Rng* dropout_rng) const {
  Tensor h = ops::silu(ops::linear(x, w1.tensor, b1.tensor));
  if (dropout_p > 0 && dropout_rng) h = ops::dropout(h, dropout_p, *dropout_rng);
  return ops::linear(h, w2.tensor, b2.tensor);
}

void Ffn::collect(ParamList& out) {
  out.push_back(&w1);
  out.push_back(&b1);
  out.push_back(&w2);
  out.push_back(&b2);
}

Frontend::Frontend(const FrontendConfig& cfg, Rng& rng)
    : cfg_(cfg),
      video_ffn_("frontend.video", cfg.d_in_video, cfg.d, rng),
      query_ffn_("frontend.query", cfg.d_in_query, cfg.d, rng),
      w_pool_("frontend.w_pool", Tensor::randn({1, cfg.d}, rng, real(0.02))),
      pos_video_("frontend.pos_video", Tensor::randn({cfg.max_len, cfg.d}, rng, real(0.02))),
      pos_query_("frontend.pos_query", Tensor::randn({cfg.max_len, cfg.d}, rng, real(0.02))),
      type_video_("frontend.type_video", Tensor::randn({cfg.d}, rng, real(0.02))),
      type_query_("frontend.type_query", Tensor::randn({cfg.d}, rng, real(0.02))) {}

Tensor Frontend::attentive_pool(const Tensor& q_proj) const {
  Tensor logits = ops::matmul(w_pool_.tensor, ops::transpose(q_proj));  // [1, L_q]
  Tensor weights = ops::softmax(logits);
  return ops::matmul(weights, q_proj);  // [1, D]
}

FrontendOut Frontend::forward(const Tensor& video, const Tensor& query, bool training,
                              Rng* dropout_rng) const {
  for (const Tensor* t : {&video, &query}) {
    for (real v : t->data()) {
      if (!std::isfinite(v)) throw NumericError("non-finite input feature");
    }
  }
  std::size_t lv = video.shape()[0];
  std::size_t lq = query.shape()[0];
  if (lv > cfg_.max_len || lq > cfg_.max_len) {
    throw CapacityError("sequence length exceeds positional table capacity " +
                        std::to_string(cfg_.max_len));
  }
  real p = training ? cfg_.dropout : real(0);
  FrontendOut out;
  out.v_proj = video_ffn_.forward(video, p, dropout_rng);
  out.q_proj = query_ffn_.forward(query, p, dropout_rng);
  out.tokens.s = attentive_pool(out.q_proj);

  Tensor q_emb = ops::add(
      ops::add(out.q_proj, ops::slice_rows(pos_query_.tensor, 0, lq)), type_query_.tensor);
  Tensor v_emb = ops::add(
      ops::add(out.v_proj, ops::slice_rows(pos_video_.tensor, 0, lv)), type_video_.tensor);
  out.tokens.z = ops::concat_rows(q_emb, v_emb);
  out.tokens.boundary = lq;
  return out;
}

void Frontend::collect(ParamList& out) {
  video_ffn_.collect(out);
  query_ffn_.collect(out);
  out.push_back(&w_pool_);
  out.push_back(&pos_video_);
  out.push_back(&pos_query_);
  out.push_back(&type_video_);
  out.push_back(&type_query_);
}

}  // namespace mlvtg
