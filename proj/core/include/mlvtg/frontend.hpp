#pragma once

#include <cstddef>

#include "mlvtg/param.hpp"
#include "mlvtg/tensor.hpp"

namespace mlvtg {

// Two-layer projection network: linear(d_in -> d_out), SiLU, optional
// dropout, linear(d_out -> d_out).
struct Ffn {
  Parameter w1, b1, w2, b2;

  Ffn() = default;
  Ffn(const std::string& prefix, std::size_t d_in, std::size_t d_out, Rng& rng);

  Tensor forward(const Tensor& x, real dropout_p, Rng* dropout_rng) const;
  void collect(ParamList& out);
};

struct FrontendConfig {
  std::size_t d_in_video = 32;
  std::size_t d_in_query = 24;
  std::size_t d = 16;
  std::size_t max_len = 512;  // positional table capacity per modality
  real dropout = real(0.1);
};

// Query tokens first, then video clips: Z = [Q̃; Ṽ], boundary = L_q.
struct SharedTokens {
  Tensor z;        // [L_q + L_v, D]
  Tensor s;        // [1, D] pooled sentence vector
  std::size_t boundary = 0;
};

struct FrontendOut {
  Tensor v_proj;  // [L_v, D] projected clips (highlight branch input)
  Tensor q_proj;  // [L_q, D] projected tokens
  SharedTokens tokens;
};

// Projects both modalities into the shared width, pools the query into a
// sentence vector with softmax attention, and assembles the joint sequence
// with positional and modality-type embeddings.
class Frontend {
 public:
  Frontend(const FrontendConfig& cfg, Rng& rng);

  FrontendOut forward(const Tensor& video, const Tensor& query, bool training,
                      Rng* dropout_rng) const;

  // S = softmax(w_pool Qᵀ) Q.
  Tensor attentive_pool(const Tensor& q_proj) const;

  const FrontendConfig& config() const { return cfg_; }
  void collect(ParamList& out);

 private:
  FrontendConfig cfg_;
  Ffn video_ffn_, query_ffn_;
  Parameter w_pool_;              // [1, D]
  Parameter pos_video_, pos_query_;  // [max_len, D]
  Parameter type_video_, type_query_;  // [D]
};

}  // namespace mlvtg
