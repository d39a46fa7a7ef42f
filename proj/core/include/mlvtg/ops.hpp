#pragma once

#include <cstddef>
#include <vector>

#include "mlvtg/tensor.hpp"

namespace mlvtg::ops {

// ===== arithmetic =====

// Same shape, or b rank-1 matching the last extent of a (row-broadcast bias).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);  // same shape
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor div(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, real c);
Tensor add_scalar(const Tensor& a, real c);

// Elementwise max/min of two same-shape tensors. On ties the gradient goes
// to the first argument.
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);

// a scaled by a single-element tensor (learnable scalar), gradient to both.
Tensor mul_scalar_tensor(const Tensor& a, const Tensor& s);

// ===== elementwise functions =====

Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a);
Tensor sqrt_(const Tensor& a);
Tensor abs_(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor tanh_(const Tensor& a);

// ===== reductions =====

Tensor sum_all(const Tensor& a);   // -> [1]
Tensor mean_all(const Tensor& a);  // -> [1]
Tensor mean_rows(const Tensor& a); // [L,D] -> [D], mean over rows

// ===== shape =====

Tensor reshape(const Tensor& a, const Shape& shape);
Tensor transpose(const Tensor& a);                        // [m,n] -> [n,m]
Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1);  // rows [r0,r1)
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor reverse_rows(const Tensor& a);                     // flip extent 0
Tensor select_col(const Tensor& a, std::size_t j);        // [L,C] -> [L]
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx);
Tensor stack_rows(const std::vector<Tensor>& rows);       // k x [D] -> [k,D]

// ===== linear algebra =====

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n] -> [m,n]

// y = x W + b with x [L,in], W [in,out], b [out] (b may be undefined).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// ===== normalization =====

// Numerically safe softmax (max subtracted). Rank 1, or rank 2 row-wise.
Tensor softmax(const Tensor& a);

// Row-wise layer norm over the last dimension. The denominator is
// sqrt(max(var, eps)) so a constant row maps exactly to beta and a row with
// variance >= eps is standardized to unit variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  real eps = real(1e-5));

// ===== convolution =====

// Depthwise convolution along the sequence axis: x [L,D], kernel [K,D],
// y[t,d] = sum_k kernel[k,d] * x[t-k+c,d] over in-range taps. Causal mode
// uses c = 0 (left padding only), so a unit impulse at t=0 reproduces the
// kernel in index order; otherwise c = (K-1)/2 (same padding, centered).
Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernel, bool causal = true);

// Single-channel causal convolution: x [L], kernel [K] -> [L].
Tensor conv1d_causal(const Tensor& x, const Tensor& kernel);

// ===== similarity =====

// c[i,j] = <a_i, b_j> / (max(|a_i|, eps) * max(|b_j|, eps)) for a [m,d],
// b [n,d] -> [m,n].
Tensor cosine_sim_matrix(const Tensor& a, const Tensor& b, real eps = real(1e-12));

// ===== losses =====

// Stable binary cross entropy with logits, summed over elements:
// sum_i max(z,0) - z*y + log(1 + exp(-|z|)). Labels carry no gradient.
Tensor bce_with_logits_sum(const Tensor& logits, const Tensor& labels);

// -log softmax(logits)[index] for rank-1 logits, computed stably.
Tensor cross_entropy_index(const Tensor& logits, std::size_t index);

// mean_{i,j} relu(margin - fg[i] + bg[j]) over all foreground/background
// score pairs. Either side may be empty; the result is then exactly zero.
Tensor pairwise_hinge(const Tensor& fg, const Tensor& bg, real margin);

// ===== regularization =====

// Inverted dropout: zero each element with probability p, scale the rest by
// 1/(1-p). p == 0 is the identity.
Tensor dropout(const Tensor& x, real p, Rng& rng);

}  // namespace mlvtg::ops
