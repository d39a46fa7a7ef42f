#pragma once

#include <cstddef>

#include "mlvtg/tensor.hpp"

namespace mlvtg {

// State-space sequence primitive: h_t = Ā_t h_{t-1} + B̄_t x_t, y_t = C_t h_t
// with h_0 = 0, in three interchangeable forms (sequential recurrence,
// convolution kernel, parallel prefix scan).
//
// Time-invariant (LTI) parameterization uses A directly as the discrete
// state multiplier with constant per-channel B and C. The input-selective
// parameterization derives a per-step step size delta_t = softplus(x_t W_d +
// b_d) per channel and shared-across-channel B_t = b_b + x_t W_b, C_t = b_c
// + x_t W_c from the input, then discretizes as Ā = exp(delta·A) (exact
// state exponential) and B̄ = delta·B_t (Euler input term).
struct SsmParams {
  // State multiplier: exactly one of the two is defined. a_diag holds one
  // diagonal per channel [D,N]; a_full is a dense [N,N] shared across
  // channels (time-invariant modes only, no gradient support).
  Tensor a_diag;
  Tensor a_full;

  // Time-invariant input/output maps, per channel [D,N].
  Tensor b_in;
  Tensor c_out;

  // Selective projections; all defined or none.
  Tensor w_delta;  // [D,D]
  Tensor b_delta;  // [D]
  Tensor w_b;      // [D,N]
  Tensor b_b;      // [N]
  Tensor w_c;      // [D,N]
  Tensor b_c;      // [N]

  bool selective() const { return w_delta.defined(); }
  bool diagonal() const { return a_diag.defined(); }
  std::size_t n_state() const;
  std::size_t channels() const;
};

enum class SsmMode {
  lti_recurrent,
  lti_kernel,
  selective_recurrent,
  selective_parallel_scan,
};

const char* to_string(SsmMode mode);

// Throws ModeError when the parameter set does not match the mode (e.g.
// selective projections present in an LTI mode or vice versa).
void validate(const SsmParams& params, SsmMode mode);

// Impulse-response kernel of the time-invariant system, one column per
// channel: K[k,d] = C_d A^k B_d for k in [0,L). Selective parameters are
// rejected. Differentiable in diagonal mode.
Tensor ssm_kernel(const SsmParams& params, std::size_t L);

// Sequential recurrence over x [L,D] -> y [L,D]. LTI or selective is chosen
// by the parameter set. Differentiable for diagonal A; a dense A under an
// active gradient tape raises ModeError.
Tensor ssm_scan_recurrent(const SsmParams& params, const Tensor& x);

// Same map as ssm_scan_recurrent, executed as an associative prefix scan
// over (multiplier, increment) pairs. Diagonal A only; forward-only.
Tensor ssm_scan_parallel(const SsmParams& params, const Tensor& x);

// Mode dispatch used by the aligner. lti_kernel materializes the kernel and
// applies it as a causal depthwise convolution.
Tensor ssm_forward(const SsmParams& params, SsmMode mode, const Tensor& x);

// Forward-only state trajectory [L, D*N] from initial state h0 [D,N] (pass
// an undefined tensor for zeros). Row t is the state after step t, flattened
// row-major by (channel, state).
Tensor ssm_state_trajectory(const SsmParams& params, const Tensor& x, const Tensor& h0);

// One lane of the linear recurrence h' = a·h + b as a (multiplier,
// increment) pair. combine(p, q) composes q after p; it is associative,
// which is what licenses the parallel scan.
struct ScanPair {
  real a;
  real b;
};

inline ScanPair scan_combine(ScanPair p, ScanPair q) {
  return {q.a * p.a, q.a * p.b + q.b};
}

// Selective parameter set with the standard initialization: per-channel
// diagonal A[d,n] = -(n+1), small random projections, zero biases.
SsmParams make_selective_ssm(std::size_t d, std::size_t n, Rng& rng);

}  // namespace mlvtg
