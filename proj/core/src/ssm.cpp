#include "mlvtg/ssm.hpp"

#include <cmath>
#include <string>

#include "mlvtg/error.hpp"
#include "mlvtg/ops.hpp"

namespace mlvtg {

namespace {

using detail::Node;

real sigmoid_(real x) {
  if (x >= 0) return real(1) / (real(1) + std::exp(-x));
  real e = std::exp(x);
  return e / (real(1) + e);
}

real softplus_(real x) { return std::max(x, real(0)) + std::log1p(std::exp(-std::abs(x))); }

void check_input(const Tensor& x, std::size_t d, const char* what) {
  if (x.rank() != 2 || x.shape()[1] != d) {
    throw DimensionError(std::string(what) + ": input " + shape_str(x.shape()) +
                         " does not match channel count " + std::to_string(d));
  }
}

[[noreturn]] void nonfinite(std::size_t t) {
  throw NumericError("non-finite state at step " + std::to_string(t));
}

}  // namespace

std::size_t SsmParams::n_state() const {
  if (a_diag.defined()) return a_diag.shape()[1];
  if (a_full.defined()) return a_full.shape()[0];
  throw ModeError("state matrix is undefined");
}

std::size_t SsmParams::channels() const {
  if (a_diag.defined()) return a_diag.shape()[0];
  if (b_in.defined()) return b_in.shape()[0];
  if (w_delta.defined()) return w_delta.shape()[0];
  throw ModeError("channel count is undefined");
}

const char* to_string(SsmMode mode) {
  switch (mode) {
    case SsmMode::lti_recurrent: return "lti_recurrent";
    case SsmMode::lti_kernel: return "lti_kernel";
    case SsmMode::selective_recurrent: return "selective_recurrent";
    case SsmMode::selective_parallel_scan: return "selective_parallel_scan";
  }
  return "?";
}

void validate(const SsmParams& params, SsmMode mode) {
  bool has_a = params.a_diag.defined() != params.a_full.defined();
  if (!has_a) throw ModeError("exactly one of a_diag/a_full must be defined");
  bool sel_mode =
      mode == SsmMode::selective_recurrent || mode == SsmMode::selective_parallel_scan;
  bool sel_full = params.w_delta.defined() && params.b_delta.defined() &&
                  params.w_b.defined() && params.b_b.defined() && params.w_c.defined() &&
                  params.b_c.defined();
  bool sel_any = params.w_delta.defined() || params.b_delta.defined() ||
                 params.w_b.defined() || params.b_b.defined() || params.w_c.defined() ||
                 params.b_c.defined();
  if (sel_mode) {
    if (!sel_full) {
      throw ModeError(std::string("mode ") + to_string(mode) +
                      " requires the full selective projection set");
    }
    if (!params.diagonal()) {
      throw ModeError(std::string("mode ") + to_string(mode) + " requires diagonal A");
    }
    if (params.b_in.defined() || params.c_out.defined()) {
      throw ModeError("selective parameters must not carry time-invariant B/C");
    }
  } else {
    if (sel_any) {
      throw ModeError(std::string("mode ") + to_string(mode) +
                      " does not admit selective projections");
    }
    if (!params.b_in.defined() || !params.c_out.defined()) {
      throw ModeError(std::string("mode ") + to_string(mode) + " requires b_in and c_out");
    }
  }
}

// ===== kernel form =====

Tensor ssm_kernel(const SsmParams& params, std::size_t L) {
  if (params.selective()) {
    throw ModeError("ssm_kernel is only defined for time-invariant parameters");
  }
  if (L < 1) throw DimensionError("ssm_kernel needs L >= 1");
  std::size_t N = params.n_state();
  std::size_t D = params.channels();
  auto bd = params.b_in.data();
  auto cd = params.c_out.data();

  if (params.a_diag.defined()) {
    auto ad = params.a_diag.data();
    std::vector<real> out(L * D);
    std::vector<real> p(bd.begin(), bd.end());  // p[d,n] = A^k B, starts at k=0
    for (std::size_t k = 0; k < L; ++k) {
      for (std::size_t d = 0; d < D; ++d) {
        real s = 0;
        for (std::size_t n = 0; n < N; ++n) s += cd[d * N + n] * p[d * N + n];
        out[k * D + d] = s;
      }
      if (k + 1 < L) {
        for (std::size_t i = 0; i < D * N; ++i) p[i] *= ad[i];
      }
    }
    Tensor y = Tensor::from({L, D}, std::move(out));
    if (detail::wants_grad({&params.a_diag, &params.b_in, &params.c_out})) {
      auto an = params.a_diag.node();
      auto bn = params.b_in.node();
      auto cn = params.c_out.node();
      Node* yn = y.node().get();
      detail::attach(y, {params.a_diag, params.b_in, params.c_out},
                     [an, bn, cn, yn, L, D, N]() {
        if (an->requires_grad) an->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (cn->requires_grad) cn->ensure_grad();
        // p = A^k, q = dp/dA = k A^(k-1), built by p' = A p, q' = A q + p.
        std::vector<real> p(D * N, real(1));
        std::vector<real> q(D * N, real(0));
        for (std::size_t k = 0; k < L; ++k) {
          for (std::size_t d = 0; d < D; ++d) {
            real g = yn->grad[k * D + d];
            if (g == real(0)) continue;
            for (std::size_t n = 0; n < N; ++n) {
              std::size_t i = d * N + n;
              if (cn->requires_grad) cn->grad[i] += g * p[i] * bn->value[i];
              if (bn->requires_grad) bn->grad[i] += g * cn->value[i] * p[i];
              if (an->requires_grad) {
                an->grad[i] += g * cn->value[i] * bn->value[i] * q[i];
              }
            }
          }
          if (k + 1 < L) {
            for (std::size_t i = 0; i < D * N; ++i) {
              q[i] = an->value[i] * q[i] + p[i];
              p[i] *= an->value[i];
            }
          }
        }
      });
    }
    return y;
  }

  // Dense A shared across channels; no gradient path.
  if (detail::wants_grad({&params.a_full, &params.b_in, &params.c_out})) {
    throw ModeError("dense-A kernel has no gradient support; use diagonal A");
  }
  auto ad = params.a_full.data();
  std::vector<real> out(L * D);
  std::vector<real> v(bd.begin(), bd.end());  // v[d,:] = A^k B_d
  std::vector<real> tmp(N);
  for (std::size_t k = 0; k < L; ++k) {
    for (std::size_t d = 0; d < D; ++d) {
      real s = 0;
      for (std::size_t n = 0; n < N; ++n) s += cd[d * N + n] * v[d * N + n];
      out[k * D + d] = s;
    }
    if (k + 1 < L) {
      for (std::size_t d = 0; d < D; ++d) {
        for (std::size_t i = 0; i < N; ++i) {
          real s = 0;
          for (std::size_t j = 0; j < N; ++j) s += ad[i * N + j] * v[d * N + j];
          tmp[i] = s;
        }
        std::copy(tmp.begin(), tmp.end(), v.begin() + d * N);
      }
    }
  }
  return Tensor::from({L, D}, std::move(out));
}

// ===== sequential recurrence =====

namespace {

Tensor lti_scan_diag(const SsmParams& params, const Tensor& x) {
  std::size_t L = x.shape()[0];
  std::size_t D = params.channels();
  std::size_t N = params.n_state();
  std::size_t DN = D * N;
  auto xd = x.data();
  auto ad = params.a_diag.data();
  auto bd = params.b_in.data();
  auto cd = params.c_out.data();

  bool record =
      detail::wants_grad({&x, &params.a_diag, &params.b_in, &params.c_out});
  std::vector<real> h_all;  // (L+1) x DN when recording, h_0 = 0
  if (record) h_all.assign((L + 1) * DN, real(0));
  std::vector<real> h(DN, real(0));
  std::vector<real> out(L * D);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t d = 0; d < D; ++d) {
      real xv = xd[t * D + d];
      real y = 0;
      for (std::size_t n = 0; n < N; ++n) {
        std::size_t i = d * N + n;
        h[i] = ad[i] * h[i] + bd[i] * xv;
        y += cd[i] * h[i];
      }
      if (!std::isfinite(y)) nonfinite(t);
      out[t * D + d] = y;
    }
    if (record) std::copy(h.begin(), h.end(), h_all.begin() + (t + 1) * DN);
  }
  Tensor y = Tensor::from({L, D}, std::move(out));
  if (record) {
    auto xn = x.node();
    auto an = params.a_diag.node();
    auto bn = params.b_in.node();
    auto cn = params.c_out.node();
    Node* yn = y.node().get();
    detail::attach(y, {x, params.a_diag, params.b_in, params.c_out},
                   [xn, an, bn, cn, yn, L, D, N, DN, h_all = std::move(h_all)]() {
      if (xn->requires_grad) xn->ensure_grad();
      if (an->requires_grad) an->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      if (cn->requires_grad) cn->ensure_grad();
      std::vector<real> gh(DN, real(0));
      for (std::size_t t = L; t-- > 0;) {
        const real* ht = &h_all[(t + 1) * DN];
        const real* hp = &h_all[t * DN];
        for (std::size_t d = 0; d < D; ++d) {
          real gy = yn->grad[t * D + d];
          real xv = xn->value[t * D + d];
          real gx = 0;
          for (std::size_t n = 0; n < N; ++n) {
            std::size_t i = d * N + n;
            if (cn->requires_grad) cn->grad[i] += gy * ht[i];
            real g = gh[i] + gy * cn->value[i];
            if (an->requires_grad) an->grad[i] += g * hp[i];
            if (bn->requires_grad) bn->grad[i] += g * xv;
            gx += g * bn->value[i];
            gh[i] = g * an->value[i];
          }
          if (xn->requires_grad) xn->grad[t * D + d] += gx;
        }
      }
    });
  }
  return y;
}

Tensor lti_scan_full(const SsmParams& params, const Tensor& x) {
  if (detail::wants_grad({&x, &params.a_full, &params.b_in, &params.c_out})) {
    throw ModeError("dense-A recurrence has no gradient support; use diagonal A");
  }
  std::size_t L = x.shape()[0];
  std::size_t D = params.channels();
  std::size_t N = params.n_state();
  auto xd = x.data();
  auto ad = params.a_full.data();
  auto bd = params.b_in.data();
  auto cd = params.c_out.data();
  std::vector<real> h(D * N, real(0));
  std::vector<real> tmp(N);
  std::vector<real> out(L * D);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t d = 0; d < D; ++d) {
      real xv = xd[t * D + d];
      for (std::size_t i = 0; i < N; ++i) {
        real s = bd[d * N + i] * xv;
        for (std::size_t j = 0; j < N; ++j) s += ad[i * N + j] * h[d * N + j];
        tmp[i] = s;
      }
      real y = 0;
      for (std::size_t n = 0; n < N; ++n) {
        h[d * N + n] = tmp[n];
        y += cd[d * N + n] * tmp[n];
      }
      if (!std::isfinite(y)) nonfinite(t);
      out[t * D + d] = y;
    }
  }
  return Tensor::from({L, D}, std::move(out));
}

// Per-step selective quantities, written into caller buffers:
// raw = x W_d + b_d, delta = softplus(raw), bt = b_b + x W_b, ct = b_c + x W_c.
void selective_step_inputs(const SsmParams& p, const real* xt, std::size_t D, std::size_t N,
                           real* raw, real* delta, real* bt, real* ct) {
  auto wd = p.w_delta.data();
  auto bdl = p.b_delta.data();
  auto wb = p.w_b.data();
  auto bb = p.b_b.data();
  auto wc = p.w_c.data();
  auto bc = p.b_c.data();
  for (std::size_t d = 0; d < D; ++d) raw[d] = bdl[d];
  for (std::size_t n = 0; n < N; ++n) {
    bt[n] = bb[n];
    ct[n] = bc[n];
  }
  for (std::size_t j = 0; j < D; ++j) {
    real xv = xt[j];
    if (xv == real(0)) continue;
    const real* wdr = &wd[j * D];
    for (std::size_t d = 0; d < D; ++d) raw[d] += xv * wdr[d];
    const real* wbr = &wb[j * N];
    const real* wcr = &wc[j * N];
    for (std::size_t n = 0; n < N; ++n) {
      bt[n] += xv * wbr[n];
      ct[n] += xv * wcr[n];
    }
  }
  for (std::size_t d = 0; d < D; ++d) delta[d] = softplus_(raw[d]);
}

Tensor selective_scan_recurrent(const SsmParams& params, const Tensor& x) {
  std::size_t L = x.shape()[0];
  std::size_t D = params.channels();
  std::size_t N = params.n_state();
  std::size_t DN = D * N;
  auto xd = x.data();
  auto ad = params.a_diag.data();

  bool record = detail::wants_grad({&x, &params.a_diag, &params.w_delta, &params.b_delta,
                                    &params.w_b, &params.b_b, &params.w_c, &params.b_c});
  std::vector<real> raw_all, delta_all, bt_all, ct_all, abar_all, h_all;
  if (record) {
    raw_all.resize(L * D);
    delta_all.resize(L * D);
    bt_all.resize(L * N);
    ct_all.resize(L * N);
    abar_all.resize(L * DN);
    h_all.assign((L + 1) * DN, real(0));
  }
  std::vector<real> raw(D), delta(D), bt(N), ct(N);
  std::vector<real> h(DN, real(0));
  std::vector<real> out(L * D);
  for (std::size_t t = 0; t < L; ++t) {
    selective_step_inputs(params, &xd[t * D], D, N, raw.data(), delta.data(), bt.data(),
                          ct.data());
    for (std::size_t d = 0; d < D; ++d) {
      real dlt = delta[d];
      real xv = xd[t * D + d];
      real y = 0;
      for (std::size_t n = 0; n < N; ++n) {
        std::size_t i = d * N + n;
        real ab = std::exp(dlt * ad[i]);
        h[i] = ab * h[i] + dlt * bt[n] * xv;
        y += ct[n] * h[i];
        if (record) abar_all[t * DN + i] = ab;
      }
      if (!std::isfinite(y)) nonfinite(t);
      out[t * D + d] = y;
    }
    if (record) {
      std::copy(raw.begin(), raw.end(), raw_all.begin() + t * D);
      std::copy(delta.begin(), delta.end(), delta_all.begin() + t * D);
      std::copy(bt.begin(), bt.end(), bt_all.begin() + t * N);
      std::copy(ct.begin(), ct.end(), ct_all.begin() + t * N);
      std::copy(h.begin(), h.end(), h_all.begin() + (t + 1) * DN);
    }
  }
  Tensor y = Tensor::from({L, D}, std::move(out));
  if (record) {
    auto xn = x.node();
    auto an = params.a_diag.node();
    auto wdn = params.w_delta.node();
    auto bdn = params.b_delta.node();
    auto wbn = params.w_b.node();
    auto bbn = params.b_b.node();
    auto wcn = params.w_c.node();
    auto bcn = params.b_c.node();
    Node* yn = y.node().get();
    detail::attach(
        y,
        {x, params.a_diag, params.w_delta, params.b_delta, params.w_b, params.b_b,
         params.w_c, params.b_c},
        [xn, an, wdn, bdn, wbn, bbn, wcn, bcn, yn, L, D, N, DN,
         raw_all = std::move(raw_all), delta_all = std::move(delta_all),
         bt_all = std::move(bt_all), ct_all = std::move(ct_all),
         abar_all = std::move(abar_all), h_all = std::move(h_all)]() {
      for (Node* p : {static_cast<Node*>(xn.get()), an.get(), wdn.get(), bdn.get(),
                      wbn.get(), bbn.get(), wcn.get(), bcn.get()}) {
        if (p->requires_grad) p->ensure_grad();
      }
      // Adjoint recurrence run backwards in time: gh carries dL/dh_t from
      // future steps, split at each step into the state, step-size, input,
      // and projection contributions.
      std::vector<real> gh(DN, real(0));
      std::vector<real> g_delta(L * D, real(0));
      std::vector<real> g_bt(L * N, real(0));
      std::vector<real> g_ct(L * N, real(0));
      std::vector<real> gx_dir(L * D, real(0));
      for (std::size_t t = L; t-- > 0;) {
        const real* ht = &h_all[(t + 1) * DN];
        const real* hp = &h_all[t * DN];
        const real* ctv = &ct_all[t * N];
        const real* btv = &bt_all[t * N];
        for (std::size_t d = 0; d < D; ++d) {
          real gy = yn->grad[t * D + d];
          for (std::size_t n = 0; n < N; ++n) {
            std::size_t i = d * N + n;
            g_ct[t * N + n] += gy * ht[i];
            gh[i] += gy * ctv[n];
          }
        }
        for (std::size_t d = 0; d < D; ++d) {
          real dlt = delta_all[t * D + d];
          real xv = xn->value[t * D + d];
          real gdlt = 0;
          real gxv = 0;
          for (std::size_t n = 0; n < N; ++n) {
            std::size_t i = d * N + n;
            real ab = abar_all[t * DN + i];
            real g = gh[i];
            real gab = g * hp[i];
            gdlt += gab * an->value[i] * ab + g * btv[n] * xv;
            g_bt[t * N + n] += g * dlt * xv;
            gxv += g * dlt * btv[n];
            if (an->requires_grad) an->grad[i] += gab * dlt * ab;
            gh[i] = g * ab;
          }
          g_delta[t * D + d] = gdlt;
          gx_dir[t * D + d] = gxv;
        }
      }
      // delta = softplus(raw): d delta/d raw = sigmoid(raw).
      std::vector<real> g_raw(L * D);
      for (std::size_t i = 0; i < L * D; ++i) {
        g_raw[i] = g_delta[i] * sigmoid_(raw_all[i]);
      }
      for (std::size_t t = 0; t < L; ++t) {
        if (bdn->requires_grad) {
          for (std::size_t d = 0; d < D; ++d) bdn->grad[d] += g_raw[t * D + d];
        }
        if (bbn->requires_grad) {
          for (std::size_t n = 0; n < N; ++n) bbn->grad[n] += g_bt[t * N + n];
        }
        if (bcn->requires_grad) {
          for (std::size_t n = 0; n < N; ++n) bcn->grad[n] += g_ct[t * N + n];
        }
        for (std::size_t j = 0; j < D; ++j) {
          real xv = xn->value[t * D + j];
          if (wdn->requires_grad) {
            for (std::size_t d = 0; d < D; ++d) {
              wdn->grad[j * D + d] += xv * g_raw[t * D + d];
            }
          }
          if (wbn->requires_grad || wcn->requires_grad) {
            for (std::size_t n = 0; n < N; ++n) {
              if (wbn->requires_grad) wbn->grad[j * N + n] += xv * g_bt[t * N + n];
              if (wcn->requires_grad) wcn->grad[j * N + n] += xv * g_ct[t * N + n];
            }
          }
          if (xn->requires_grad) {
            real s = gx_dir[t * D + j];
            for (std::size_t d = 0; d < D; ++d) {
              s += g_raw[t * D + d] * wdn->value[j * D + d];
            }
            for (std::size_t n = 0; n < N; ++n) {
              s += g_bt[t * N + n] * wbn->value[j * N + n] +
                   g_ct[t * N + n] * wcn->value[j * N + n];
            }
            xn->grad[t * D + j] += s;
          }
        }
      }
    });
  }
  return y;
}

}  // namespace

Tensor ssm_scan_recurrent(const SsmParams& params, const Tensor& x) {
  check_input(x, params.channels(), "ssm_scan_recurrent");
  if (params.selective()) {
    validate(params, SsmMode::selective_recurrent);
    return selective_scan_recurrent(params, x);
  }
  validate(params, SsmMode::lti_recurrent);
  return params.diagonal() ? lti_scan_diag(params, x) : lti_scan_full(params, x);
}

// ===== parallel prefix scan =====

Tensor ssm_scan_parallel(const SsmParams& params, const Tensor& x) {
  check_input(x, params.channels(), "ssm_scan_parallel");
  if (!params.diagonal()) {
    throw ModeError("ssm_scan_parallel requires diagonal A");
  }
  bool sel = params.selective();
  if (sel) validate(params, SsmMode::selective_parallel_scan);
  if (detail::wants_grad({&x, &params.a_diag, &params.b_in, &params.c_out, &params.w_delta,
                          &params.b_delta, &params.w_b, &params.b_b, &params.w_c,
                          &params.b_c})) {
    throw ModeError("ssm_scan_parallel has no gradient path; use ssm_scan_recurrent");
  }
  std::size_t L = x.shape()[0];
  std::size_t D = params.channels();
  std::size_t N = params.n_state();
  std::size_t DN = D * N;
  auto xd = x.data();
  auto ad = params.a_diag.data();

  std::vector<ScanPair> lanes(L * DN);
  std::vector<real> ct_all(sel ? L * N : 0);
  if (sel) {
    std::vector<real> raw(D), delta(D), bt(N), ct(N);
    for (std::size_t t = 0; t < L; ++t) {
      selective_step_inputs(params, &xd[t * D], D, N, raw.data(), delta.data(), bt.data(),
                            ct.data());
      std::copy(ct.begin(), ct.end(), ct_all.begin() + t * N);
      for (std::size_t d = 0; d < D; ++d) {
        real xv = xd[t * D + d];
        for (std::size_t n = 0; n < N; ++n) {
          std::size_t i = d * N + n;
          lanes[t * DN + i] = {std::exp(delta[d] * ad[i]), delta[d] * bt[n] * xv};
        }
      }
    }
  } else {
    auto bd = params.b_in.data();
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t d = 0; d < D; ++d) {
        real xv = xd[t * D + d];
        for (std::size_t n = 0; n < N; ++n) {
          std::size_t i = d * N + n;
          lanes[t * DN + i] = {ad[i], bd[i] * xv};
        }
      }
    }
  }

  // Inclusive scan (Hillis-Steele): after all passes, lanes[t].b == h_t.
  for (std::size_t off = 1; off < L; off <<= 1) {
    for (std::size_t t = L; t-- > off;) {
      ScanPair* cur = &lanes[t * DN];
      const ScanPair* prev = &lanes[(t - off) * DN];
      for (std::size_t i = 0; i < DN; ++i) cur[i] = scan_combine(prev[i], cur[i]);
    }
  }

  std::vector<real> out(L * D);
  const real* cd = sel ? nullptr : params.c_out.data().data();
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t d = 0; d < D; ++d) {
      real y = 0;
      for (std::size_t n = 0; n < N; ++n) {
        real c = sel ? ct_all[t * N + n] : cd[d * N + n];
        y += c * lanes[t * DN + d * N + n].b;
      }
      if (!std::isfinite(y)) nonfinite(t);
      out[t * D + d] = y;
    }
  }
  return Tensor::from({L, D}, std::move(out));
}

// ===== dispatch =====

Tensor ssm_forward(const SsmParams& params, SsmMode mode, const Tensor& x) {
  validate(params, mode);
  switch (mode) {
    case SsmMode::lti_recurrent:
    case SsmMode::selective_recurrent:
      return ssm_scan_recurrent(params, x);
    case SsmMode::lti_kernel:
      return ops::conv1d_depthwise(x, ssm_kernel(params, x.shape()[0]), true);
    case SsmMode::selective_parallel_scan:
      return ssm_scan_parallel(params, x);
  }
  throw ModeError("unknown mode");
}

Tensor ssm_state_trajectory(const SsmParams& params, const Tensor& x, const Tensor& h0) {
  NoGradGuard ng;
  check_input(x, params.channels(), "ssm_state_trajectory");
  if (!params.diagonal()) throw ModeError("ssm_state_trajectory requires diagonal A");
  std::size_t L = x.shape()[0];
  std::size_t D = params.channels();
  std::size_t N = params.n_state();
  std::size_t DN = D * N;
  auto xd = x.data();
  auto ad = params.a_diag.data();
  std::vector<real> h(DN, real(0));
  if (h0.defined()) {
    if (h0.numel() != DN) throw DimensionError("h0 size mismatch");
    auto hd = h0.data();
    std::copy(hd.begin(), hd.end(), h.begin());
  }
  bool sel = params.selective();
  std::vector<real> raw(D), delta(D), bt(N), ct(N);
  std::vector<real> out(L * DN);
  for (std::size_t t = 0; t < L; ++t) {
    if (sel) {
      selective_step_inputs(params, &xd[t * D], D, N, raw.data(), delta.data(), bt.data(),
                            ct.data());
    }
    for (std::size_t d = 0; d < D; ++d) {
      real xv = xd[t * D + d];
      for (std::size_t n = 0; n < N; ++n) {
        std::size_t i = d * N + n;
        if (sel) {
          h[i] = std::exp(delta[d] * ad[i]) * h[i] + delta[d] * bt[n] * xv;
        } else {
          h[i] = ad[i] * h[i] + params.b_in.data()[i] * xv;
        }
        if (!std::isfinite(h[i])) nonfinite(t);
      }
    }
    std::copy(h.begin(), h.end(), out.begin() + t * DN);
  }
  return Tensor::from({L, DN}, std::move(out));
}

SsmParams make_selective_ssm(std::size_t d, std::size_t n, Rng& rng) {
  SsmParams p;
  std::vector<real> a(d * n);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < n; ++j) a[i * n + j] = -real(j + 1);
  }
  p.a_diag = Tensor::from({d, n}, std::move(a));
  real s = real(1) / std::sqrt(real(d));
  p.w_delta = Tensor::randn({d, d}, rng, s);
  p.b_delta = Tensor::zeros({d});
  p.w_b = Tensor::randn({d, n}, rng, s);
  p.b_b = Tensor::zeros({n});
  p.w_c = Tensor::randn({d, n}, rng, s);
  p.b_c = Tensor::zeros({n});
  return p;
}

}  // namespace mlvtg
