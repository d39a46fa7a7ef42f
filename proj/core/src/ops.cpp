#include "mlvtg/ops.hpp"

#include <algorithm>
#include <cmath>

namespace mlvtg::ops {

namespace {

using detail::Node;

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// Shared skeleton for elementwise unary ops: y = f(x), dx = df(x, y, gy).
template <typename F, typename DF>
Tensor unary(const Tensor& a, F f, DF df) {
  auto ad = a.data();
  std::vector<real> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = f(ad[i]);
  Tensor y = Tensor::from(a.shape(), std::move(out));
  if (detail::wants_grad({&a})) {
    auto an = a.node();
    Node* yn = y.node().get();
    detail::attach(y, {a}, [an, yn, df]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < an->value.size(); ++i) {
        an->grad[i] += df(an->value[i], yn->value[i]) * yn->grad[i];
      }
    });
  }
  return y;
}

real stable_sigmoid(real x) {
  if (x >= 0) {
    real e = std::exp(-x);
    return real(1) / (real(1) + e);
  }
  real e = std::exp(x);
  return e / (real(1) + e);
}

real stable_softplus(real x) {
  return std::max(x, real(0)) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

// ===== arithmetic =====

Tensor add(const Tensor& a, const Tensor& b) {
  auto ad = a.data();
  auto bd = b.data();
  bool bias = a.shape() != b.shape();
  if (bias) {
    if (b.rank() != 1 || a.shape().back() != b.shape()[0]) {
      throw DimensionError("add: cannot broadcast " + shape_str(b.shape()) +
                           " onto " + shape_str(a.shape()));
    }
  }
  std::size_t d = bd.size();
  std::vector<real> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] + bd[bias ? i % d : i];
  Tensor y = Tensor::from(a.shape(), std::move(out));
  if (detail::wants_grad({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    Node* yn = y.node().get();
    detail::attach(y, {a, b}, [an, bn, yn, bias, d]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += yn->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < yn->grad.size(); ++i) {
          bn->grad[bias ? i % d : i] += yn->grad[i];
        }
      }
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto ad = a.data();
  auto bd = b.data();
  std::vector<real> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] - bd[i];
  Tensor y = Tensor::from(a.shape(), std::move(out));
  if (detail::wants_grad({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    Node* yn = y.node().get();
    detail::attach(y, {a, b}, [an, bn, yn]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += yn->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] -= yn->grad[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto ad = a.data();
  auto bd = b.data();
  std::vector<real> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] * bd[i];
  Tensor y = Tensor::from(a.shape(), std::move(out));
  if (detail::wants_grad({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    Node* yn = y.node().get();
    detail::attach(y, {a, b}, [an, bn, yn]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < an->grad.size(); ++i) {
          an->grad[i] += bn->value[i] * yn->grad[i];
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < bn->grad.size(); ++i) {
          bn->grad[i] += an->value[i] * yn->grad[i];
        }
      }
    });
  }
  return y;
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  auto ad = a.data();
  auto bd = b.data();
  std::vector<real> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] / bd[i];
  Tensor y = Tensor::from(a.shape(), std::move(out));
  if (detail::wants_grad({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    Node* yn = y.node().get();
    detail::attach(y, {a, b}, [an, bn, yn]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < an->grad.size(); ++i) {
          an->grad[i] += yn->grad[i] / bn->value[i];
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < bn->grad.size(); ++i) {
          bn->grad[i] -= yn->grad[i] * an->value[i] / (bn->value[i] * bn->value[i]);
        }
      }
    });
  }
  return y;
}

Tensor neg(const Tensor& a) {
  return unary(a, [](real x) { return -x; }, [](real, real) { return real(-1); });
}

Tensor scale(const Tensor& a, real c) {
  return unary(a, [c](real x) { return c * x; }, [c](real, real) { return c; });
}

Tensor add_scalar(const Tensor& a, real c) {
  return unary(a, [c](real x) { return x + c; }, [](real, real) { return real(1); });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "maximum");
  auto ad = a.data();
  auto bd = b.data();
  std::vector<real> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] >= bd[i] ? ad[i] : bd[i];
  Tensor y = Tensor::from(a.shape(), std::move(out));
  if (detail::wants_grad({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    Node* yn = y.node().get();
    detail::attach(y, {a, b}, [an, bn, yn]() {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        bool first = an->value[i] >= bn->value[i];
        if (first && an->requires_grad) {
          an->ensure_grad();
          an->grad[i] += yn->grad[i];
        } else if (!first && bn->requires_grad) {
          bn->ensure_grad();
          bn->grad[i] += yn->grad[i];
        }
      }
    });
  }
  return y;
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "minimum");
  auto ad = a.data();
  auto bd = b.data();
  std::vector<real> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] <= bd[i] ? ad[i] : bd[i];
  Tensor y = Tensor::from(a.shape(), std::move(out));
  if (detail::wants_grad({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    Node* yn = y.node().get();
    detail::attach(y, {a, b}, [an, bn, yn]() {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        bool first = an->value[i] <= bn->value[i];
        if (first && an->requires_grad) {
          an->ensure_grad();
          an->grad[i] += yn->grad[i];
        } else if (!first && bn->requires_grad) {
          bn->ensure_grad();
          bn->grad[i] += yn->grad[i];
        }
      }
    });
  }
  return y;
}

Tensor mul_scalar_tensor(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("mul_scalar_tensor: scale must have 1 element");
  real sv = s.data()[0];
  auto ad = a.data();
  std::vector<real> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] * sv;
  Tensor y = Tensor::from(a.shape(), std::move(out));
  if (detail::wants_grad({&a, &s})) {
    auto an = a.node();
    auto sn = s.node();
    Node* yn = y.node().get();
    detail::attach(y, {a, s}, [an, sn, yn]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < an->grad.size(); ++i) {
          an->grad[i] += sn->value[0] * yn->grad[i];
        }
      }
      if (sn->requires_grad) {
        sn->ensure_grad();
        real acc = 0;
        for (std::size_t i = 0; i < yn->grad.size(); ++i) acc += an->value[i] * yn->grad[i];
        sn->grad[0] += acc;
      }
    });
  }
  return y;
}

// ===== elementwise functions =====

Tensor exp_(const Tensor& a) {
  return unary(a, [](real x) { return std::exp(x); }, [](real, real y) { return y; });
}

Tensor log_(const Tensor& a) {
  return unary(a, [](real x) { return std::log(x); }, [](real x, real) { return real(1) / x; });
}

Tensor sqrt_(const Tensor& a) {
  return unary(a, [](real x) { return std::sqrt(x); },
               [](real, real y) { return real(0.5) / y; });
}

Tensor abs_(const Tensor& a) {
  return unary(a, [](real x) { return std::abs(x); },
               [](real x, real) { return x > 0 ? real(1) : (x < 0 ? real(-1) : real(0)); });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](real x) { return x > 0 ? x : real(0); },
               [](real x, real) { return x > 0 ? real(1) : real(0); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, [](real x) { return stable_sigmoid(x); },
               [](real, real y) { return y * (real(1) - y); });
}

Tensor silu(const Tensor& a) {
  return unary(a, [](real x) { return x * stable_sigmoid(x); },
               [](real x, real) {
                 real s = stable_sigmoid(x);
                 return s * (real(1) + x * (real(1) - s));
               });
}

Tensor softplus(const Tensor& a) {
  return unary(a, [](real x) { return stable_softplus(x); },
               [](real x, real) { return stable_sigmoid(x); });
}

Tensor tanh_(const Tensor& a) {
  return unary(a, [](real x) { return std::tanh(x); },
               [](real, real y) { return real(1) - y * y; });
}

// ===== reductions =====

Tensor sum_all(const Tensor& a) {
  auto ad = a.data();
  real s = 0;
  for (real x : ad) s += x;
  Tensor y = Tensor::scalar(s);
  if (detail::wants_grad({&a})) {
    auto an = a.node();
    Node* yn = y.node().get();
    detail::attach(y, {a}, [an, yn]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += yn->grad[0];
    });
  }
  return y;
}

Tensor mean_all(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean_all of empty tensor");
  auto ad = a.data();
  real s = 0;
  for (real x : ad) s += x;
  real inv = real(1) / real(ad.size());
  Tensor y = Tensor::scalar(s * inv);
  if (detail::wants_grad({&a})) {
    auto an = a.node();
    Node* yn = y.node().get();
    detail::attach(y, {a}, [an, yn, inv]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += inv * yn->grad[0];
    });
  }
  return y;
}

Tensor mean_rows(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("mean_rows expects rank 2, got " + shape_str(a.shape()));
  std::size_t L = a.shape()[0];
  std::size_t D = a.shape()[1];
  if (L == 0) throw DimensionError("mean_rows of zero rows");
  auto ad = a.data();
  std::vector<real> out(D, real(0));
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t d = 0; d < D; ++d) out[d] += ad[t * D + d];
  }
  real inv = real(1) / real(L);
  for (auto& x : out) x *= inv;
  Tensor y = Tensor::from({D}, std::move(out));
  if (detail::wants_grad({&a})) {
    auto an = a.node();
    Node* yn = y.node().get();
    detail::attach(y, {a}, [an, yn, L, D, inv]() {
      an->ensure_grad();
      for (std::size_t t = 0; t < L; ++t) {
        for (std::size_t d = 0; d < D; ++d) an->grad[t * D + d] += inv * yn->grad[d];
      }
    });
  }
  return y;
}

// ===== shape =====

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  auto ad = a.data();
  Tensor y = Tensor::from(shape, std::vector<real>(ad.begin(), ad.end()));
  if (detail::wants_grad({&a})) {
    auto an = a.node();
    Node* yn = y.node().get();
    detail::attach(y, {a}, [an, yn]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += yn->grad[i];
    });
  }
  return y;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects rank 2, got " + shape_str(a.shape()));
  std::size_t m = a.shape()[0];
  std::size_t n = a.shape()[1];
  auto ad = a.data();
  std::vector<real> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
  }
  Tensor y = Tensor::from({n, m}, std::move(out));
  if (detail::wants_grad({&a})) {
    auto an = a.node();
    Node* yn = y.node().get();
    detail::attach(y, {a}, [an, yn, m, n]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += yn->grad[j * m + i];
      }
    });
  }
  return y;
}

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
  if (a.rank() < 1 || r1 > a.shape()[0] || r0 > r1) {
    throw DimensionError("slice_rows [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") of " + shape_str(a.shape()));
  }
  std::size_t stride = a.numel() / a.shape()[0];
  auto ad = a.data();
  Shape os = a.shape();
  os[0] = r1 - r0;
  std::vector<real> out(ad.begin() + r0 * stride, ad.begin() + r1 * stride);
  Tensor y = Tensor::from(os, std::move(out));
  if (detail::wants_grad({&a})) {
    auto an = a.node();
    Node* yn = y.node().get();
    detail::attach(y, {a}, [an, yn, r0, stride]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        an->grad[r0 * stride + i] += yn->grad[i];
      }
    });
  }
  return y;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() < 1) {
    throw DimensionError("concat_rows rank mismatch");
  }
  for (std::size_t i = 1; i < a.rank(); ++i) {
    if (a.shape()[i] != b.shape()[i]) {
      throw DimensionError("concat_rows trailing extents differ: " + shape_str(a.shape()) +
                           " vs " + shape_str(b.shape()));
    }
  }
  auto ad = a.data();
  auto bd = b.data();
  Shape os = a.shape();
  os[0] += b.shape()[0];
  std::vector<real> out;
  out.reserve(ad.size() + bd.size());
  out.insert(out.end(), ad.begin(), ad.end());
  out.insert(out.end(), bd.begin(), bd.end());
  Tensor y = Tensor::from(os, std::move(out));
  if (detail::wants_grad({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    Node* yn = y.node().get();
    std::size_t na = ad.size();
    detail::attach(y, {a, b}, [an, bn, yn, na]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < na; ++i) an->grad[i] += yn->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += yn->grad[na + i];
      }
    });
  }
  return y;
}

Tensor reverse_rows(const Tensor& a) {
  if (a.rank() < 1) throw DimensionError("reverse_rows on rank-0 tensor");
  std::size_t L = a.shape()[0];
  std::size_t stride = a.numel() / std::max<std::size_t>(L, 1);
  auto ad = a.data();
  std::vector<real> out(ad.size());
  for (std::size_t t = 0; t < L; ++t) {
    std::copy(ad.begin() + t * stride, ad.begin() + (t + 1) * stride,
              out.begin() + (L - 1 - t) * stride);
  }
  Tensor y = Tensor::from(a.shape(), std::move(out));
  if (detail::wants_grad({&a})) {
    auto an = a.node();
    Node* yn = y.node().get();
    detail::attach(y, {a}, [an, yn, L, stride]() {
      an->ensure_grad();
      for (std::size_t t = 0; t < L; ++t) {
        for (std::size_t j = 0; j < stride; ++j) {
          an->grad[t * stride + j] += yn->grad[(L - 1 - t) * stride + j];
        }
      }
    });
  }
  return y;
}

Tensor select_col(const Tensor& a, std::size_t j) {
  if (a.rank() != 2 || j >= a.shape()[1]) {
    throw DimensionError("select_col " + std::to_string(j) + " of " + shape_str(a.shape()));
  }
  std::size_t L = a.shape()[0];
  std::size_t C = a.shape()[1];
  auto ad = a.data();
  std::vector<real> out(L);
  for (std::size_t t = 0; t < L; ++t) out[t] = ad[t * C + j];
  Tensor y = Tensor::from({L}, std::move(out));
  if (detail::wants_grad({&a})) {
    auto an = a.node();
    Node* yn = y.node().get();
    detail::attach(y, {a}, [an, yn, C, j]() {
      an->ensure_grad();
      for (std::size_t t = 0; t < yn->grad.size(); ++t) an->grad[t * C + j] += yn->grad[t];
    });
  }
  return y;
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
  if (a.rank() < 1) throw DimensionError("gather_rows on rank-0 tensor");
  std::size_t L = a.shape()[0];
  std::size_t stride = a.numel() / std::max<std::size_t>(L, 1);
  auto ad = a.data();
  Shape os = a.shape();
  os[0] = idx.size();
  std::vector<real> out(idx.size() * stride);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= L) throw DimensionError("gather_rows index out of range");
    std::copy(ad.begin() + idx[k] * stride, ad.begin() + (idx[k] + 1) * stride,
              out.begin() + k * stride);
  }
  Tensor y = Tensor::from(os, std::move(out));
  if (detail::wants_grad({&a})) {
    auto an = a.node();
    Node* yn = y.node().get();
    auto ix = idx;
    detail::attach(y, {a}, [an, yn, ix, stride]() {
      an->ensure_grad();
      for (std::size_t k = 0; k < ix.size(); ++k) {
        for (std::size_t j = 0; j < stride; ++j) {
          an->grad[ix[k] * stride + j] += yn->grad[k * stride + j];
        }
      }
    });
  }
  return y;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw DimensionError("stack_rows of zero tensors");
  std::size_t D = rows[0].numel();
  std::vector<real> out;
  out.reserve(rows.size() * D);
  bool any_grad = false;
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.numel() != D) {
      throw DimensionError("stack_rows expects equal-length rank-1 tensors");
    }
    auto rd = r.data();
    out.insert(out.end(), rd.begin(), rd.end());
    if (r.requires_grad()) any_grad = true;
  }
  Tensor y = Tensor::from({rows.size(), D}, std::move(out));
  if (detail::grad_enabled() && any_grad) {
    std::vector<std::shared_ptr<Node>> pnodes;
    pnodes.reserve(rows.size());
    for (const auto& r : rows) pnodes.push_back(r.node());
    Node* yn = y.node().get();
    detail::attach(y, rows, [pnodes, yn, D]() {
      for (std::size_t k = 0; k < pnodes.size(); ++k) {
        if (!pnodes[k]->requires_grad) continue;
        pnodes[k]->ensure_grad();
        for (std::size_t j = 0; j < D; ++j) {
          pnodes[k]->grad[j] += yn->grad[k * D + j];
        }
      }
    });
  }
  return y;
}

// ===== linear algebra =====

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::size_t m = a.shape()[0];
  std::size_t k = a.shape()[1];
  std::size_t n = b.shape()[1];
  auto ad = a.data();
  auto bd = b.data();
  std::vector<real> out(m * n, real(0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      real av = ad[i * k + p];
      if (av == real(0)) continue;
      const real* brow = &bd[p * n];
      real* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  Tensor y = Tensor::from({m, n}, std::move(out));
  if (detail::wants_grad({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    Node* yn = y.node().get();
    detail::attach(y, {a, b}, [an, bn, yn, m, k, n]() {
      if (an->requires_grad) {
        an->ensure_grad();
        // gA[i,p] = sum_j gY[i,j] B[p,j]
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            real s = 0;
            const real* gy = &yn->grad[i * n];
            const real* brow = &bn->value[p * n];
            for (std::size_t j = 0; j < n; ++j) s += gy[j] * brow[j];
            an->grad[i * k + p] += s;
          }
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        // gB[p,j] = sum_i A[i,p] gY[i,j]
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            real av = an->value[i * k + p];
            if (av == real(0)) continue;
            const real* gy = &yn->grad[i * n];
            real* gb = &bn->grad[p * n];
            for (std::size_t j = 0; j < n; ++j) gb[j] += av * gy[j];
          }
        }
      }
    });
  }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  if (b.defined()) y = add(y, b);
  return y;
}

// ===== normalization =====

Tensor softmax(const Tensor& a) {
  if (a.rank() != 1 && a.rank() != 2) {
    throw DimensionError("softmax expects rank 1 or 2, got " + shape_str(a.shape()));
  }
  std::size_t rows = a.rank() == 2 ? a.shape()[0] : 1;
  std::size_t cols = a.rank() == 2 ? a.shape()[1] : a.shape()[0];
  auto ad = a.data();
  for (real v : ad) {
    if (!std::isfinite(v)) throw NumericError("softmax input is not finite");
  }
  std::vector<real> out(ad.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const real* x = &ad[r * cols];
    real* y = &out[r * cols];
    real mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    real z = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    real inv = real(1) / z;
    for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
  }
  Tensor y = Tensor::from(a.shape(), std::move(out));
  if (detail::wants_grad({&a})) {
    auto an = a.node();
    Node* yn = y.node().get();
    detail::attach(y, {a}, [an, yn, rows, cols]() {
      an->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const real* p = &yn->value[r * cols];
        const real* g = &yn->grad[r * cols];
        real dot = 0;
        for (std::size_t j = 0; j < cols; ++j) dot += p[j] * g[j];
        for (std::size_t j = 0; j < cols; ++j) {
          an->grad[r * cols + j] += p[j] * (g[j] - dot);
        }
      }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps) {
  if (x.rank() != 1 && x.rank() != 2) {
    throw DimensionError("layer_norm expects rank 1 or 2, got " + shape_str(x.shape()));
  }
  std::size_t rows = x.rank() == 2 ? x.shape()[0] : 1;
  std::size_t D = x.rank() == 2 ? x.shape()[1] : x.shape()[0];
  if (gamma.numel() != D || beta.numel() != D) {
    throw DimensionError("layer_norm parameter size mismatch");
  }
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<real> out(xd.size());
  std::vector<real> xhat(xd.size());
  std::vector<real> inv_std(rows);
  std::vector<char> floored(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const real* xr = &xd[r * D];
    real mu = 0;
    for (std::size_t j = 0; j < D; ++j) mu += xr[j];
    mu /= real(D);
    real var = 0;
    for (std::size_t j = 0; j < D; ++j) {
      real c = xr[j] - mu;
      var += c * c;
    }
    var /= real(D);
    floored[r] = var < eps;
    real s = real(1) / std::sqrt(std::max(var, eps));
    inv_std[r] = s;
    for (std::size_t j = 0; j < D; ++j) {
      real h = (xr[j] - mu) * s;
      xhat[r * D + j] = h;
      out[r * D + j] = gd[j] * h + bd[j];
    }
  }
  Tensor y = Tensor::from(x.shape(), std::move(out));
  if (detail::wants_grad({&x, &gamma, &beta})) {
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    Node* yn = y.node().get();
    detail::attach(y, {x, gamma, beta},
                   [xn, gn, bn, yn, rows, D, xhat = std::move(xhat),
                    inv_std = std::move(inv_std), floored = std::move(floored)]() {
      for (std::size_t r = 0; r < rows; ++r) {
        const real* gy = &yn->grad[r * D];
        const real* h = &xhat[r * D];
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (std::size_t j = 0; j < D; ++j) gn->grad[j] += gy[j] * h[j];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t j = 0; j < D; ++j) bn->grad[j] += gy[j];
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          real s = inv_std[r];
          // g = gy * gamma; with the floor active the scale is constant so
          // only the mean term survives.
          real gmean = 0;
          real ghmean = 0;
          for (std::size_t j = 0; j < D; ++j) {
            real g = gy[j] * gn->value[j];
            gmean += g;
            ghmean += g * h[j];
          }
          gmean /= real(D);
          ghmean /= real(D);
          for (std::size_t j = 0; j < D; ++j) {
            real g = gy[j] * gn->value[j];
            real dx = floored[r] ? (g - gmean) : (g - gmean - h[j] * ghmean);
            xn->grad[r * D + j] += s * dx;
          }
        }
      }
    });
  }
  return y;
}

// ===== convolution =====

Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernel, bool causal) {
  if (x.rank() != 2 || kernel.rank() != 2 || x.shape()[1] != kernel.shape()[1]) {
    throw DimensionError("conv1d_depthwise " + shape_str(x.shape()) + " with kernel " +
                         shape_str(kernel.shape()));
  }
  std::size_t L = x.shape()[0];
  std::size_t D = x.shape()[1];
  std::size_t K = kernel.shape()[0];
  std::ptrdiff_t c = causal ? 0 : static_cast<std::ptrdiff_t>((K - 1) / 2);
  auto xd = x.data();
  auto kd = kernel.data();
  std::vector<real> out(L * D, real(0));
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(k) + c;
      if (s < 0 || s >= static_cast<std::ptrdiff_t>(L)) continue;
      const real* xr = &xd[static_cast<std::size_t>(s) * D];
      const real* kr = &kd[k * D];
      real* orow = &out[t * D];
      for (std::size_t d = 0; d < D; ++d) orow[d] += kr[d] * xr[d];
    }
  }
  Tensor y = Tensor::from({L, D}, std::move(out));
  if (detail::wants_grad({&x, &kernel})) {
    auto xn = x.node();
    auto kn = kernel.node();
    Node* yn = y.node().get();
    detail::attach(y, {x, kernel}, [xn, kn, yn, L, D, K, c]() {
      if (xn->requires_grad) xn->ensure_grad();
      if (kn->requires_grad) kn->ensure_grad();
      for (std::size_t t = 0; t < L; ++t) {
        for (std::size_t k = 0; k < K; ++k) {
          std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(k) + c;
          if (s < 0 || s >= static_cast<std::ptrdiff_t>(L)) continue;
          std::size_t su = static_cast<std::size_t>(s);
          const real* gy = &yn->grad[t * D];
          if (xn->requires_grad) {
            const real* kr = &kn->value[k * D];
            real* gx = &xn->grad[su * D];
            for (std::size_t d = 0; d < D; ++d) gx[d] += kr[d] * gy[d];
          }
          if (kn->requires_grad) {
            const real* xr = &xn->value[su * D];
            real* gk = &kn->grad[k * D];
            for (std::size_t d = 0; d < D; ++d) gk[d] += xr[d] * gy[d];
          }
        }
      }
    });
  }
  return y;
}

Tensor conv1d_causal(const Tensor& x, const Tensor& kernel) {
  if (x.rank() != 1 || kernel.rank() != 1) {
    throw DimensionError("conv1d_causal expects rank-1 tensors");
  }
  Tensor x2 = reshape(x, {x.numel(), 1});
  Tensor k2 = reshape(kernel, {kernel.numel(), 1});
  return reshape(conv1d_depthwise(x2, k2, true), {x.numel()});
}

// ===== similarity =====

Tensor cosine_sim_matrix(const Tensor& a, const Tensor& b, real eps) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1]) {
    throw DimensionError("cosine_sim_matrix " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  std::size_t m = a.shape()[0];
  std::size_t n = b.shape()[0];
  std::size_t d = a.shape()[1];
  auto ad = a.data();
  auto bd = b.data();
  std::vector<real> na(m), nb(n);
  for (std::size_t i = 0; i < m; ++i) {
    real s = 0;
    for (std::size_t k = 0; k < d; ++k) s += ad[i * d + k] * ad[i * d + k];
    na[i] = std::max(std::sqrt(s), eps);
  }
  for (std::size_t j = 0; j < n; ++j) {
    real s = 0;
    for (std::size_t k = 0; k < d; ++k) s += bd[j * d + k] * bd[j * d + k];
    nb[j] = std::max(std::sqrt(s), eps);
  }
  std::vector<real> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      real dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += ad[i * d + k] * bd[j * d + k];
      out[i * n + j] = dot / (na[i] * nb[j]);
    }
  }
  Tensor y = Tensor::from({m, n}, std::move(out));
  if (detail::wants_grad({&a, &b})) {
    auto an = a.node();
    auto bn = b.node();
    Node* yn = y.node().get();
    detail::attach(y, {a, b},
                   [an, bn, yn, m, n, d, na = std::move(na), nb = std::move(nb)]() {
      // c = <a,b>/(na nb); dc/da = b/(na nb) - c a/na^2 (norm treated as
      // constant when the eps floor is active, i.e. |a| < eps).
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          real g = yn->grad[i * n + j];
          if (g == real(0)) continue;
          real c = yn->value[i * n + j];
          real inv = real(1) / (na[i] * nb[j]);
          if (an->requires_grad) {
            an->ensure_grad();
            real na2 = na[i] * na[i];
            for (std::size_t k = 0; k < d; ++k) {
              real da = bn->value[j * d + k] * inv - c * an->value[i * d + k] / na2;
              an->grad[i * d + k] += g * da;
            }
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            real nb2 = nb[j] * nb[j];
            for (std::size_t k = 0; k < d; ++k) {
              real db = an->value[i * d + k] * inv - c * bn->value[j * d + k] / nb2;
              bn->grad[j * d + k] += g * db;
            }
          }
        }
      }
    });
  }
  return y;
}

// ===== losses =====

Tensor bce_with_logits_sum(const Tensor& logits, const Tensor& labels) {
  if (logits.numel() != labels.numel()) {
    throw DimensionError("bce_with_logits_sum size mismatch");
  }
  auto zd = logits.data();
  auto yd = labels.data();
  real loss = 0;
  for (std::size_t i = 0; i < zd.size(); ++i) {
    real z = zd[i];
    loss += std::max(z, real(0)) - z * yd[i] + std::log1p(std::exp(-std::abs(z)));
  }
  Tensor out = Tensor::scalar(loss);
  if (detail::wants_grad({&logits})) {
    auto zn = logits.node();
    auto yn = labels.node();
    Node* on = out.node().get();
    detail::attach(out, {logits, labels}, [zn, yn, on]() {
      if (!zn->requires_grad) return;
      zn->ensure_grad();
      for (std::size_t i = 0; i < zn->value.size(); ++i) {
        zn->grad[i] += (stable_sigmoid(zn->value[i]) - yn->value[i]) * on->grad[0];
      }
    });
  }
  return out;
}

Tensor cross_entropy_index(const Tensor& logits, std::size_t index) {
  if (logits.rank() != 1 || index >= logits.numel()) {
    throw DimensionError("cross_entropy_index: bad logits shape or index");
  }
  auto zd = logits.data();
  real mx = zd[0];
  for (real z : zd) mx = std::max(mx, z);
  real lse = 0;
  for (real z : zd) lse += std::exp(z - mx);
  lse = mx + std::log(lse);
  Tensor out = Tensor::scalar(lse - zd[index]);
  if (detail::wants_grad({&logits})) {
    auto zn = logits.node();
    Node* on = out.node().get();
    real lse_c = lse;
    detail::attach(out, {logits}, [zn, on, index, lse_c]() {
      zn->ensure_grad();
      for (std::size_t i = 0; i < zn->value.size(); ++i) {
        real p = std::exp(zn->value[i] - lse_c);
        zn->grad[i] += (p - (i == index ? real(1) : real(0))) * on->grad[0];
      }
    });
  }
  return out;
}

Tensor pairwise_hinge(const Tensor& fg, const Tensor& bg, real margin) {
  std::size_t F = fg.numel();
  std::size_t G = bg.numel();
  if (F == 0 || G == 0) return Tensor::scalar(real(0));
  auto fd = fg.data();
  auto gd = bg.data();
  real loss = 0;
  for (std::size_t i = 0; i < F; ++i) {
    for (std::size_t j = 0; j < G; ++j) {
      loss += std::max(real(0), margin - fd[i] + gd[j]);
    }
  }
  real inv = real(1) / real(F * G);
  Tensor out = Tensor::scalar(loss * inv);
  if (detail::wants_grad({&fg, &bg})) {
    auto fn = fg.node();
    auto gn = bg.node();
    Node* on = out.node().get();
    detail::attach(out, {fg, bg}, [fn, gn, on, F, G, margin, inv]() {
      for (std::size_t i = 0; i < F; ++i) {
        for (std::size_t j = 0; j < G; ++j) {
          if (margin - fn->value[i] + gn->value[j] <= real(0)) continue;
          real w = inv * on->grad[0];
          if (fn->requires_grad) {
            fn->ensure_grad();
            fn->grad[i] -= w;
          }
          if (gn->requires_grad) {
            gn->ensure_grad();
            gn->grad[j] += w;
          }
        }
      }
    });
  }
  return out;
}

// ===== regularization =====

Tensor dropout(const Tensor& x, real p, Rng& rng) {
  if (p < real(0) || p >= real(1)) throw NumericError("dropout probability must be in [0,1)");
  if (p == real(0)) return x;
  auto xd = x.data();
  real keep = real(1) - p;
  real scl = real(1) / keep;
  std::vector<char> mask(xd.size());
  std::vector<real> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    mask[i] = rng.uniform() >= p;
    out[i] = mask[i] ? xd[i] * scl : real(0);
  }
  Tensor y = Tensor::from(x.shape(), std::move(out));
  if (detail::wants_grad({&x})) {
    auto xn = x.node();
    Node* yn = y.node().get();
    detail::attach(y, {x}, [xn, yn, mask = std::move(mask), scl]() {
      xn->ensure_grad();
      for (std::size_t i = 0; i < xn->grad.size(); ++i) {
        if (mask[i]) xn->grad[i] += scl * yn->grad[i];
      }
    });
  }
  return y;
}

}  // namespace mlvtg::ops
