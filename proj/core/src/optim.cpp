#include "mlvtg/optim.hpp"

#include <cmath>

#include "mlvtg/error.hpp"

namespace mlvtg {

Adam::Adam(ParamList params, real lr, real beta1, real beta2, real eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  slots_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    std::size_t n = params_[i]->tensor.numel();
    slots_[i].m.assign(n, real(0));
    slots_[i].v.assign(n, real(0));
  }
}

void Adam::step() {
  ++t_;
  real bc1 = real(1) - std::pow(beta1_, real(t_));
  real bc2 = real(1) - std::pow(beta2_, real(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (p.frozen() || !p.tensor.has_grad()) continue;
    auto g = p.tensor.grad();
    auto w = p.tensor.mutable_data();
    Slot& s = slots_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      s.m[j] = beta1_ * s.m[j] + (real(1) - beta1_) * g[j];
      s.v[j] = beta2_ * s.v[j] + (real(1) - beta2_) * g[j] * g[j];
      real mhat = s.m[j] / bc1;
      real vhat = s.v[j] / bc2;
      w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->tensor.zero_grad();
}

void Adam::load_state(std::uint64_t t, std::vector<Slot> slots) {
  if (slots.size() != slots_.size()) {
    throw FormatError("optimizer state has " + std::to_string(slots.size()) +
                      " slots, model has " + std::to_string(slots_.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].m.size() != slots_[i].m.size() || slots[i].v.size() != slots_[i].v.size()) {
      throw FormatError("optimizer slot " + std::to_string(i) + " size mismatch");
    }
  }
  t_ = t;
  slots_ = std::move(slots);
}

}  // namespace mlvtg
