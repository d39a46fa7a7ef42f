#pragma once

#include <cstdint>
#include <vector>

#include "mlvtg/param.hpp"

namespace mlvtg {

// Adam with bias correction. The parameter list is fixed at construction;
// frozen parameters keep a (zero) state slot so checkpoints stay aligned
// with the parameter order, but step() never touches them.
class Adam {
 public:
  struct Slot {
    std::vector<real> m;
    std::vector<real> v;
  };

  explicit Adam(ParamList params, real lr = real(1e-3), real beta1 = real(0.9),
                real beta2 = real(0.999), real eps = real(1e-8));

  void step();
  void zero_grad();

  real lr() const { return lr_; }
  void set_lr(real lr) { lr_ = lr; }

  std::uint64_t step_count() const { return t_; }
  const std::vector<Slot>& slots() const { return slots_; }
  const ParamList& params() const { return params_; }

  // Restores optimizer state from a checkpoint. Slot sizes must match the
  // current parameter list.
  void load_state(std::uint64_t t, std::vector<Slot> slots);

 private:
  ParamList params_;
  std::vector<Slot> slots_;
  real lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
};

}  // namespace mlvtg
