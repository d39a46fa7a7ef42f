#pragma once

#include <string>
#include <vector>

#include "mlvtg/tensor.hpp"

namespace mlvtg {

// A named trainable tensor. Frozen parameters keep their values, receive no
// gradients, and are skipped by the optimizer.
struct Parameter {
  std::string name;
  Tensor tensor;

  Parameter() = default;
  Parameter(std::string n, Tensor t) : name(std::move(n)), tensor(std::move(t)) {
    tensor.set_requires_grad(true);
  }

  bool frozen() const { return frozen_; }
  void freeze() {
    frozen_ = true;
    tensor.set_requires_grad(false);
  }
  void unfreeze() {
    frozen_ = false;
    tensor.set_requires_grad(true);
  }

 private:
  bool frozen_ = false;
};

using ParamList = std::vector<Parameter*>;

}  // namespace mlvtg
