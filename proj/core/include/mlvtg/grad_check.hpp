#pragma once

#include <functional>
#include <string>

#include "mlvtg/param.hpp"

namespace mlvtg {

struct GradCheckResult {
  real max_rel_err = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  real analytic = 0;
  real numeric = 0;
  std::size_t checked = 0;
};

// Central-difference verification of reverse-mode gradients.
//
// `f` must rebuild the scalar loss from the current parameter values on every
// call. The function is evaluated twice up front; if the two values differ
// the loss is not a pure function of the parameters (stray randomness,
// uninitialized state) and an OracleError is thrown, since finite differences
// would be meaningless.
//
// Relative error per element: |a - n| / max(|a|, |n|, 1e-6). Frozen
// parameters are skipped. `max_per_param` > 0 checks an evenly strided
// subset of each parameter instead of every element.
GradCheckResult check_gradients(const std::function<Tensor()>& f, const ParamList& params,
                                real h = real(1e-5), std::size_t max_per_param = 0);

}  // namespace mlvtg
