#include "mlvtg/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "mlvtg/error.hpp"

namespace mlvtg {

GradCheckResult check_gradients(const std::function<Tensor()>& f, const ParamList& params,
                                real h, std::size_t max_per_param) {
  real v1, v2;
  {
    NoGradGuard ng;
    v1 = f().item();
    v2 = f().item();
  }
  if (v1 != v2) {
    throw OracleError("loss is not deterministic across evaluations (" + std::to_string(v1) +
                      " vs " + std::to_string(v2) + "); finite differences are invalid");
  }
  if (!std::isfinite(v1)) {
    throw OracleError("loss is not finite at the evaluation point");
  }

  for (Parameter* p : params) p->tensor.zero_grad();
  Tensor loss = f();
  // with every checked parameter frozen the loss can be grad-free; the loop
  // below then compares finite differences against an implicit zero
  if (loss.requires_grad()) loss.backward();

  GradCheckResult res;
  for (Parameter* p : params) {
    if (p->frozen()) continue;
    std::size_t n = p->tensor.numel();
    std::size_t stride = 1;
    if (max_per_param > 0 && n > max_per_param) {
      stride = (n + max_per_param - 1) / max_per_param;
    }
    auto w = p->tensor.mutable_data();
    for (std::size_t j = 0; j < n; j += stride) {
      real a = p->tensor.has_grad() ? p->tensor.grad()[j] : real(0);
      real orig = w[j];
      real fp, fm;
      {
        NoGradGuard ng;
        w[j] = orig + h;
        fp = f().item();
        w[j] = orig - h;
        fm = f().item();
        w[j] = orig;
      }
      real num = (fp - fm) / (real(2) * h);
      real rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), real(1e-6)});
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = p->name;
        res.worst_index = j;
        res.analytic = a;
        res.numeric = num;
      }
    }
  }
  return res;
}

}  // namespace mlvtg
