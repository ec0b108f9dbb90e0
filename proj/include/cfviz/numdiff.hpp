#pragma once

#include <functional>

#include "cfviz/errors.hpp"
#include "cfviz/tensor.hpp"

namespace cfviz {

// Central finite differences (f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps) per
// coordinate. Gradient-check oracle; evaluates f only, independent of any
// tape machinery.
inline Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                         const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ValidationError("finite_difference_gradient: eps must be > 0");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double hi = f(probe);
    probe[i] = saved - eps;
    const double lo = f(probe);
    probe[i] = saved;
    grad[i] = (hi - lo) / (2.0 * eps);
  }
  return grad;
}

}  // namespace cfviz
