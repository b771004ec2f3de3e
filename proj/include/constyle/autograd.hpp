#pragma once

#include <functional>
#include <vector>

#include "constyle/tensor.hpp"

namespace constyle {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t elements = 0;
};

using ScalarFunction = std::function<Tensor64(const std::vector<Tensor64>&)>;

/// Compares backward() against central differences (f(x+eps) - f(x-eps)) / 2eps for
/// every element of every input. The per-element error is |a - n| / max(|a|, |n|, 1e-3),
/// a relative error with an absolute floor for entries whose true gradient is ~0.
/// Inputs are copied; the caller's tensors are left untouched.
GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Tensor64>& inputs, double eps = 1e-6);

}  // namespace constyle
