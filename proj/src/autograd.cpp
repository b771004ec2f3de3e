#include "constyle/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "constyle/errors.hpp"

namespace constyle {

GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Tensor64>& inputs, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ContractError("grad_check: eps must lie in (0, 1e-2]");

  std::vector<Tensor64> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) {
    leaves.emplace_back(in.shape(), std::vector<double>(in.data().begin(), in.data().end()), true);
  }
  const Tensor64 loss = f(leaves);
  if (loss.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  loss.backward();

  GradCheckReport report;
  NoGradGuard no_grad;
  for (auto& leaf : leaves) {
    std::vector<double> analytic(leaf.numel(), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    auto values = leaf.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = f(leaves).item();
      values[i] = saved - eps;
      const double down = f(leaves).item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-3});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      ++report.elements;
    }
  }
  return report;
}

}  // namespace constyle
