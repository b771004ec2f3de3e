#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace constyle {

struct GradientCheckResult {
  std::string op;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t elements = 0;
  bool passed = false;

  nlohmann::json to_json() const;
};

/// Names accepted by run_gradient_check, in suite order.
std::vector<std::string> gradient_suite_ops();

/// Float64 finite-difference check of one differentiable op. ConfigError for an unknown name.
GradientCheckResult run_gradient_check(const std::string& op);

std::vector<GradientCheckResult> run_gradient_suite();

}  // namespace constyle
