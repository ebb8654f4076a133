#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fmpestf/autodiff.hpp"

namespace fmpestf {

struct GradCheckOptions {
  double step = 1e-5;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, scale_floor).
  double scale_floor = 1e-4;
  // Called after the reverse sweep, before comparison. Lets a caller corrupt
  // analytic gradients to confirm the harness catches them.
  std::function<void(std::span<Parameter* const>)> after_backward;
};

struct ParameterCheck {
  std::string id;
  std::size_t worst_index = 0;
  double max_rel_error = 0.0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
  std::vector<ParameterCheck> per_parameter;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

// Builds a scalar on a fresh tape from the current parameter values.
using ScalarFunction = std::function<Var(Tape&)>;

// Compares reverse-mode gradients of `f` against central finite differences
// for every entry of every parameter. Parameter grads are overwritten.
GradCheckReport grad_check(const ScalarFunction& f, std::span<Parameter* const> params,
                           const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric, double scale_floor);

}  // namespace fmpestf
