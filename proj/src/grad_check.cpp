#include "fmpestf/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "fmpestf/errors.hpp"

namespace fmpestf {

double relative_error(double analytic, double numeric, double scale_floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), scale_floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const ScalarFunction& f) {
  Tape tape;
  Var out = f(tape);
  if (out.value().size() != 1) {
    throw DimensionError("grad_check needs a scalar function, got shape " +
                         shape_string(out.value().shape()));
  }
  return out.value()[0];
}

}  // namespace

GradCheckReport grad_check(const ScalarFunction& f, std::span<Parameter* const> params,
                           const GradCheckOptions& options) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var out = f(tape);
    tape.backward(out);
    tape.accumulate_parameter_grads();
  }
  if (options.after_backward) options.after_backward(params);

  GradCheckReport report;
  for (Parameter* p : params) {
    ParameterCheck check;
    check.id = p->id();
    Tensor& value = p->value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double original = value[i];
      double plus = 0.0;
      double minus = 0.0;
      try {
        value[i] = original + options.step;
        plus = evaluate(f);
        value[i] = original - options.step;
        minus = evaluate(f);
      } catch (const NumericalError& e) {
        value[i] = original;
        throw NumericalError("grad_check: " + p->id() + "[" + std::to_string(i) +
                             "] perturbed evaluation failed: " + e.what());
      }
      value[i] = original;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericalError("grad_check: non-finite value at " + p->id() + "[" +
                             std::to_string(i) + "]");
      }
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double analytic = p->grad()[i];
      const double err = relative_error(analytic, numeric, options.scale_floor);
      if (i == 0 || err > check.max_rel_error) {
        check.max_rel_error = err;
        check.worst_index = i;
        check.analytic = analytic;
        check.numeric = numeric;
      }
      ++report.entries_checked;
    }
    if (report.per_parameter.empty() || check.max_rel_error > report.max_rel_error) {
      report.max_rel_error = check.max_rel_error;
      report.worst_parameter = check.id;
      report.worst_index = check.worst_index;
    }
    report.per_parameter.push_back(std::move(check));
  }
  return report;
}

}  // namespace fmpestf
