#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sfnet/tape.hpp"
#include "sfnet/tensor.hpp"

namespace sfnet {

// Builds a scalar on `tape` from parameter leaves (one Var per tensor).
using ScalarBuilder = std::function<Var(Tape<double>&, std::span<const Var>)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  // Test hook: edits the analytic gradients before comparison.
  std::function<void(std::vector<Tensor<double>>&)> tamper;
};

struct GradCheckReport {
  std::vector<double> max_rel_error;  // per parameter tensor
  double worst = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_entry = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;
};

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b));
}

// Compares tape gradients with central finite differences at every entry of
// every parameter tensor.
inline GradCheckReport grad_check(const ScalarBuilder& build, std::vector<Tensor<double>> params,
                                  const GradCheckOptions& options = {}) {
  auto evaluate = [&](const std::vector<Tensor<double>>& values, bool with_grad,
                      std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    std::vector<Var> leaves;
    for (const auto& p : values) leaves.push_back(tape.leaf(p, with_grad));
    const Var out = build(tape, leaves);
    const double f = tape.value(out).item();
    if (!std::isfinite(f)) {
      throw NumericError("grad_check: objective is not finite (" + std::to_string(f) + ")");
    }
    if (grads) {
      tape.backward(out);
      for (Var v : leaves) grads->push_back(tape.grad(v));
    }
    return f;
  };

  std::vector<Tensor<double>> analytic;
  evaluate(params, true, &analytic);
  if (options.tamper) options.tamper(analytic);

  GradCheckReport report;
  report.max_rel_error.assign(params.size(), 0.0);
  report.worst = -1.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double saved = params[p][i];
      params[p][i] = saved + options.step;
      const double up = evaluate(params, false, nullptr);
      params[p][i] = saved - options.step;
      const double down = evaluate(params, false, nullptr);
      params[p][i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double err = relative_error(analytic[p][i], numeric);
      report.max_rel_error[p] = std::max(report.max_rel_error[p], err);
      if (err > report.worst) {
        report.worst = err;
        report.worst_param = p;
        report.worst_entry = i;
        report.worst_analytic = analytic[p][i];
        report.worst_numeric = numeric;
      }
    }
  }
  report.worst = std::max(report.worst, 0.0);
  report.passed = report.worst < options.tolerance;
  return report;
}

}  // namespace sfnet
