#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "d2r/autodiff.hpp"

namespace d2r {

/// Builds a scalar on `tape` from leaf variables bound to the parameters.
using ScalarGraph = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  /// Relative errors are |analytic − numeric| / max(|analytic|, |numeric|, floor).
  double denom_floor = 1e-3;
  /// One-sided slopes that disagree by more than this fraction of their
  /// magnitude (and by more than kink_abs) mark a kink inside [x−h, x+h].
  double kink_ratio = 0.1;
  double kink_abs = 1e-3;
  /// Operation kind whose backward rule is deliberately corrupted (testing only).
  std::string fault_op;
};

struct ElementCheck {
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool kink = false;
};

struct GradCheckReport {
  std::vector<ElementCheck> elements;
  double worst_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  bool pass = true;
};

namespace detail {

inline double evaluate_scalar(const ScalarGraph& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.constant(p));
  const double v = f(tape, leaves).value().item();
  if (!std::isfinite(v)) throw NonFiniteError("gradient check: function returned a non-finite value");
  return v;
}

}  // namespace detail

/// Compares the tape gradient of `f` against central differences for every
/// element of every parameter.
inline GradCheckReport finite_diff_check(const ScalarGraph& f, std::vector<Tensor> params,
                                         const GradCheckOptions& options = {}) {
  if (!(options.h > 0.0)) throw Error("finite_diff_check: step h must be positive");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    if (!options.fault_op.empty()) tape.inject_fault(options.fault_op);
    std::vector<Var> leaves;
    for (const auto& p : params) leaves.push_back(tape.leaf(p, true));
    const Var out = f(tape, leaves);
    if (!std::isfinite(out.value().item())) {
      throw NonFiniteError("gradient check: function returned a non-finite value");
    }
    const Gradients grads = tape.backward(out);
    for (const auto& leaf : leaves) analytic.push_back(grads.of(leaf));
  }

  GradCheckReport report;
  const double f0 = detail::evaluate_scalar(f, params);
  const double h = options.h;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double x = params[p][i];
      params[p][i] = x + h;
      const double fp = detail::evaluate_scalar(f, params);
      params[p][i] = x - h;
      const double fm = detail::evaluate_scalar(f, params);
      params[p][i] = x;

      ElementCheck e;
      e.param = p;
      e.index = i;
      e.analytic = analytic[p][i];
      e.numeric = (fp - fm) / (2.0 * h);
      const double right = (fp - f0) / h;
      const double left = (f0 - fm) / h;
      const double jump = std::abs(right - left);
      e.kink = jump > options.kink_abs && jump > options.kink_ratio * std::max(std::abs(right), std::abs(left));
      e.rel_error = std::abs(e.analytic - e.numeric) /
                    std::max({std::abs(e.analytic), std::abs(e.numeric), options.denom_floor});
      if (e.kink) {
        ++report.excluded;
      } else {
        ++report.checked;
        report.worst_rel_error = std::max(report.worst_rel_error, e.rel_error);
        if (!(e.rel_error < options.tol)) report.pass = false;
      }
      report.elements.push_back(e);
    }
  }
  return report;
}

}  // namespace d2r
