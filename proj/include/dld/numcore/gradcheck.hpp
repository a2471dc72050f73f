// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dld/numcore/ops.hpp"

namespace dld::nc {

struct GradcheckReport {
  bool ok = true;
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  // Elements whose stencil changed the branch pattern of a piecewise op.
  std::size_t skipped = 0;
  std::string message;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

inline constexpr double kMaxSkippedFraction = 0.05;

// Compares reverse-mode gradients of a scalar function against central differences
// with step eps·max(1, |x|). Passing inputs are those whose max relative error is < tol.
// Elements whose stencil crosses a relu/abs/clamp/max kink are skipped; the check fails
// when more than kMaxSkippedFraction of elements are skipped. Elements with |a−n| ≤ atol
// agree regardless of their relative error (atol = 0 disables this).
template <class T, class F>
GradcheckReport gradcheck(F&& f, std::vector<Tensor<T>> inputs, double eps = 1e-3, double tol = 1e-4,
                          double atol = 0.0) {
  GradcheckReport report;
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  Tensor<T> loss = f(inputs);
  if (loss.numel() != 1) throw ContractViolation("gradcheck: function must be scalar-valued");
  backward(loss);
  std::vector<std::vector<T>> analytic;
  for (const auto& x : inputs) analytic.push_back(x.grad());

  NoGradGuard<T> no_grad;
  auto& trace = BranchTrace::current();
  auto traced = [&](double& value) {
    trace.start();
    value = static_cast<double>(f(inputs).item());
    return trace.stop();
  };
  double f0 = 0.0;
  const std::uint64_t base = traced(f0);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].mutable_data();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const T orig = values[j];
      const T h = static_cast<T>(eps * std::max(1.0, std::abs(static_cast<double>(orig))));
      double fp = 0.0, fm = 0.0;
      values[j] = orig + h;
      const std::uint64_t tp = traced(fp);
      values[j] = orig - h;
      const std::uint64_t tm = traced(fm);
      values[j] = orig;
      if (tp != base || tm != base) {
        ++report.skipped;
        continue;
      }
      ++report.checked;
      const double numeric = (fp - fm) / (2.0 * static_cast<double>(h));
      const double a = static_cast<double>(analytic[i][j]);
      if (std::isnan(a) || std::isnan(numeric)) {
        report.ok = false;
        report.worst_input = i;
        report.worst_element = j;
        report.analytic = a;
        report.numeric = numeric;
        report.max_rel_error = std::numeric_limits<double>::infinity();
        report.message = "NaN gradient at input " + std::to_string(i) + " element " + std::to_string(j);
        return report;
      }
      const double rel = relative_error(a, numeric);
      if (atol > 0.0 && std::abs(a - numeric) <= atol) continue;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_input = i;
        report.worst_element = j;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  const double total = static_cast<double>(report.checked + report.skipped);
  const bool too_many_skipped = static_cast<double>(report.skipped) > kMaxSkippedFraction * total;
  report.ok = report.max_rel_error < tol && !too_many_skipped;
  if (too_many_skipped) {
    report.message = std::to_string(report.skipped) + " of " + std::to_string(report.checked + report.skipped) +
                     " elements straddle a kink";
  } else if (!report.ok) {
    report.message = "max relative error " + std::to_string(report.max_rel_error) + " at input " +
                     std::to_string(report.worst_input) + " element " + std::to_string(report.worst_element) +
                     " (analytic " + std::to_string(report.analytic) + ", numeric " + std::to_string(report.numeric) +
                     ")";
  }
  return report;
}

}  // namespace dld::nc
