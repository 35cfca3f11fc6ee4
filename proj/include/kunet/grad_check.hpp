// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "kunet/tensor.hpp"

namespace kunet {

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-4;
  // 2: (f(x+h) - f(x-h)) / 2h.  4: five-point stencil, error O(h^4), which
  // keeps truncation and rounding noise well under the tolerance for tiny
  // gradients.
  int order = 4;
  // Denominator floor for the relative error; keeps coordinates whose true
  // gradient is ~0 from reporting rounding noise as a large relative error.
  double floor = 1e-6;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
  bool passed = true;
};

/// Compares autodiff gradients of the scalar `f()` with respect to every
/// element of `inputs` against central differences. `f` must read the inputs
/// through the handles it captured; they are perturbed in place and restored.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                                  std::vector<Tensor<double>> inputs,
                                  const GradCheckOptions& options = {}) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  const Tensor<double> loss = f();
  backward(loss);

  GradCheckReport report;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& x = inputs[t];
    const std::vector<double> analytic =
        x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end()) : std::vector<double>(x.numel(), 0.0);
    auto values = x.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      const double h = options.step;
      auto at = [&](double offset) {
        NoGradGuard guard;
        values[i] = saved + offset;
        return f().item();
      };
      double numeric = 0.0;
      if (options.order == 4) {
        numeric = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
      } else {
        numeric = (at(h) - at(-h)) / (2 * h);
      }
      values[i] = saved;
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.floor});
      double rel = std::abs(analytic[i] - numeric) / denom;
      if (std::isnan(rel)) rel = INFINITY;
      if (++report.coordinates == 1 || rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_tensor = t;
        report.worst_index = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
    x.zero_grad();
  }
  report.passed = report.max_relative_error <= options.tolerance;
  return report;
}

/// Single-input form: checks d f(x) / dx.
inline GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                  Tensor<double> x, const GradCheckOptions& options = {}) {
  return grad_check([&f, x] { return f(x); }, std::vector<Tensor<double>>{x}, options);
}

}  // namespace kunet
