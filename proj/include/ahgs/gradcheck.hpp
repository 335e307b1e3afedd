#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ahgs/autodiff.hpp"

namespace ahgs::ad {

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

namespace detail {
inline double evaluate_scalar(const std::function<Tensor()>& f) {
  const Tensor y = f();
  if (y.size() != 1) throw ContractError("finite_difference_check: function must be scalar-valued");
  const double v = y.item();
  if (!std::isfinite(v)) throw DomainError("finite_difference_check: function value is not finite");
  return v;
}
}  // namespace detail

/// Compares reverse-mode gradients of a scalar function against central
/// differences for every entry of every listed parameter leaf.
///
/// The relative error of an entry is |ad - fd| / max(|ad|, |fd|, floor), where
/// floor = 1e-3 * max|fd| over all entries (plus 1e-12): entries that are
/// negligible relative to the gradient's overall scale are compared against
/// that scale instead of their own magnitude.
inline GradCheckReport finite_difference_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double h,
                                               double rel_tol) {
  if (!(h > 0.0)) throw ContractError("finite_difference_check: step must be positive");
  for (auto& p : params) {
    if (!p.requires_grad() || !p.node()->leaf) throw ContractError("finite_difference_check: parameters must be leaves");
    p.zero_grad();
  }
  {
    const Tensor y = f();
    if (y.size() != 1) throw ContractError("finite_difference_check: function must be scalar-valued");
    if (!std::isfinite(y.item())) throw DomainError("finite_difference_check: function value is not finite");
    backward(y);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  std::vector<std::vector<double>> numeric(params.size());
  double scale = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].mutable_data();
    numeric[pi].resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double x0 = values[i];
      values[i] = x0 + h;
      const double fp = detail::evaluate_scalar(f);
      values[i] = x0 - h;
      const double fm = detail::evaluate_scalar(f);
      values[i] = x0;
      numeric[pi][i] = (fp - fm) / (2.0 * h);
      scale = std::max(scale, std::abs(numeric[pi][i]));
    }
  }
  const double floor = 1e-3 * scale + 1e-12;

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t i = 0; i < numeric[pi].size(); ++i) {
      const double a = analytic[pi][i], n = numeric[pi][i];
      const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
      ++report.checked;
      if (err > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = err;
        report.worst_param = pi;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = n;
      }
    }
  }
  report.passed = report.max_rel_error <= rel_tol;
  for (auto& p : params) p.zero_grad();
  return report;
}

/// Single-input form: f receives the parameter leaf built from `at`.
inline GradCheckReport finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& at, double h,
                                               double rel_tol) {
  Tensor x = Tensor::parameter(at.shape(), std::vector<double>(at.data().begin(), at.data().end()));
  return finite_difference_check([&] { return f(x); }, {x}, h, rel_tol);
}

}  // namespace ahgs::ad
