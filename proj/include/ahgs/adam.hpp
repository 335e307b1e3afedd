#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ahgs/autodiff.hpp"
#include "ahgs/errors.hpp"

namespace ahgs {

/// Bias-corrected Adam over named parameter groups, one tensor per group.
class Adam {
 public:
  struct Group {
    std::string name;
    ad::Tensor param;
    double lr = 0.0;
    std::vector<double> m, v;
  };

  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void add_group(std::string name, ad::Tensor param, double lr) {
    if (!param.requires_grad()) throw ContractError("Adam: group '" + name + "' is not a trainable tensor");
    const std::size_t n = param.size();
    groups_.push_back({std::move(name), std::move(param), lr, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  }

  std::size_t step_count() const { return steps_; }
  const std::vector<Group>& groups() const { return groups_; }
  Group& group(const std::string& name) {
    for (auto& g : groups_)
      if (g.name == name) return g;
    throw ContractError("Adam: no group '" + name + "'");
  }

  void zero_grad() {
    for (auto& g : groups_) g.param.zero_grad();
  }

  /// One update of every group from its current gradient. A non-finite
  /// gradient aborts before any parameter changes.
  void step() {
    for (const auto& g : groups_) {
      if (!g.param.has_grad()) continue;
      for (double d : g.param.grad()) {
        if (!std::isfinite(d)) throw NumericError("non-finite gradient in parameter group '" + g.name + "'");
      }
    }
    ++steps_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps_));
    for (auto& g : groups_) {
      if (g.m.size() != g.param.size()) throw ShapeError("Adam: moment shape mismatch in group '" + g.name + "'");
      auto values = g.param.mutable_data();
      const auto grad = g.param.has_grad() ? g.param.grad() : std::span<const double>{};
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double d = grad.empty() ? 0.0 : grad[i];
        g.m[i] = beta1 * g.m[i] + (1.0 - beta1) * d;
        g.v[i] = beta2 * g.v[i] + (1.0 - beta2) * d * d;
        const double mhat = g.m[i] / bc1, vhat = g.v[i] / bc2;
        values[i] -= g.lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  /// Swaps a group's tensor for one whose rows were kept, dropped or added.
  /// row_source[r] names the old row that new row r continues, or nullopt for
  /// a fresh row with zero moments.
  void remap_rows(const std::string& name, ad::Tensor param, const std::vector<std::optional<std::size_t>>& row_source) {
    Group& g = group(name);
    const std::size_t new_rows = row_source.size();
    const std::size_t width = new_rows ? param.size() / new_rows : 0;
    if (new_rows * width != param.size()) throw ShapeError("Adam::remap_rows: row count mismatch");
    std::vector<double> m(param.size(), 0.0), v(param.size(), 0.0);
    for (std::size_t r = 0; r < new_rows; ++r) {
      if (!row_source[r]) continue;
      const std::size_t o = *row_source[r];
      for (std::size_t j = 0; j < width; ++j) {
        m[r * width + j] = g.m[o * width + j];
        v[r * width + j] = g.v[o * width + j];
      }
    }
    g.param = std::move(param);
    g.m = std::move(m);
    g.v = std::move(v);
  }

 private:
  std::vector<Group> groups_;
  std::size_t steps_ = 0;
};

}  // namespace ahgs
