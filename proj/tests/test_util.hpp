#pragma once

#include <vector>

#include "ahgs/autodiff.hpp"
#include "ahgs/random.hpp"
#include "ahgs/rasterizer.hpp"

namespace testutil {

inline std::vector<double> values(const ahgs::ad::Tensor& t) { return {t.data().begin(), t.data().end()}; }

/// Random screen-space primitives over a w×h image: positions may fall a
/// few pixels outside, covariances are random SPD, depths are distinct
/// except for a few deliberate ties.
inline std::vector<ahgs::Projected2DGaussian> random_prims(ahgs::Rng& rng, std::size_t n, std::size_t w, std::size_t h) {
  std::vector<ahgs::Projected2DGaussian> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = out[i];
    p.mean2d = {rng.uniform(-3.0, w + 3.0), rng.uniform(-3.0, h + 3.0)};
    const double a = rng.uniform(0.3, 4.0), b = rng.uniform(0.3, 4.0), th = rng.uniform(0.0, 3.14159);
    Eigen::Matrix2d r;
    r << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    p.cov2d = r * Eigen::Vector2d(a * a, b * b).asDiagonal() * r.transpose();
    p.depth = (i % 7 == 3 && i > 0) ? out[i - 1].depth : rng.uniform(0.5, 10.0);
    p.opacity = rng.uniform(0.05, 1.0);
    p.color = {rng.uniform(), rng.uniform(), rng.uniform()};
    p.source = i;
  }
  return out;
}

/// Camera whose image plane is w×h pixels; only the size is used by the
/// 2D rasterizer.
inline ahgs::Camera screen(std::size_t w, std::size_t h) {
  ahgs::Camera c;
  c.width = w;
  c.height = h;
  c.fx = c.fy = 1.0;
  return c;
}

}  // namespace testutil
