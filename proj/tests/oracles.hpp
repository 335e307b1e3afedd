#pragma once

// Independent reference implementations used only by the tests. They share no
// code paths with the library beyond plain data types.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "ahgs/image.hpp"
#include "ahgs/random.hpp"
#include "ahgs/rasterizer.hpp"

namespace oracle {

/// Per-pixel compositing over a full depth sort of every primitive.
inline ahgs::ImageBuffer naive_render(const std::vector<ahgs::Projected2DGaussian>& prims, std::size_t w, std::size_t h,
                                      const Eigen::Vector3d& background, double t_min = 1e-4) {
  std::vector<std::size_t> order(prims.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (prims[a].depth != prims[b].depth) return prims[a].depth < prims[b].depth;
    return prims[a].source < prims[b].source;
  });
  ahgs::ImageBuffer img(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double rgb[3] = {0, 0, 0};
      double T = 1.0;
      for (std::size_t i : order) {
        const auto& g = prims[i];
        const Eigen::Matrix2d A = g.cov2d.inverse();
        const Eigen::Vector2d d(x + 0.5 - g.mean2d.x(), y + 0.5 - g.mean2d.y());
        const double m = d.dot(A * d);
        if (m > 9.0) continue;
        const double s = std::min(0.99, g.opacity * std::exp(-0.5 * m));
        for (int c = 0; c < 3; ++c) rgb[c] += g.color[c] * s * T;
        T *= 1.0 - s;
        if (T < t_min) break;
      }
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = std::clamp(rgb[c] + T * background[c], 0.0, 1.0);
    }
  return img;
}

/// Cross-correlation of a (C, H, W) image with an (O, C, K, K) kernel, zero
/// padding, stride 1. Row-major flat arrays.
inline std::vector<double> conv2d(const std::vector<double>& in, std::size_t C, std::size_t H, std::size_t W,
                                  const std::vector<double>& w, const std::vector<double>& bias, std::size_t O,
                                  std::size_t K, std::size_t pad) {
  const std::size_t Ho = H + 2 * pad - K + 1, Wo = W + 2 * pad - K + 1;
  std::vector<double> out(O * Ho * Wo, 0.0);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t x = 0; x < Wo; ++x) {
        double acc = bias.empty() ? 0.0 : bias[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t ky = 0; ky < K; ++ky)
            for (std::size_t kx = 0; kx < K; ++kx) {
              const long iy = static_cast<long>(y + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(x + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
              acc += in[(c * H + iy) * W + ix] * w[((o * C + c) * K + ky) * K + kx];
            }
        out[(o * Ho + y) * Wo + x] = acc;
      }
  return out;
}

/// Mean SSIM over valid 11×11 windows (Gaussian σ = 1.5), averaged over
/// channels, of two (C, H, W) flat images.
inline double ssim(const std::vector<double>& a, const std::vector<double>& b, std::size_t C, std::size_t H,
                   std::size_t W) {
  double g[11], total = 0.0;
  for (int i = 0; i < 11; ++i) {
    g[i] = std::exp(-(i - 5) * (i - 5) / (2.0 * 1.5 * 1.5));
    total += g[i];
  }
  const double c1 = 1e-4, c2 = 9e-4;
  double sum = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    double ch = 0.0;
    for (std::size_t y = 0; y + 11 <= H; ++y)
      for (std::size_t x = 0; x + 11 <= W; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int ky = 0; ky < 11; ++ky)
          for (int kx = 0; kx < 11; ++kx) {
            const double wgt = g[ky] * g[kx] / (total * total);
            const double va = a[(c * H + y + ky) * W + x + kx], vb = b[(c * H + y + ky) * W + x + kx];
            ma += wgt * va;
            mb += wgt * vb;
            saa += wgt * va * va;
            sbb += wgt * vb * vb;
            sab += wgt * va * vb;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        ch += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
    sum += ch / static_cast<double>((H - 10) * (W - 10));
  }
  return sum / static_cast<double>(C);
}

/// vMF sample on S² by inverting the marginal of w = μᵀx (Wood's method,
/// closed form for p = 3).
inline std::array<double, 3> sample_vmf(const std::array<double, 3>& mu, double kappa, ahgs::Rng& rng) {
  const double xi = rng.uniform();
  const double w = 1.0 + std::log(xi + (1.0 - xi) * std::exp(-2.0 * kappa)) / kappa;
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  const Eigen::Vector3d m(mu[0], mu[1], mu[2]);
  const Eigen::Vector3d helper = std::abs(m.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  const Eigen::Vector3d u = m.cross(helper).normalized();
  const Eigen::Vector3d v = m.cross(u);
  const double r = std::sqrt(std::max(0.0, 1.0 - w * w));
  const Eigen::Vector3d x = w * m + r * (std::cos(phi) * u + std::sin(phi) * v);
  return {x.x(), x.y(), x.z()};
}

inline std::array<double, 3> sample_sphere(ahgs::Rng& rng) {
  const double z = rng.uniform(-1.0, 1.0), phi = 2.0 * std::numbers::pi * rng.uniform();
  const double r = std::sqrt(1.0 - z * z);
  return {r * std::cos(phi), r * std::sin(phi), z};
}

/// Real spherical harmonics up to ℓ = 4 written out as explicit polynomials
/// (orthonormal, no Condon-Shortley phase). m ≥ 0 are cosine type, m < 0 sine type.
inline double sh(int l, int m, double x, double y, double z) {
  const double pi = std::numbers::pi;
  switch (l * 100 + m) {
    case 0: return 0.5 * std::sqrt(1 / pi);
    case 100: return std::sqrt(3 / (4 * pi)) * z;
    case 101: return std::sqrt(3 / (4 * pi)) * x;
    case 99: return std::sqrt(3 / (4 * pi)) * y;
    case 200: return 0.25 * std::sqrt(5 / pi) * (3 * z * z - 1);
    case 201: return 0.5 * std::sqrt(15 / pi) * x * z;
    case 199: return 0.5 * std::sqrt(15 / pi) * y * z;
    case 202: return 0.25 * std::sqrt(15 / pi) * (x * x - y * y);
    case 198: return 0.5 * std::sqrt(15 / pi) * x * y;
    case 300: return 0.25 * std::sqrt(7 / pi) * z * (5 * z * z - 3);
    case 301: return 0.25 * std::sqrt(21 / (2 * pi)) * x * (5 * z * z - 1);
    case 302: return 0.25 * std::sqrt(105 / pi) * z * (x * x - y * y);
    case 303: return 0.25 * std::sqrt(35 / (2 * pi)) * x * (x * x - 3 * y * y);
    case 299: return 0.25 * std::sqrt(21 / (2 * pi)) * y * (5 * z * z - 1);
    case 298: return 0.5 * std::sqrt(105 / pi) * x * y * z;
    case 297: return 0.25 * std::sqrt(35 / (2 * pi)) * y * (3 * x * x - y * y);
    case 400: return 3.0 / 16.0 * std::sqrt(1 / pi) * (35 * z * z * z * z - 30 * z * z + 3);
    case 401: return 0.75 * std::sqrt(5 / (2 * pi)) * x * z * (7 * z * z - 3);
    case 402: return 3.0 / 8.0 * std::sqrt(5 / pi) * (x * x - y * y) * (7 * z * z - 1);
    case 403: return 0.75 * std::sqrt(35 / (2 * pi)) * x * z * (x * x - 3 * y * y);
    case 404: return 3.0 / 16.0 * std::sqrt(35 / pi) * (x * x * (x * x - 3 * y * y) - y * y * (3 * x * x - y * y));
    case 399: return 0.75 * std::sqrt(5 / (2 * pi)) * y * z * (7 * z * z - 3);
    case 398: return 0.75 * std::sqrt(5 / pi) * x * y * (7 * z * z - 1);
    case 397: return 0.75 * std::sqrt(35 / (2 * pi)) * y * z * (3 * x * x - y * y);
    case 396: return 0.75 * std::sqrt(35 / pi) * x * y * (x * x - y * y);
    default: return std::nan("");
  }
}

/// Exact vMF expectation factor E[P_ℓ(μᵀx)] = I_{ℓ+½}(κ) / I_{½}(κ) for ℓ ≤ 2.
inline double vmf_degree_factor(int l, double kappa) {
  const double langevin = 1.0 / std::tanh(kappa) - 1.0 / kappa;
  if (l == 0) return 1.0;
  if (l == 1) return langevin;
  if (l == 2) return 1.0 - 3.0 * langevin / kappa;
  return std::nan("");
}

/// Scalar-loop Adam.
struct ScalarAdam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  int t = 0;

  void step(std::vector<double>& p, const std::vector<double>& g) {
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    ++t;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      p[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

}  // namespace oracle
