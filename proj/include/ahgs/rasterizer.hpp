#pragma once

// Software splatting rasterizer: 3D covariance from (q, s), EWA projection to
// screen space, global depth sort, 16×16 tile binning and front-to-back
// alpha compositing. The backward pass is derived by hand and chained through
// projection and covariance construction.
//
// Blending rule per pixel x′ (pixel (i, j) is sampled at (j + 0.5, i + 0.5)):
//   primitive i contributes iff (x′-m)ᵀ Σ⁻¹ (x′-m) ≤ 9 (its 3σ ellipse),
//   σ_i = min(0.99, α_i exp(-½ (x′-m)ᵀ Σ⁻¹ (x′-m))),
//   C += c_i σ_i T,  T *= (1 - σ_i),  stop once T < T_min,
//   C += T · background.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <memory>
#include <numeric>
#include <optional>
#include <thread>
#include <vector>

#include <Eigen/Core>

#include "ahgs/autodiff.hpp"
#include "ahgs/camera.hpp"
#include "ahgs/image.hpp"

namespace ahgs {

/// One decoded primitive with plain values.
struct NeuralGaussian {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  double opacity = 0.0;
  Eigen::Vector4d rotation{1.0, 0.0, 0.0, 0.0};  // (w, x, y, z), unit
  Eigen::Vector3d scale = Eigen::Vector3d::Ones();
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
};

struct Projected2DGaussian {
  Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov2d = Eigen::Matrix2d::Identity();
  double depth = 0.0;
  double opacity = 0.0;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  std::size_t source = 0;
};

struct RasterSettings {
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  double lambda_reg = 0.3;  // pixel² added to the projected covariance diagonal
  double t_min = 1e-4;
  std::size_t tile = 16;
  unsigned threads = 0;  // 0: AHGS_THREADS or hardware concurrency
};

inline constexpr double kMaxSigma = 0.99;
inline constexpr double kEllipseBound = 9.0;  // squared Mahalanobis radius of the 3σ ellipse

inline unsigned worker_threads(unsigned requested) {
  unsigned n = requested;
  if (n == 0) {
    if (const char* env = std::getenv("AHGS_THREADS")) n = static_cast<unsigned>(std::strtoul(env, nullptr, 10));
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Each index is
/// handled by exactly one worker; callers keep results per index.
template <class F>
void parallel_for(std::size_t count, unsigned threads, F&& fn) {
  const unsigned n = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  if (n <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(n);
  for (unsigned t = 0; t < n; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < count; i += n) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// covariance

inline Eigen::Matrix3d quaternion_to_rotation(const Eigen::Vector4d& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

/// Σ = R S Sᵀ Rᵀ with R from the unit quaternion and S = diag(s).
inline Eigen::Matrix3d covariance3d(const Eigen::Vector4d& q, const Eigen::Vector3d& s) {
  const Eigen::Matrix3d m = quaternion_to_rotation(q) * s.asDiagonal();
  return m * m.transpose();
}

struct CovarianceGrads {
  Eigen::Vector4d rotation = Eigen::Vector4d::Zero();
  Eigen::Vector3d scale = Eigen::Vector3d::Zero();
};

/// Pulls dL/dΣ (all nine entries treated as independent) back to q and s.
inline CovarianceGrads covariance3d_backward(const Eigen::Vector4d& q, const Eigen::Vector3d& s,
                                             const Eigen::Matrix3d& d_cov) {
  const Eigen::Matrix3d r = quaternion_to_rotation(q);
  const Eigen::Matrix3d m = r * s.asDiagonal();
  const Eigen::Matrix3d d_m = (d_cov + d_cov.transpose()) * m;
  CovarianceGrads g;
  for (int k = 0; k < 3; ++k) g.scale[k] = d_m.col(k).dot(r.col(k));
  const Eigen::Matrix3d G = d_m * s.asDiagonal();  // dL/dR
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  g.rotation[0] = 2 * (-z * G(0, 1) + y * G(0, 2) + z * G(1, 0) - x * G(1, 2) - y * G(2, 0) + x * G(2, 1));
  g.rotation[1] = 2 * (y * G(0, 1) + z * G(0, 2) + y * G(1, 0) - 2 * x * G(1, 1) - w * G(1, 2) + z * G(2, 0) +
                       w * G(2, 1) - 2 * x * G(2, 2));
  g.rotation[2] = 2 * (-2 * y * G(0, 0) + x * G(0, 1) + w * G(0, 2) + x * G(1, 0) + z * G(1, 2) - w * G(2, 0) +
                       z * G(2, 1) - 2 * y * G(2, 2));
  g.rotation[3] = 2 * (-2 * z * G(0, 0) - w * G(0, 1) + x * G(0, 2) + w * G(1, 0) - 2 * z * G(1, 1) + y * G(1, 2) +
                       x * G(2, 0) + y * G(2, 1));
  return g;
}

// ---------------------------------------------------------------------------
// projection

/// Perspective projection of the mean and first-order (EWA) projection of the
/// covariance. Returns nullopt when the mean's depth is outside (near, far).
inline std::optional<Projected2DGaussian> project(const NeuralGaussian& g, const Camera& cam, double lambda_reg,
                                                  std::size_t source = 0) {
  const Eigen::Vector3d t = cam.to_camera(g.mean);
  const double z = t.z();
  if (!(z > cam.near && z < cam.far)) return std::nullopt;
  Eigen::Matrix<double, 2, 3> J;
  J << cam.fx / z, 0.0, -cam.fx * t.x() / (z * z), 0.0, cam.fy / z, -cam.fy * t.y() / (z * z);
  const Eigen::Matrix<double, 2, 3> M = J * cam.rotation;
  Projected2DGaussian p;
  p.mean2d = Eigen::Vector2d(cam.fx * t.x() / z + cam.cx, cam.fy * t.y() / z + cam.cy);
  p.cov2d = M * covariance3d(g.rotation, g.scale) * M.transpose();
  p.cov2d(0, 0) += lambda_reg;
  p.cov2d(1, 1) += lambda_reg;
  p.depth = z;
  p.opacity = g.opacity;
  p.color = g.color;
  p.source = source;
  return p;
}

struct ProjectionGrads {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Matrix3d cov3d = Eigen::Matrix3d::Zero();
};

/// Pulls dL/dmean2d and dL/dcov2d back to the world-space mean and Σ.
inline ProjectionGrads project_backward(const NeuralGaussian& g, const Camera& cam, const Eigen::Vector2d& d_mean2d,
                                        const Eigen::Matrix2d& d_cov2d) {
  const Eigen::Vector3d t = cam.to_camera(g.mean);
  const double x = t.x(), y = t.y(), z = t.z();
  const double z2 = z * z, z3 = z2 * z;
  Eigen::Matrix<double, 2, 3> J;
  J << cam.fx / z, 0.0, -cam.fx * x / z2, 0.0, cam.fy / z, -cam.fy * y / z2;
  const Eigen::Matrix<double, 2, 3> M = J * cam.rotation;
  const Eigen::Matrix3d sigma = covariance3d(g.rotation, g.scale);

  ProjectionGrads out;
  out.cov3d = M.transpose() * d_cov2d * M;
  const Eigen::Matrix<double, 2, 3> d_M = (d_cov2d + d_cov2d.transpose()) * M * sigma;
  const Eigen::Matrix<double, 2, 3> d_J = d_M * cam.rotation.transpose();

  Eigen::Vector3d d_t = Eigen::Vector3d::Zero();
  d_t.x() += d_mean2d.x() * cam.fx / z;
  d_t.y() += d_mean2d.y() * cam.fy / z;
  d_t.z() += -d_mean2d.x() * cam.fx * x / z2 - d_mean2d.y() * cam.fy * y / z2;
  d_t.x() += d_J(0, 2) * (-cam.fx / z2);
  d_t.y() += d_J(1, 2) * (-cam.fy / z2);
  d_t.z() += d_J(0, 0) * (-cam.fx / z2) + d_J(1, 1) * (-cam.fy / z2) + d_J(0, 2) * (2 * cam.fx * x / z3) +
             d_J(1, 2) * (2 * cam.fy * y / z3);
  out.mean = cam.rotation.transpose() * d_t;
  return out;
}

// ---------------------------------------------------------------------------
// rasterization

namespace raster_detail {

struct Prepared {
  std::vector<std::size_t> order;          // indices into the projected list, depth sorted
  std::vector<Eigen::Matrix2d> conic;      // inverse covariance, by projected index
  std::vector<std::vector<std::size_t>> tiles;  // per tile: indices into `order`
  std::size_t tiles_x = 0, tiles_y = 0;
};

inline Prepared prepare(const std::vector<Projected2DGaussian>& prims, std::size_t width, std::size_t height,
                        std::size_t tile) {
  Prepared p;
  const std::size_t n = prims.size();
  p.order.resize(n);
  std::iota(p.order.begin(), p.order.end(), std::size_t{0});
  std::sort(p.order.begin(), p.order.end(), [&](std::size_t a, std::size_t b) {
    if (prims[a].depth != prims[b].depth) return prims[a].depth < prims[b].depth;
    return prims[a].source < prims[b].source;
  });
  p.conic.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Matrix2d& c = prims[i].cov2d;
    const double det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
    if (!(det > 0.0) || !std::isfinite(det)) throw Error("rasterize: projected covariance is not invertible");
    Eigen::Matrix2d inv;
    inv << c(1, 1) / det, -c(0, 1) / det, -c(1, 0) / det, c(0, 0) / det;
    p.conic[i] = inv;
  }
  p.tiles_x = (width + tile - 1) / tile;
  p.tiles_y = (height + tile - 1) / tile;
  p.tiles.resize(p.tiles_x * p.tiles_y);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& g = prims[p.order[r]];
    // axis-aligned bounds of the 3σ ellipse, slightly padded
    const double rx = 3.0 * std::sqrt(g.cov2d(0, 0)) * (1.0 + 1e-9) + 1e-9;
    const double ry = 3.0 * std::sqrt(g.cov2d(1, 1)) * (1.0 + 1e-9) + 1e-9;
    const double x0 = std::ceil(g.mean2d.x() - rx - 0.5), x1 = std::floor(g.mean2d.x() + rx - 0.5);
    const double y0 = std::ceil(g.mean2d.y() - ry - 0.5), y1 = std::floor(g.mean2d.y() + ry - 0.5);
    if (x1 < 0 || y1 < 0 || x0 > static_cast<double>(width) - 1 || y0 > static_cast<double>(height) - 1 || x0 > x1 ||
        y0 > y1) {
      continue;
    }
    const auto px0 = static_cast<std::size_t>(std::max(0.0, x0));
    const auto py0 = static_cast<std::size_t>(std::max(0.0, y0));
    const auto px1 = static_cast<std::size_t>(std::min(static_cast<double>(width) - 1, x1));
    const auto py1 = static_cast<std::size_t>(std::min(static_cast<double>(height) - 1, y1));
    for (std::size_t ty = py0 / tile; ty <= py1 / tile; ++ty)
      for (std::size_t tx = px0 / tile; tx <= px1 / tile; ++tx) p.tiles[ty * p.tiles_x + tx].push_back(r);
  }
  return p;
}

struct Contribution {
  std::size_t entry;  // position within the tile list
  double sigma;
  double gauss;
  double transmittance;  // before this primitive
  bool clamped;
};

// Composites one pixel over a depth-sorted candidate list. Returns the final
// transmittance; `trace` (optional) records every contribution in order.
template <class Candidates>
double composite_pixel(const std::vector<Projected2DGaussian>& prims, const std::vector<std::size_t>& order,
                       const std::vector<Eigen::Matrix2d>& conic, const Candidates& candidates, double px, double py,
                       double t_min, double* rgb, std::vector<Contribution>* trace) {
  double T = 1.0;
  for (std::size_t e = 0; e < candidates.size(); ++e) {
    const std::size_t idx = order[candidates[e]];
    const auto& g = prims[idx];
    const Eigen::Matrix2d& A = conic[idx];
    const double dx = px - g.mean2d.x(), dy = py - g.mean2d.y();
    const double maha = A(0, 0) * dx * dx + (A(0, 1) + A(1, 0)) * dx * dy + A(1, 1) * dy * dy;
    if (maha > kEllipseBound) continue;
    const double gauss = std::exp(-0.5 * maha);
    double sigma = g.opacity * gauss;
    bool clamped = false;
    if (sigma > kMaxSigma) {
      sigma = kMaxSigma;
      clamped = true;
    }
    if (trace) trace->push_back({e, sigma, gauss, T, clamped});
    for (int c = 0; c < 3; ++c) rgb[c] += g.color[c] * sigma * T;
    T *= 1.0 - sigma;
    if (T < t_min) break;
  }
  return T;
}

}  // namespace raster_detail

/// Tiled forward rasterization.
inline ImageBuffer rasterize(const std::vector<Projected2DGaussian>& prims, const Camera& cam,
                             const RasterSettings& settings) {
  const std::size_t W = cam.width, H = cam.height, ts = settings.tile;
  const auto prep = raster_detail::prepare(prims, W, H, ts);
  ImageBuffer img(W, H);
  parallel_for(prep.tiles.size(), worker_threads(settings.threads), [&](std::size_t t) {
    const std::size_t tx = t % prep.tiles_x, ty = t / prep.tiles_x;
    const auto& list = prep.tiles[t];
    for (std::size_t y = ty * ts; y < std::min(H, (ty + 1) * ts); ++y)
      for (std::size_t x = tx * ts; x < std::min(W, (tx + 1) * ts); ++x) {
        double rgb[3] = {0.0, 0.0, 0.0};
        const double T = raster_detail::composite_pixel(prims, prep.order, prep.conic, list, x + 0.5, y + 0.5,
                                                        settings.t_min, rgb, nullptr);
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = std::clamp(rgb[c] + T * settings.background[c], 0.0, 1.0);
      }
  });
  return img;
}

struct ProjectedGrads {
  std::vector<Eigen::Vector2d> mean2d;
  std::vector<Eigen::Matrix2d> cov2d;
  std::vector<double> opacity;
  std::vector<Eigen::Vector3d> color;

  explicit ProjectedGrads(std::size_t n = 0)
      : mean2d(n, Eigen::Vector2d::Zero()), cov2d(n, Eigen::Matrix2d::Zero()), opacity(n, 0.0),
        color(n, Eigen::Vector3d::Zero()) {}
};

/// Gradients of sum(upstream ⊙ image) with respect to every projected field.
/// Per-tile partial sums are reduced in tile order, then list order, so the
/// result does not depend on the thread count.
inline ProjectedGrads rasterize_backward(const std::vector<Projected2DGaussian>& prims, const Camera& cam,
                                         const RasterSettings& settings, const ImageBuffer& upstream) {
  const std::size_t W = cam.width, H = cam.height, ts = settings.tile;
  if (upstream.width != W || upstream.height != H) throw ShapeError("rasterize_backward: upstream size mismatch");
  const auto prep = raster_detail::prepare(prims, W, H, ts);

  struct TileGrad {
    std::vector<double> v;  // per list entry: mean2d(2), conic-space cov(4), opacity(1), color(3)
  };
  constexpr std::size_t kStride = 10;
  std::vector<TileGrad> partial(prep.tiles.size());

  parallel_for(prep.tiles.size(), worker_threads(settings.threads), [&](std::size_t t) {
    const std::size_t tx = t % prep.tiles_x, ty = t / prep.tiles_x;
    const auto& list = prep.tiles[t];
    auto& acc = partial[t].v;
    acc.assign(list.size() * kStride, 0.0);
    if (list.empty()) return;
    std::vector<raster_detail::Contribution> trace;
    for (std::size_t y = ty * ts; y < std::min(H, (ty + 1) * ts); ++y)
      for (std::size_t x = tx * ts; x < std::min(W, (tx + 1) * ts); ++x) {
        const double gr[3] = {upstream.at(x, y, 0), upstream.at(x, y, 1), upstream.at(x, y, 2)};
        if (gr[0] == 0.0 && gr[1] == 0.0 && gr[2] == 0.0) continue;
        trace.clear();
        double rgb[3] = {0.0, 0.0, 0.0};
        const double px = x + 0.5, py = y + 0.5;
        const double T_final =
            raster_detail::composite_pixel(prims, prep.order, prep.conic, list, px, py, settings.t_min, rgb, &trace);
        // U: everything composited behind the current primitive, plus background
        double U[3];
        for (int c = 0; c < 3; ++c) U[c] = T_final * settings.background[c];
        for (auto it = trace.rbegin(); it != trace.rend(); ++it) {
          const std::size_t idx = prep.order[list[it->entry]];
          const auto& g = prims[idx];
          double* a = &acc[it->entry * kStride];
          double d_sigma = 0.0;
          for (int c = 0; c < 3; ++c) {
            a[7 + c] += gr[c] * it->sigma * it->transmittance;
            d_sigma += gr[c] * (it->transmittance * g.color[c] - U[c] / (1.0 - it->sigma));
          }
          for (int c = 0; c < 3; ++c) U[c] += g.color[c] * it->sigma * it->transmittance;
          if (it->clamped) continue;
          a[6] += d_sigma * it->gauss;
          const Eigen::Matrix2d& A = prep.conic[idx];
          const double dx = px - g.mean2d.x(), dy = py - g.mean2d.y();
          const double s = d_sigma * it->sigma;  // dL/d(-maha/2)
          // dL/dmean2d = s · A·d ;  dL/dA = -s/2 · d dᵀ
          a[0] += s * (A(0, 0) * dx + A(0, 1) * dy);
          a[1] += s * (A(1, 0) * dx + A(1, 1) * dy);
          a[2] += -0.5 * s * dx * dx;
          a[3] += -0.5 * s * dx * dy;
          a[4] += -0.5 * s * dy * dx;
          a[5] += -0.5 * s * dy * dy;
        }
      }
  });

  ProjectedGrads out(prims.size());
  std::vector<Eigen::Matrix2d> d_conic(prims.size(), Eigen::Matrix2d::Zero());
  for (std::size_t t = 0; t < prep.tiles.size(); ++t) {
    const auto& list = prep.tiles[t];
    const auto& acc = partial[t].v;
    for (std::size_t e = 0; e < list.size(); ++e) {
      const std::size_t idx = prep.order[list[e]];
      const double* a = &acc[e * kStride];
      out.mean2d[idx] += Eigen::Vector2d(a[0], a[1]);
      d_conic[idx] += (Eigen::Matrix2d() << a[2], a[3], a[4], a[5]).finished();
      out.opacity[idx] += a[6];
      out.color[idx] += Eigen::Vector3d(a[7], a[8], a[9]);
    }
  }
  for (std::size_t i = 0; i < prims.size(); ++i) {
    const Eigen::Matrix2d& A = prep.conic[i];
    out.cov2d[i] = -A.transpose() * d_conic[i] * A.transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// differentiable render op

/// Per-call side outputs of render(), filled during forward and backward.
struct RenderAux {
  std::vector<bool> projected;             // per input Gaussian: inside (near, far)
  std::vector<double> mean2d_grad_norm;    // per input Gaussian, set by backward
};

/// Renders Gaussians given as tape tensors, producing a (3, H, W) image.
/// means (M,3), opacity (M,1), rotation (M,4) unit, scale (M,3), color (M,3).
inline ad::Tensor render(const ad::Tensor& means, const ad::Tensor& opacity, const ad::Tensor& rotation,
                         const ad::Tensor& scale, const ad::Tensor& color, const Camera& cam,
                         const RasterSettings& settings, std::shared_ptr<RenderAux> aux = nullptr) {
  const std::size_t m = means.rank() == 2 ? means.dim(0) : 0;
  if (means.shape() != ad::Shape{m, 3} || opacity.size() != m || rotation.shape() != ad::Shape{m, 4} ||
      scale.shape() != ad::Shape{m, 3} || color.shape() != ad::Shape{m, 3}) {
    throw ShapeError("render: attribute tensors disagree on the number of Gaussians");
  }
  std::vector<NeuralGaussian> gaussians(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto& g = gaussians[i];
    g.mean = Eigen::Vector3d(means[3 * i], means[3 * i + 1], means[3 * i + 2]);
    g.opacity = opacity[i];
    g.rotation = Eigen::Vector4d(rotation[4 * i], rotation[4 * i + 1], rotation[4 * i + 2], rotation[4 * i + 3]);
    g.scale = Eigen::Vector3d(scale[3 * i], scale[3 * i + 1], scale[3 * i + 2]);
    g.color = Eigen::Vector3d(color[3 * i], color[3 * i + 1], color[3 * i + 2]);
  }
  if (!aux) aux = std::make_shared<RenderAux>();
  aux->projected.assign(m, false);
  aux->mean2d_grad_norm.assign(m, 0.0);
  auto prims = std::make_shared<std::vector<Projected2DGaussian>>();
  prims->reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (auto p = project(gaussians[i], cam, settings.lambda_reg, i)) {
      prims->push_back(*p);
      aux->projected[i] = true;
    }
  }
  const ImageBuffer img = rasterize(*prims, cam, settings);
  const std::size_t W = cam.width, H = cam.height, np = W * H;
  std::vector<double> out(3 * np);
  for (std::size_t p = 0; p < np; ++p)
    for (std::size_t c = 0; c < 3; ++c) out[c * np + p] = img.pixels[p * 3 + c];

  return ad::make_result(
      {3, H, W}, std::move(out), {means, opacity, rotation, scale, color}, "render",
      [gaussians = std::move(gaussians), prims, cam, settings, aux, m, np](ad::Node& self) {
        ImageBuffer upstream(cam.width, cam.height);
        // the final clamp never binds for colors and background in [0, 1]
        for (std::size_t p = 0; p < np; ++p)
          for (std::size_t c = 0; c < 3; ++c) upstream.pixels[p * 3 + c] = self.grad[c * np + p];
        const ProjectedGrads pg = rasterize_backward(*prims, cam, settings, upstream);
        std::vector<double> gm(m * 3, 0.0), go(m, 0.0), gq(m * 4, 0.0), gs(m * 3, 0.0), gc(m * 3, 0.0);
        for (std::size_t j = 0; j < prims->size(); ++j) {
          const std::size_t i = (*prims)[j].source;
          const NeuralGaussian& g = gaussians[i];
          aux->mean2d_grad_norm[i] = pg.mean2d[j].norm();
          const ProjectionGrads pj = project_backward(g, cam, pg.mean2d[j], pg.cov2d[j]);
          const CovarianceGrads cg = covariance3d_backward(g.rotation, g.scale, pj.cov3d);
          for (int c = 0; c < 3; ++c) {
            gm[3 * i + c] = pj.mean[c];
            gs[3 * i + c] = cg.scale[c];
            gc[3 * i + c] = pg.color[j][c];
          }
          for (int c = 0; c < 4; ++c) gq[4 * i + c] = cg.rotation[c];
          go[i] = pg.opacity[j];
        }
        ad::accumulate(self, 0, gm);
        ad::accumulate(self, 1, go);
        ad::accumulate(self, 2, gq);
        ad::accumulate(self, 3, gs);
        ad::accumulate(self, 4, gc);
      });
}

}  // namespace ahgs
