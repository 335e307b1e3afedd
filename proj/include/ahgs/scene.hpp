#pragma once

// Anchor scaffold: voxelization of an SfM point cloud into anchors and
// per-view visibility filtering.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "ahgs/autodiff.hpp"
#include "ahgs/camera.hpp"
#include "ahgs/ply.hpp"
#include "ahgs/random.hpp"

namespace ahgs {

inline constexpr std::size_t kFeatureDim = 32;

using VoxelCell = std::array<std::int64_t, 3>;

inline VoxelCell voxel_of(const std::array<double, 3>& p, double voxel_size) {
  return {static_cast<std::int64_t>(std::floor(p[0] / voxel_size)), static_cast<std::int64_t>(std::floor(p[1] / voxel_size)),
          static_cast<std::int64_t>(std::floor(p[2] / voxel_size))};
}

inline std::array<double, 3> voxel_center(const VoxelCell& c, double voxel_size) {
  return {(static_cast<double>(c[0]) + 0.5) * voxel_size, (static_cast<double>(c[1]) + 0.5) * voxel_size,
          (static_cast<double>(c[2]) + 0.5) * voxel_size};
}

/// Plain-value view of one anchor.
struct Anchor {
  std::array<double, 3> position{};
  std::vector<double> feature;        // kFeatureDim entries
  std::array<double, 3> scaling{};    // l_v, strictly positive
  std::vector<std::array<double, 3>> offsets;  // k rows
};

/// All anchors of a scene as trainable tensors. Scaling is stored as its
/// logarithm so that optimizer steps keep l_v positive.
struct AnchorSet {
  std::size_t k = 0;
  double voxel_size = 0.0;
  ad::Tensor positions;    // (N, 3)
  ad::Tensor features;     // (N, 32)
  ad::Tensor log_scaling;  // (N, 3)
  ad::Tensor offsets;      // (N, k, 3)

  std::size_t size() const { return positions.defined() ? positions.dim(0) : 0; }

  Anchor anchor(std::size_t i) const {
    Anchor a;
    for (std::size_t c = 0; c < 3; ++c) {
      a.position[c] = positions[3 * i + c];
      a.scaling[c] = std::exp(log_scaling[3 * i + c]);
    }
    a.feature.assign(features.data().begin() + static_cast<std::ptrdiff_t>(i * kFeatureDim),
                     features.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * kFeatureDim));
    for (std::size_t j = 0; j < k; ++j) {
      a.offsets.push_back({offsets[(i * k + j) * 3], offsets[(i * k + j) * 3 + 1], offsets[(i * k + j) * 3 + 2]});
    }
    return a;
  }

  std::vector<ad::Tensor> parameters() const { return {positions, features, log_scaling, offsets}; }
};

/// Fresh anchor at a voxel center. Feature ~ U(-0.1, 0.1), offsets ~
/// U(-0.5, 0.5), scaling = voxel size. The stream is derived from the seed
/// and the cell, so the result does not depend on creation order.
inline Anchor initial_anchor(const VoxelCell& cell, double voxel_size, std::size_t k, std::uint64_t seed) {
  std::uint64_t h = seed ^ 0x9E3779B97F4A7C15ull;
  for (std::int64_t c : cell) {
    h ^= static_cast<std::uint64_t>(c) + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
  }
  Rng rng(h);
  Anchor a;
  a.position = voxel_center(cell, voxel_size);
  a.feature.resize(kFeatureDim);
  for (auto& f : a.feature) f = rng.uniform(-0.1, 0.1);
  a.scaling = {voxel_size, voxel_size, voxel_size};
  a.offsets.resize(k);
  for (auto& o : a.offsets)
    for (auto& v : o) v = rng.uniform(-0.5, 0.5);
  return a;
}

inline AnchorSet make_anchor_set(const std::vector<Anchor>& anchors, std::size_t k, double voxel_size) {
  const std::size_t n = anchors.size();
  std::vector<double> pos(n * 3), feat(n * kFeatureDim), logs(n * 3), off(n * k * 3);
  for (std::size_t i = 0; i < n; ++i) {
    const Anchor& a = anchors[i];
    if (a.feature.size() != kFeatureDim) throw ContractError("anchor feature must have 32 entries");
    if (a.offsets.size() != k) throw ContractError("anchor must have exactly k offsets");
    for (std::size_t c = 0; c < 3; ++c) {
      if (!(a.scaling[c] > 0.0)) throw ContractError("anchor scaling must be positive");
      pos[3 * i + c] = a.position[c];
      logs[3 * i + c] = std::log(a.scaling[c]);
    }
    std::copy(a.feature.begin(), a.feature.end(), feat.begin() + static_cast<std::ptrdiff_t>(i * kFeatureDim));
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t c = 0; c < 3; ++c) off[(i * k + j) * 3 + c] = a.offsets[j][c];
  }
  AnchorSet s;
  s.k = k;
  s.voxel_size = voxel_size;
  s.positions = ad::Tensor::parameter({n, 3}, std::move(pos));
  s.features = ad::Tensor::parameter({n, kFeatureDim}, std::move(feat));
  s.log_scaling = ad::Tensor::parameter({n, 3}, std::move(logs));
  s.offsets = ad::Tensor::parameter({n, k, 3}, std::move(off));
  return s;
}

/// One anchor per occupied voxel, at the voxel center, in lexicographic cell order.
inline AnchorSet voxelize(const PointCloud& cloud, double voxel_size, std::size_t k, std::uint64_t seed) {
  if (cloud.points.empty()) throw ContractError("voxelize: empty point cloud");
  if (!(voxel_size > 0.0)) throw ContractError("voxelize: voxel_size must be positive");
  if (k == 0) throw ContractError("voxelize: k must be positive");
  std::vector<VoxelCell> cells;
  cells.reserve(cloud.size());
  for (const auto& p : cloud.points) cells.push_back(voxel_of(p, voxel_size));
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  std::vector<Anchor> anchors;
  anchors.reserve(cells.size());
  for (const auto& c : cells) anchors.push_back(initial_anchor(c, voxel_size, k, seed));
  return make_anchor_set(anchors, k, voxel_size);
}

/// Visible anchors of one view together with their viewing geometry.
struct ViewContext {
  std::vector<std::size_t> indices;
  std::vector<std::array<double, 3>> directions;  // unit, camera center -> anchor
  std::vector<double> distances;                  // Euclidean distance to camera center
  Eigen::Vector3d camera_center = Eigen::Vector3d::Zero();

  std::size_t size() const { return indices.size(); }
};

inline constexpr double kVisibilityMargin = 0.15;

/// Keeps anchors with camera depth in [near, far] whose projection lands in
/// the image rectangle grown by `margin` of its extent on every side.
inline ViewContext visible_anchors(const AnchorSet& anchors, const Camera& cam, double margin = kVisibilityMargin) {
  ViewContext view;
  view.camera_center = cam.center();
  const double w = static_cast<double>(cam.width), h = static_cast<double>(cam.height);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const Eigen::Vector3d x(anchors.positions[3 * i], anchors.positions[3 * i + 1], anchors.positions[3 * i + 2]);
    const Eigen::Vector3d t = cam.to_camera(x);
    if (!(t.z() >= cam.near && t.z() <= cam.far)) continue;
    const double u = cam.fx * t.x() / t.z() + cam.cx;
    const double v = cam.fy * t.y() / t.z() + cam.cy;
    if (u < -margin * w || u > (1.0 + margin) * w || v < -margin * h || v > (1.0 + margin) * h) continue;
    const Eigen::Vector3d d = x - view.camera_center;
    const double dist = d.norm();
    if (!(dist > 0.0)) continue;
    view.indices.push_back(i);
    view.directions.push_back({d.x() / dist, d.y() / dist, d.z() / dist});
    view.distances.push_back(dist);
  }
  return view;
}

}  // namespace ahgs
