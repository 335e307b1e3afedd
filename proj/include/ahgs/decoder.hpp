#pragma once

// Decodes visible anchors into neural Gaussians through the shared MLP heads.
// Attribute heads see (feature, distance, γ(direction), γ(position)); the
// color head sees (feature, distance, DDFE(direction, κ)) with κ predicted
// from (feature, position).

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ahgs/autodiff.hpp"
#include "ahgs/encoding.hpp"
#include "ahgs/random.hpp"
#include "ahgs/scene.hpp"

namespace ahgs {

using ad::Tensor;

struct ModelConfig {
  std::size_t k = 10;
  double voxel_size = 0.1;
  std::size_t num_freqs_dir = 4;
  std::size_t num_freqs_pos = 6;
  int sh_bands = 2;
  enc::DegreeSet sh_degrees = enc::DegreeSet::kLinear;
  bool sh_full_m = false;
  bool use_ddfe = true;  // false: color head sees the raw direction instead
  bool use_pe = true;    // false: attribute heads see raw direction and position
  double kappa_min = 0.1;
  std::size_t hidden = 32;

  double scale_max() const { return 3.0 * voxel_size; }
  enc::SHIndexSet sh_index_set() const { return enc::SHIndexSet::make(sh_bands, sh_degrees, sh_full_m, true); }

  std::size_t geometry_input_width() const {
    return kFeatureDim + 1 + (use_pe ? 2 * 3 * num_freqs_dir + 2 * 3 * num_freqs_pos : 6);
  }
  std::size_t color_input_width() const { return kFeatureDim + 1 + (use_ddfe ? sh_index_set().size() : 3); }
  std::size_t concentration_input_width() const { return kFeatureDim + 3; }
};

/// Two-layer perceptron: relu(x·W1 + b1)·W2 + b2.
struct Mlp {
  Tensor w1, b1, w2, b2;

  std::size_t in_width() const { return w1.dim(0); }
  std::size_t out_width() const { return w2.dim(1); }

  static Mlp make(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    auto uniform = [&](std::size_t rows, std::size_t cols, double bound) {
      std::vector<double> v(rows * cols);
      for (auto& x : v) x = rng.uniform(-bound, bound);
      return Tensor::parameter({rows, cols}, std::move(v));
    };
    Mlp m;
    m.w1 = uniform(in, hidden, 1.0 / std::sqrt(static_cast<double>(in)));
    m.b1 = Tensor::zeros({1, hidden}, true);
    m.w2 = uniform(hidden, out, 1.0 / std::sqrt(static_cast<double>(hidden)));
    m.b2 = Tensor::zeros({1, out}, true);
    return m;
  }

  Tensor operator()(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != in_width()) {
      throw ShapeError("Mlp: expected input width " + std::to_string(in_width()) + ", got " + ad::to_string(x.shape()));
    }
    return ad::matmul(ad::relu(ad::matmul(x, w1) + b1), w2) + b2;
  }

  std::vector<Tensor> parameters() const { return {w1, b1, w2, b2}; }
};

/// F_α, F_q, F_s, F_c and F_r, shared by every anchor of the scene.
struct MlpHeads {
  Mlp opacity, rotation, scale, color, concentration;

  static MlpHeads make(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng(seed ^ 0xA5A5A5A5F00DULL);
    MlpHeads h;
    const std::size_t g = cfg.geometry_input_width();
    h.opacity = Mlp::make(g, cfg.hidden, cfg.k, rng);
    h.rotation = Mlp::make(g, cfg.hidden, 4 * cfg.k, rng);
    h.scale = Mlp::make(g, cfg.hidden, 3 * cfg.k, rng);
    h.color = Mlp::make(cfg.color_input_width(), cfg.hidden, 3 * cfg.k, rng);
    h.concentration = Mlp::make(cfg.concentration_input_width(), cfg.hidden, 1, rng);
    // start every Gaussian at the identity rotation
    auto b = h.rotation.b2.mutable_data();
    for (std::size_t j = 0; j < cfg.k; ++j) b[4 * j] = 1.0;
    h.validate(cfg);
    return h;
  }

  /// Throws ShapeError unless every head matches the configured layouts.
  void validate(const ModelConfig& cfg) const {
    auto check = [](const Mlp& m, std::size_t in, std::size_t out, const char* name) {
      if (m.in_width() != in || m.out_width() != out || m.b1.size() != m.w1.dim(1) || m.w2.dim(0) != m.w1.dim(1) ||
          m.b2.size() != out) {
        throw ShapeError(std::string("head ") + name + " does not match the configured input/output widths");
      }
    };
    check(opacity, cfg.geometry_input_width(), cfg.k, "opacity");
    check(rotation, cfg.geometry_input_width(), 4 * cfg.k, "rotation");
    check(scale, cfg.geometry_input_width(), 3 * cfg.k, "scale");
    check(color, cfg.color_input_width(), 3 * cfg.k, "color");
    check(concentration, cfg.concentration_input_width(), 1, "concentration");
  }

  std::vector<Mlp*> all() { return {&opacity, &rotation, &scale, &color, &concentration}; }
  std::vector<const Mlp*> all() const { return {&opacity, &rotation, &scale, &color, &concentration}; }
};

/// Axis-aligned scene box used to map anchor positions to [-1, 1]³.
struct SceneBounds {
  std::array<double, 3> lo{-1.0, -1.0, -1.0};
  std::array<double, 3> hi{1.0, 1.0, 1.0};

  static SceneBounds of(const AnchorSet& anchors) {
    SceneBounds b;
    if (anchors.size() == 0) return b;
    for (std::size_t c = 0; c < 3; ++c) {
      b.lo[c] = b.hi[c] = anchors.positions[c];
    }
    for (std::size_t i = 1; i < anchors.size(); ++i)
      for (std::size_t c = 0; c < 3; ++c) {
        b.lo[c] = std::min(b.lo[c], anchors.positions[3 * i + c]);
        b.hi[c] = std::max(b.hi[c], anchors.positions[3 * i + c]);
      }
    // pad degenerate or thin extents by half a voxel on each side
    for (std::size_t c = 0; c < 3; ++c) {
      b.lo[c] -= 0.5 * anchors.voxel_size;
      b.hi[c] += 0.5 * anchors.voxel_size;
    }
    return b;
  }
};

/// Differentiable per-anchor inputs gathered for one view.
struct AnchorInputs {
  std::vector<std::size_t> indices;
  Tensor position;    // (N, 3)
  Tensor feature;     // (N, 32)
  Tensor scaling;     // (N, 3), positive
  Tensor offsets;     // (N, k, 3)
  Tensor distance;    // (N, 1)
  Tensor direction;   // (N, 3), unit
};

/// Gathers the visible anchors' parameters and recomputes viewing direction
/// and distance on the tape so that gradients reach anchor positions.
inline AnchorInputs gather_anchor_inputs(const AnchorSet& anchors, const ViewContext& view) {
  AnchorInputs in;
  in.indices = view.indices;
  const std::size_t n = view.size();
  in.position = ad::gather_rows(anchors.positions, view.indices);
  in.feature = ad::gather_rows(anchors.features, view.indices);
  in.scaling = ad::exp(ad::gather_rows(anchors.log_scaling, view.indices));
  in.offsets = ad::gather_rows(anchors.offsets, view.indices);
  const Tensor center =
      Tensor::constant({1, 3}, {view.camera_center.x(), view.camera_center.y(), view.camera_center.z()});
  const Tensor diff = in.position - center;
  in.distance = n ? ad::sqrt(ad::sum(ad::square(diff), 1)) : Tensor::zeros({0, 1});
  in.direction = n ? ad::normalize(diff) : Tensor::zeros({0, 3});
  return in;
}

/// μ_i = x_v + O_i ⊙ l_v for every anchor row; result (N·k, 3), anchor-major.
inline Tensor gaussian_positions(const Tensor& position, const Tensor& scaling, const Tensor& offsets) {
  const std::size_t n = position.dim(0), k = offsets.dim(1);
  const Tensor x = ad::reshape(position, {n, 1, 3});
  const Tensor l = ad::reshape(scaling, {n, 1, 3});
  return ad::reshape(x + offsets * l, {n * k, 3});
}

/// Plain-value form for a single anchor.
inline std::vector<std::array<double, 3>> gaussian_positions(const Anchor& a) {
  std::vector<std::array<double, 3>> out;
  out.reserve(a.offsets.size());
  for (const auto& o : a.offsets) {
    out.push_back({a.position[0] + o[0] * a.scaling[0], a.position[1] + o[1] * a.scaling[1],
                   a.position[2] + o[2] * a.scaling[2]});
  }
  return out;
}

namespace detail {
inline Tensor normalized_position(const Tensor& x, const SceneBounds& b) {
  const Tensor lo = Tensor::constant({1, 3}, {b.lo[0], b.lo[1], b.lo[2]});
  const Tensor inv = Tensor::constant(
      {1, 3}, {2.0 / (b.hi[0] - b.lo[0]), 2.0 / (b.hi[1] - b.lo[1]), 2.0 / (b.hi[2] - b.lo[2])});
  return (x - lo) * inv - 1.0;
}
}  // namespace detail

struct GeometryOutputs {
  Tensor opacity;   // (N, k) in (0, 1)
  Tensor rotation;  // (N·k, 4), unit quaternions (w, x, y, z)
  Tensor scale;     // (N·k, 3) in (0, s_max)
};

inline Tensor geometry_input(const AnchorInputs& in, const SceneBounds& bounds, const ModelConfig& cfg) {
  if (cfg.use_pe) {
    return ad::concat({in.feature, in.distance, enc::positional_encoding(in.direction, cfg.num_freqs_dir),
                       enc::positional_encoding(detail::normalized_position(in.position, bounds), cfg.num_freqs_pos)},
                      1);
  }
  return ad::concat({in.feature, in.distance, in.direction, detail::normalized_position(in.position, bounds)}, 1);
}

inline GeometryOutputs decode_geometry(const AnchorInputs& in, const MlpHeads& heads, const SceneBounds& bounds,
                                       const ModelConfig& cfg) {
  const std::size_t n = in.position.dim(0), k = cfg.k;
  const Tensor x = geometry_input(in, bounds, cfg);
  GeometryOutputs g;
  g.opacity = ad::sigmoid(heads.opacity(x));
  g.rotation = ad::normalize(ad::reshape(heads.rotation(x), {n * k, 4}));
  g.scale = ad::sigmoid(ad::reshape(heads.scale(x), {n * k, 3})) * cfg.scale_max();
  return g;
}

/// κ = softplus(F_r(feature, raw position)) + κ_min, shape (N, 1).
inline Tensor concentration(const AnchorInputs& in, const MlpHeads& heads, const ModelConfig& cfg) {
  return ad::softplus(heads.concentration(ad::concat({in.feature, in.position}, 1))) + cfg.kappa_min;
}

inline Tensor color_input(const AnchorInputs& in, const Tensor& kappa, const ModelConfig& cfg) {
  if (cfg.use_ddfe) {
    return ad::concat({in.feature, in.distance, enc::ddfe(in.direction, kappa, cfg.sh_index_set())}, 1);
  }
  return ad::concat({in.feature, in.distance, in.direction}, 1);
}

/// Colors (N·k, 3) in (0, 1).
inline Tensor decode_color(const AnchorInputs& in, const MlpHeads& heads, const ModelConfig& cfg, Tensor* kappa_out = nullptr) {
  const std::size_t n = in.position.dim(0);
  const Tensor kappa = concentration(in, heads, cfg);
  if (kappa_out) *kappa_out = kappa;
  return ad::sigmoid(ad::reshape(heads.color(color_input(in, kappa, cfg)), {n * cfg.k, 3}));
}

/// Indices of entries strictly above the threshold, in order.
inline std::vector<std::size_t> opacity_cutoff(std::span<const double> opacity, double threshold) {
  if (!(threshold >= 0.0 && threshold < 1.0)) throw ContractError("opacity_cutoff: threshold must lie in [0, 1)");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < opacity.size(); ++i)
    if (opacity[i] > threshold) keep.push_back(i);
  return keep;
}

/// Neural Gaussians of one view after the opacity cutoff, as tape tensors.
struct DecodedGaussians {
  Tensor means;     // (M, 3)
  Tensor opacity;   // (M, 1)
  Tensor rotation;  // (M, 4)
  Tensor scale;     // (M, 3)
  Tensor color;     // (M, 3)
  std::vector<std::size_t> anchor_of;      // source anchor (global index) per Gaussian
  std::vector<double> max_child_opacity;   // per visible anchor, before the cutoff
  std::vector<std::size_t> visible;        // global indices of the decoded anchors

  std::size_t size() const { return anchor_of.size(); }
};

inline DecodedGaussians decode_view(const AnchorSet& anchors, const ViewContext& view, const MlpHeads& heads,
                                    const SceneBounds& bounds, const ModelConfig& cfg, double opacity_threshold) {
  DecodedGaussians out;
  out.visible = view.indices;
  const std::size_t n = view.size(), k = cfg.k;
  if (n == 0) {
    out.means = Tensor::zeros({0, 3});
    out.opacity = Tensor::zeros({0, 1});
    out.rotation = Tensor::zeros({0, 4});
    out.scale = Tensor::zeros({0, 3});
    out.color = Tensor::zeros({0, 3});
    return out;
  }
  const AnchorInputs in = gather_anchor_inputs(anchors, view);
  const GeometryOutputs g = decode_geometry(in, heads, bounds, cfg);
  const Tensor color = decode_color(in, heads, cfg);
  const Tensor means = gaussian_positions(in.position, in.scaling, in.offsets);
  const Tensor opacity = ad::reshape(g.opacity, {n * k, 1});

  out.max_child_opacity.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out.max_child_opacity[i] = std::max(out.max_child_opacity[i], opacity[i * k + j]);

  const auto keep = opacity_cutoff(opacity.data(), opacity_threshold);
  out.anchor_of.reserve(keep.size());
  for (std::size_t r : keep) out.anchor_of.push_back(view.indices[r / k]);
  if (keep.size() == n * k) {
    out.means = means;
    out.opacity = opacity;
    out.rotation = g.rotation;
    out.scale = g.scale;
    out.color = color;
  } else {
    out.means = ad::gather_rows(means, keep);
    out.opacity = ad::gather_rows(opacity, keep);
    out.rotation = ad::gather_rows(g.rotation, keep);
    out.scale = ad::gather_rows(g.scale, keep);
    out.color = ad::gather_rows(color, keep);
  }
  return out;
}

}  // namespace ahgs
