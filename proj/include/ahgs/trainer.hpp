#pragma once

// Training loop: one view per iteration, total loss, backward, Adam, and
// anchor growing/pruning on a fixed schedule.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ahgs/adam.hpp"
#include "ahgs/checkpoint.hpp"
#include "ahgs/config.hpp"
#include "ahgs/loss.hpp"
#include "ahgs/model.hpp"
#include "ahgs/ply.hpp"

namespace ahgs {

/// Window statistics for growing and pruning.
struct DensifyStats {
  std::vector<double> max_child_opacity;  // per anchor
  std::vector<std::size_t> observed;      // per anchor: iterations in which it was decoded
  std::map<VoxelCell, std::pair<double, std::size_t>> voxel_grad;  // cell -> (sum of ‖∂L/∂μ2d‖, count)
  double grad_sum = 0.0;
  std::size_t grad_count = 0;

  void reset(std::size_t anchors) {
    max_child_opacity.assign(anchors, 0.0);
    observed.assign(anchors, 0);
    voxel_grad.clear();
    grad_sum = 0.0;
    grad_count = 0;
  }
};

struct DensifyResult {
  std::size_t grown = 0;
  std::size_t pruned = 0;
};

inline bool densify_due(std::size_t iteration, const TrainConfig& cfg) {
  return iteration >= cfg.densify_start && iteration <= cfg.densify_stop && iteration % cfg.densify_interval == 0;
}

namespace train_detail {

inline ad::Tensor take_rows(const ad::Tensor& t, const std::vector<std::optional<std::size_t>>& rows,
                            const std::vector<std::vector<double>>& fresh) {
  const std::size_t old_rows = t.dim(0);
  const std::size_t width = old_rows ? t.size() / old_rows : 0;
  ad::Shape shape = t.shape();
  shape[0] = rows.size();
  std::size_t w = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) w *= shape[i];
  std::vector<double> v;
  v.reserve(rows.size() * w);
  std::size_t next_fresh = 0;
  for (const auto& r : rows) {
    if (r) {
      const auto src = t.data().subspan(*r * width, width);
      v.insert(v.end(), src.begin(), src.end());
    } else {
      const auto& f = fresh.at(next_fresh++);
      v.insert(v.end(), f.begin(), f.end());
    }
  }
  return ad::Tensor::parameter(std::move(shape), std::move(v));
}

}  // namespace train_detail

/// Grows anchors into empty voxels whose mean Gaussian gradient exceeds
/// grow_grad_factor × the window mean, and prunes observed anchors whose
/// children never exceeded prune_opacity. No-op off schedule. Statistics are
/// reset and optimizer rows follow the anchors when `adam` is given.
inline DensifyResult grow_and_prune(AnchorSet& anchors, DensifyStats& stats, const TrainConfig& cfg,
                                    std::size_t iteration, Adam* adam = nullptr) {
  DensifyResult result;
  if (!densify_due(iteration, cfg)) return result;
  const std::size_t n = anchors.size();
  if (stats.max_child_opacity.size() != n || stats.observed.size() != n) {
    throw ContractError("grow_and_prune: statistics do not match the anchor count");
  }

  std::vector<bool> keep(n, true);
  std::size_t kept = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (stats.observed[i] > 0 && stats.max_child_opacity[i] < cfg.prune_opacity) {
      keep[i] = false;
      --kept;
    }
  }
  if (kept == 0) {  // never empty the scene
    keep.assign(n, true);
    kept = n;
  }

  std::map<VoxelCell, bool> occupied;
  for (std::size_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    occupied[voxel_of({anchors.positions[3 * i], anchors.positions[3 * i + 1], anchors.positions[3 * i + 2]},
                      cfg.voxel_size)] = true;
  }
  std::vector<VoxelCell> grow;
  if (stats.grad_count > 0) {
    const double threshold = cfg.grow_grad_factor * stats.grad_sum / static_cast<double>(stats.grad_count);
    for (const auto& [cell, acc] : stats.voxel_grad) {
      if (acc.second == 0 || occupied.count(cell)) continue;
      if (acc.first / static_cast<double>(acc.second) > threshold) grow.push_back(cell);
    }
  }

  result.pruned = n - kept;
  result.grown = grow.size();
  if (result.pruned == 0 && result.grown == 0) {
    stats.reset(n);
    return result;
  }

  std::vector<std::optional<std::size_t>> rows;
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) rows.emplace_back(i);
  std::vector<std::vector<double>> pos, feat, logs, off;
  for (const auto& cell : grow) {
    const Anchor a = initial_anchor(cell, cfg.voxel_size, anchors.k, cfg.seed);
    rows.emplace_back(std::nullopt);
    pos.push_back({a.position.begin(), a.position.end()});
    feat.push_back(a.feature);
    logs.push_back({std::log(a.scaling[0]), std::log(a.scaling[1]), std::log(a.scaling[2])});
    std::vector<double> o;
    for (const auto& r : a.offsets) o.insert(o.end(), r.begin(), r.end());
    off.push_back(std::move(o));
  }
  anchors.positions = train_detail::take_rows(anchors.positions, rows, pos);
  anchors.features = train_detail::take_rows(anchors.features, rows, feat);
  anchors.log_scaling = train_detail::take_rows(anchors.log_scaling, rows, logs);
  anchors.offsets = train_detail::take_rows(anchors.offsets, rows, off);
  if (adam) {
    adam->remap_rows("anchor", anchors.positions, rows);
    adam->remap_rows("feature", anchors.features, rows);
    adam->remap_rows("scaling", anchors.log_scaling, rows);
    adam->remap_rows("offset", anchors.offsets, rows);
  }
  stats.reset(anchors.size());
  return result;
}

struct IterationStats {
  std::size_t iteration = 0;
  double l1 = 0.0;
  double ssim_loss = 0.0;
  double perceptual = 0.0;
  double total = 0.0;
  std::size_t anchor_count = 0;
  std::size_t gaussian_count = 0;
  double wall_ms = 0.0;
};

/// CSV log, one row per iteration.
class StatsLog {
 public:
  explicit StatsLog(const std::filesystem::path& path) : out_(path) {
    if (!out_) throw Error("cannot write stats log " + path.string());
    out_ << "iteration,l1,ssim_loss,perceptual,total,anchor_count,gaussian_count,wall_ms\n";
  }

  void write(const IterationStats& s) {
    char line[256];
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g,%zu,%zu,%.3f\n", s.iteration, s.l1, s.ssim_loss,
                  s.perceptual, s.total, s.anchor_count, s.gaussian_count, s.wall_ms);
    out_ << line;
    out_.flush();
  }

 private:
  std::ofstream out_;
};

struct TrainingView {
  Camera camera;
  ad::Tensor target;           // (3, H, W)
  ad::Tensor target_features;  // (64, H, W), present when the perceptual term is used
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, const PointCloud& cloud, const std::vector<Camera>& cameras,
          const std::vector<ImageBuffer>& targets, loss::FeatureExtractor extractor)
      : cfg_(std::move(cfg)), fe_(std::move(extractor)), rng_(cfg_.seed ^ 0x5EEDCA3E7A11ULL) {
    cfg_.validate();
    if (cameras.empty()) throw ContractError("training needs at least one camera");
    if (cameras.size() != targets.size()) throw ContractError("one target image per camera is required");
    model_.config = cfg_.model();
    model_.anchors = voxelize(cloud, cfg_.voxel_size, cfg_.k, cfg_.seed);
    model_.heads = MlpHeads::make(model_.config, cfg_.seed);
    model_.bounds = SceneBounds::of(model_.anchors);
    model_.raster = cfg_.raster();
    model_.opacity_threshold = cfg_.opacity_threshold;
    for (std::size_t i = 0; i < cameras.size(); ++i) {
      cameras[i].validate();
      if (targets[i].width != cameras[i].width || targets[i].height != cameras[i].height) {
        throw ContractError("target image " + std::to_string(i) + " does not match its camera size");
      }
      TrainingView v{cameras[i], to_tensor(targets[i]), {}};
      if (cfg_.lambda_per > 0.0) v.target_features = fe_(v.target);
      views_.push_back(std::move(v));
    }
    setup_optimizer();
    stats_.reset(model_.anchors.size());
  }

  const TrainConfig& config() const { return cfg_; }
  const SceneModel& model() const { return model_; }
  SceneModel& model() { return model_; }
  std::size_t iteration() const { return iteration_; }
  bool done() const { return iteration_ >= cfg_.total_iterations; }
  const DensifyStats& densify_stats() const { return stats_; }
  const DensifyResult& last_densify() const { return last_densify_; }

  Checkpoint checkpoint() const { return {iteration_, cfg_.hash(), model_}; }

  /// Runs iteration `iteration()` and advances. A non-finite loss or
  /// gradient throws NumericError and leaves the model untouched.
  IterationStats step() {
    if (done()) throw ContractError("training already finished");
    const auto t0 = std::chrono::steady_clock::now();
    const TrainingView& view = views_[next_view()];

    adam_.zero_grad();
    ViewRender r = render_view(model_, view.camera);
    const loss::LossTerms terms = loss::total_loss_terms(r.image, view.target, iteration_, cfg_.weights(), fe_,
                                                         view.target_features.defined() ? &view.target_features : nullptr);
    const double total = terms.total.item();
    if (!std::isfinite(total)) {
      throw NumericError("non-finite loss at iteration " + std::to_string(iteration_));
    }
    ad::backward(terms.total);
    adam_.step();
    accumulate(r);

    IterationStats s;
    s.iteration = iteration_;
    s.l1 = terms.l1;
    s.ssim_loss = terms.ssim_loss;
    s.perceptual = terms.perceptual;
    s.total = total;
    s.gaussian_count = r.gaussians.size();

    ++iteration_;
    last_densify_ = grow_and_prune(model_.anchors, stats_, cfg_, iteration_, &adam_);
    s.anchor_count = model_.anchors.size();
    s.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return s;
  }

 private:
  void setup_optimizer() {
    adam_.add_group("anchor", model_.anchors.positions, cfg_.lr_anchor);
    adam_.add_group("feature", model_.anchors.features, cfg_.lr_feature);
    adam_.add_group("scaling", model_.anchors.log_scaling, cfg_.lr_scaling);
    adam_.add_group("offset", model_.anchors.offsets, cfg_.lr_offset);
    const char* names[] = {"opacity_mlp", "rotation_mlp", "scale_mlp", "color_mlp", "concentration_mlp"};
    const double rates[] = {cfg_.lr_mlp_opacity, cfg_.lr_mlp_rotation, cfg_.lr_mlp_scale, cfg_.lr_mlp_color,
                            cfg_.lr_mlp_concentration};
    const auto heads = model_.heads.all();
    const char* parts[] = {".w1", ".b1", ".w2", ".b2"};
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const auto params = heads[h]->parameters();
      for (std::size_t p = 0; p < params.size(); ++p) adam_.add_group(std::string(names[h]) + parts[p], params[p], rates[h]);
    }
  }

  std::size_t next_view() {
    if (cursor_ == order_.size()) {
      order_.resize(views_.size());
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

  void accumulate(const ViewRender& r) {
    const DecodedGaussians& g = r.gaussians;
    for (std::size_t i = 0; i < g.visible.size(); ++i) {
      const std::size_t a = g.visible[i];
      stats_.observed[a] += 1;
      stats_.max_child_opacity[a] = std::max(stats_.max_child_opacity[a], g.max_child_opacity[i]);
    }
    const auto& norms = r.aux->mean2d_grad_norm;
    for (std::size_t p = 0; p < g.size() && p < norms.size(); ++p) {
      if (!r.aux->projected[p]) continue;
      const VoxelCell cell = voxel_of({g.means[3 * p], g.means[3 * p + 1], g.means[3 * p + 2]}, cfg_.voxel_size);
      auto& acc = stats_.voxel_grad[cell];
      acc.first += norms[p];
      acc.second += 1;
      stats_.grad_sum += norms[p];
      stats_.grad_count += 1;
    }
  }

  TrainConfig cfg_;
  loss::FeatureExtractor fe_;
  Rng rng_;
  SceneModel model_;
  std::vector<TrainingView> views_;
  Adam adam_;
  DensifyStats stats_;
  DensifyResult last_densify_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t iteration_ = 0;
};

inline loss::FeatureExtractor make_feature_extractor(const TrainConfig& cfg) {
  return cfg.feature_weights.empty() ? loss::FeatureExtractor::builtin() : loss::FeatureExtractor::load(cfg.feature_weights);
}

}  // namespace ahgs
