#pragma once

// Dataset directories and held-out evaluation.
//
// A dataset directory holds points.ply, cameras.json, optionally
// test_cameras.json, and the PPM images named by each camera's "image" field
// (relative to the directory).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ahgs/camera.hpp"
#include "ahgs/image.hpp"
#include "ahgs/model.hpp"
#include "ahgs/spectrum.hpp"

namespace ahgs {

inline constexpr const char* kPointsFile = "points.ply";
inline constexpr const char* kCamerasFile = "cameras.json";
inline constexpr const char* kTestCamerasFile = "test_cameras.json";

struct ViewSet {
  std::vector<Camera> cameras;
  std::vector<ImageBuffer> images;
};

/// Reads a camera file and every image it names. All missing images are
/// reported together.
inline ViewSet load_views(const std::filesystem::path& dir, const std::string& camera_file) {
  ViewSet v;
  v.cameras = read_cameras(dir / camera_file);
  std::string missing;
  for (const auto& c : v.cameras) {
    if (c.image.empty() || !std::filesystem::is_regular_file(dir / c.image)) {
      missing += "\n  " + (dir / c.image).string();
    }
  }
  if (!missing.empty()) throw LoadError("missing target images:" + missing);
  for (const auto& c : v.cameras) {
    ImageBuffer img = read_ppm(dir / c.image);
    if (img.width != c.width || img.height != c.height) {
      throw LoadError("image " + c.image + " does not match its camera size");
    }
    v.images.push_back(std::move(img));
  }
  return v;
}

struct EvalRow {
  std::string view;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double hf_ratio = 0.0;
};

struct EvalTable {
  std::vector<EvalRow> rows;
  EvalRow mean;

  std::string to_csv() const {
    std::string out = "view,psnr_db,ssim,hf_ratio\n";
    char buf[256];
    for (const EvalRow* r : rows_with_mean()) {
      std::snprintf(buf, sizeof buf, ",%.6f,%.6f\n", r->ssim, r->hf_ratio);
      out += r->view + "," + format_psnr(r->psnr_db) + buf;
    }
    return out;
  }

 private:
  std::vector<const EvalRow*> rows_with_mean() const {
    std::vector<const EvalRow*> p;
    for (const auto& r : rows) p.push_back(&r);
    p.push_back(&mean);
    return p;
  }
};

/// Renders every camera and scores it against its target. hf_ratio is taken
/// from the rendered image.
inline EvalTable evaluate(const SceneModel& model, const std::vector<Camera>& cameras,
                          const std::vector<ImageBuffer>& targets, double cutoff = kDefaultCutoff) {
  if (cameras.empty()) throw ContractError("evaluate: empty camera list");
  if (cameras.size() != targets.size()) throw ContractError("evaluate: one target per camera is required");
  EvalTable t;
  t.mean.view = "mean";
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    cameras[i].validate();
    const ImageBuffer img = render_image(model, cameras[i]);
    EvalRow r;
    r.view = cameras[i].image.empty() ? "view" + std::to_string(i) : cameras[i].image;
    r.psnr_db = psnr(img, targets[i]);
    r.ssim = ssim_value(img, targets[i]);
    r.hf_ratio = spectrum(img, cutoff).hf_ratio;
    t.mean.psnr_db += r.psnr_db;
    t.mean.ssim += r.ssim;
    t.mean.hf_ratio += r.hf_ratio;
    t.rows.push_back(std::move(r));
  }
  const double n = static_cast<double>(cameras.size());
  t.mean.psnr_db /= n;
  t.mean.ssim /= n;
  t.mean.hf_ratio /= n;
  return t;
}

}  // namespace ahgs
