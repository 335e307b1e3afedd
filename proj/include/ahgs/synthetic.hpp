#pragma once

// Small ground-truth scenes for end-to-end runs. Target images come from a
// direct ray marcher / ray caster over the analytic primitives, not from the
// splat rasterizer.

#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ahgs/camera.hpp"
#include "ahgs/errors.hpp"
#include "ahgs/evaluate.hpp"
#include "ahgs/image.hpp"
#include "ahgs/ply.hpp"
#include "ahgs/random.hpp"

namespace ahgs {

enum class SyntheticKind { kTriGaussian, kCheckerPlane, kTexturedSphere };

inline SyntheticKind parse_synthetic_kind(const std::string& s) {
  if (s == "tri-gaussian") return SyntheticKind::kTriGaussian;
  if (s == "checker-plane") return SyntheticKind::kCheckerPlane;
  if (s == "textured-sphere") return SyntheticKind::kTexturedSphere;
  throw ContractError("unknown synthetic scene kind '" + s + "' (tri-gaussian, checker-plane, textured-sphere)");
}

struct SyntheticSceneSpec {
  SyntheticKind kind = SyntheticKind::kTriGaussian;
  std::size_t cameras = 8;
  std::size_t size = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (cameras < 2) throw ContractError("synthetic scene needs at least 2 cameras");
    if (size < 16) throw ContractError("synthetic image size must be at least 16");
  }
};

struct SyntheticScene {
  PointCloud cloud;
  ViewSet train;
  ViewSet test;
};

namespace synth_detail {

struct Blob {
  Eigen::Vector3d mean;
  Eigen::Matrix3d inv_cov;
  Eigen::Matrix3d sqrt_cov;
  Eigen::Vector3d color;
  double density;
};

inline Blob make_blob(const Eigen::Vector3d& mean, const Eigen::Vector3d& sigma, double yaw, const Eigen::Vector3d& color) {
  const Eigen::Matrix3d r = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  Blob b;
  b.mean = mean;
  b.sqrt_cov = r * sigma.asDiagonal();
  b.inv_cov = (b.sqrt_cov * b.sqrt_cov.transpose()).inverse();
  b.color = color;
  b.density = 9.0;
  return b;
}

inline const std::vector<Blob>& blobs() {
  static const std::vector<Blob> b = {
      make_blob({-0.45, -0.2, 0.1}, {0.34, 0.18, 0.24}, 0.5, {0.9, 0.25, 0.2}),
      make_blob({0.4, -0.1, -0.15}, {0.18, 0.38, 0.2}, -0.3, {0.2, 0.8, 0.3}),
      make_blob({0.0, 0.45, 0.2}, {0.3, 0.22, 0.34}, 1.1, {0.25, 0.35, 0.9}),
  };
  return b;
}

struct Ray {
  Eigen::Vector3d origin, dir;
};

inline Ray pixel_ray(const Camera& cam, double u, double v) {
  const Eigen::Vector3d d_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
  return {cam.center(), (cam.rotation.transpose() * d_cam).normalized()};
}

/// Entry/exit distances of a ray through the sphere |x| <= radius, if any.
inline bool sphere_span(const Ray& r, double radius, double& t0, double& t1) {
  const double b = r.origin.dot(r.dir);
  const double c = r.origin.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc <= 0.0) return false;
  const double s = std::sqrt(disc);
  t0 = std::max(0.0, -b - s);
  t1 = -b + s;
  return t1 > t0;
}

inline Eigen::Vector3d march_blobs(const Ray& r) {
  double t0 = 0.0, t1 = 0.0;
  if (!sphere_span(r, 1.8, t0, t1)) return Eigen::Vector3d::Zero();
  const double dt = 0.004;
  Eigen::Vector3d out = Eigen::Vector3d::Zero();
  double transmittance = 1.0;
  for (double t = t0 + 0.5 * dt; t < t1 && transmittance > 1e-6; t += dt) {
    const Eigen::Vector3d x = r.origin + t * r.dir;
    double rho = 0.0;
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (const Blob& b : blobs()) {
      const Eigen::Vector3d d = x - b.mean;
      const double w = b.density * std::exp(-0.5 * d.dot(b.inv_cov * d));
      rho += w;
      c += w * b.color;
    }
    if (rho < 1e-12) continue;
    const double a = 1.0 - std::exp(-rho * dt);
    out += transmittance * a * (c / rho);
    transmittance *= 1.0 - a;
  }
  return out;
}

inline Eigen::Vector3d checker_color(double x, double y) {
  const int ix = static_cast<int>(std::floor((x + 1.0) * 4.0));
  const int iy = static_cast<int>(std::floor((y + 1.0) * 4.0));
  return ((ix + iy) % 2 == 0) ? Eigen::Vector3d(0.92, 0.85, 0.7) : Eigen::Vector3d(0.12, 0.18, 0.38);
}

inline Eigen::Vector3d cast_plane(const Ray& r) {
  if (std::abs(r.dir.z()) < 1e-12) return Eigen::Vector3d::Zero();
  const double t = -r.origin.z() / r.dir.z();
  if (t <= 0.0) return Eigen::Vector3d::Zero();
  const Eigen::Vector3d x = r.origin + t * r.dir;
  if (std::abs(x.x()) > 1.0 || std::abs(x.y()) > 1.0) return Eigen::Vector3d::Zero();
  return checker_color(x.x(), x.y());
}

inline constexpr double kSphereRadius = 0.8;

inline Eigen::Vector3d sphere_color(const Eigen::Vector3d& n) {
  const double lon = std::atan2(n.y(), n.x());
  const double lat = std::asin(std::clamp(n.z(), -1.0, 1.0));
  const int a = static_cast<int>(std::floor((lon + std::numbers::pi) / (2.0 * std::numbers::pi) * 12.0));
  const int b = static_cast<int>(std::floor((lat + 0.5 * std::numbers::pi) / std::numbers::pi * 6.0));
  return ((a + b) % 2 == 0) ? Eigen::Vector3d(0.95, 0.6, 0.15) : Eigen::Vector3d(0.15, 0.45, 0.75);
}

inline Eigen::Vector3d cast_sphere(const Ray& r) {
  double t0 = 0.0, t1 = 0.0;
  if (!sphere_span(r, kSphereRadius, t0, t1)) return Eigen::Vector3d::Zero();
  return sphere_color((r.origin + t0 * r.dir).normalized());
}

inline ImageBuffer render_target(SyntheticKind kind, const Camera& cam) {
  // surfaces have hard edges, so they are supersampled 4×4
  const int ss = kind == SyntheticKind::kTriGaussian ? 1 : 4;
  ImageBuffer img(cam.width, cam.height);
  for (std::size_t i = 0; i < cam.height; ++i) {
    for (std::size_t j = 0; j < cam.width; ++j) {
      Eigen::Vector3d acc = Eigen::Vector3d::Zero();
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          const double u = static_cast<double>(j) + (sx + 0.5) / ss;
          const double v = static_cast<double>(i) + (sy + 0.5) / ss;
          const Ray r = pixel_ray(cam, u, v);
          switch (kind) {
            case SyntheticKind::kTriGaussian: acc += march_blobs(r); break;
            case SyntheticKind::kCheckerPlane: acc += cast_plane(r); break;
            case SyntheticKind::kTexturedSphere: acc += cast_sphere(r); break;
          }
        }
      }
      acc /= static_cast<double>(ss * ss);
      for (int c = 0; c < 3; ++c) img.at(j, i, static_cast<std::size_t>(c)) = std::clamp(acc[c], 0.0, 1.0);
    }
  }
  return img;
}

inline PointCloud sample_points(SyntheticKind kind, std::uint64_t seed) {
  Rng rng(seed ^ 0x51A7E1D5ULL);
  PointCloud pc;
  auto add = [&](const Eigen::Vector3d& p, const Eigen::Vector3d& c) {
    pc.points.push_back({p.x(), p.y(), p.z()});
    pc.colors.push_back({c.x(), c.y(), c.z()});
  };
  switch (kind) {
    case SyntheticKind::kTriGaussian:
      for (const Blob& b : blobs()) {
        for (int n = 0; n < 400;) {
          const Eigen::Vector3d z(rng.normal(), rng.normal(), rng.normal());
          if (z.squaredNorm() > 4.0) continue;
          add(b.mean + b.sqrt_cov * z, b.color);
          ++n;
        }
      }
      break;
    case SyntheticKind::kCheckerPlane:
      for (int n = 0; n < 2500; ++n) {
        const double x = rng.uniform(-1.0, 1.0), y = rng.uniform(-1.0, 1.0);
        add({x, y, 0.0}, checker_color(x, y));
      }
      break;
    case SyntheticKind::kTexturedSphere:
      for (int n = 0; n < 2500; ++n) {
        Eigen::Vector3d d(rng.normal(), rng.normal(), rng.normal());
        d.normalize();
        add(kSphereRadius * d, sphere_color(d));
      }
      break;
  }
  return pc;
}

/// Camera on a ring of radius 3 at height 1.5, looking at the origin.
inline Camera ring_camera(double angle, std::size_t size) {
  const Eigen::Vector3d eye(3.0 * std::cos(angle), 3.0 * std::sin(angle), 1.5);
  const double f = 1.1 * static_cast<double>(size);
  return look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ(), f, f, size, size, 0.1, 20.0);
}

inline std::string image_name(const char* split, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "images/%s_%03zu.ppm", split, i);
  return buf;
}

}  // namespace synth_detail

/// Held-out cameras sit halfway between training cameras; there are
/// max(2, cameras / 4) of them.
inline SyntheticScene make_synthetic(const SyntheticSceneSpec& spec) {
  spec.validate();
  SyntheticScene s;
  s.cloud = synth_detail::sample_points(spec.kind, spec.seed);
  const double step = 2.0 * std::numbers::pi / static_cast<double>(spec.cameras);
  for (std::size_t i = 0; i < spec.cameras; ++i) {
    Camera c = synth_detail::ring_camera(step * static_cast<double>(i), spec.size);
    c.image = synth_detail::image_name("train", i);
    s.train.images.push_back(synth_detail::render_target(spec.kind, c));
    s.train.cameras.push_back(std::move(c));
  }
  const std::size_t n_test = std::max<std::size_t>(2, spec.cameras / 4);
  for (std::size_t j = 0; j < n_test; ++j) {
    const double slot = std::floor(static_cast<double>(j * spec.cameras) / static_cast<double>(n_test));
    Camera c = synth_detail::ring_camera(step * (slot + 0.5), spec.size);
    c.image = synth_detail::image_name("test", j);
    s.test.images.push_back(synth_detail::render_target(spec.kind, c));
    s.test.cameras.push_back(std::move(c));
  }
  return s;
}

inline void write_synthetic(const SyntheticScene& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  write_ply(dir / kPointsFile, s.cloud, PlyFormat::kBinary);
  write_cameras(dir / kCamerasFile, s.train.cameras);
  write_cameras(dir / kTestCamerasFile, s.test.cameras);
  for (const ViewSet* v : {&s.train, &s.test})
    for (std::size_t i = 0; i < v->cameras.size(); ++i) write_ppm(dir / v->cameras[i].image, v->images[i]);
}

}  // namespace ahgs
