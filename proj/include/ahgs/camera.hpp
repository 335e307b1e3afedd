#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "ahgs/errors.hpp"

namespace ahgs {

/// Pinhole camera. World points map to camera space as R·x + t, with +z
/// pointing forward and +y down. Pixel (i, j) is sampled at (j + 0.5, i + 0.5).
struct Camera {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  std::size_t width = 0, height = 0;
  double near = 0.01, far = 100.0;
  std::string image;

  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return rotation * world + translation; }

  /// Throws ContractError when any documented invariant fails.
  void validate() const {
    const Eigen::Matrix3d rrt = rotation * rotation.transpose();
    if (!((rrt - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= 1e-9) || !(std::abs(rotation.determinant() - 1.0) <= 1e-9)) {
      throw ContractError("camera rotation must be orthonormal with det +1");
    }
    if (!(near > 0.0 && near < far)) throw ContractError("camera requires 0 < near < far");
    if (!(fx > 0.0 && fy > 0.0)) throw ContractError("camera focal lengths must be positive");
    if (width == 0 || height == 0) throw ContractError("camera image size must be positive");
  }
};

/// Camera at `eye` looking at `target`; `up` is the approximate world up.
inline Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up, double fx,
                      double fy, std::size_t width, std::size_t height, double near = 0.05, double far = 100.0) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  const Eigen::Vector3d right = forward.cross(up).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  Camera cam;
  cam.rotation.row(0) = right;
  cam.rotation.row(1) = down;
  cam.rotation.row(2) = forward;
  // re-orthonormalize to keep det within 1e-9 after rounding
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cam.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  cam.rotation = svd.matrixU() * svd.matrixV().transpose();
  cam.translation = -cam.rotation * eye;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = 0.5 * static_cast<double>(width);
  cam.cy = 0.5 * static_cast<double>(height);
  cam.width = width;
  cam.height = height;
  cam.near = near;
  cam.far = far;
  return cam;
}

// ---------------------------------------------------------------------------
// camera list file: JSON array of
// {image, width, height, fx, fy, cx, cy, rotation[9], translation[3], near, far}

inline nlohmann::json camera_to_json(const Camera& c) {
  nlohmann::json j;
  j["image"] = c.image;
  j["width"] = c.width;
  j["height"] = c.height;
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  std::vector<double> r(9);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r[3 * i + k] = c.rotation(i, k);
  j["rotation"] = r;
  j["translation"] = std::vector<double>{c.translation.x(), c.translation.y(), c.translation.z()};
  j["near"] = c.near;
  j["far"] = c.far;
  return j;
}

inline Camera camera_from_json(const nlohmann::json& j) {
  static const std::array<const char*, 11> keys = {"image", "width", "height", "fx", "fy", "cx",
                                                   "cy", "rotation", "translation", "near", "far"};
  if (!j.is_object()) throw Error("camera entry must be an object");
  for (const char* k : keys) {
    if (!j.contains(k)) throw Error(std::string("camera entry missing key '") + k + "'");
  }
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* s) { return k == s; }) == keys.end()) {
      throw Error("camera entry has unknown key '" + k + "'");
    }
  }
  Camera c;
  try {
    c.image = j.at("image").get<std::string>();
    c.width = j.at("width").get<std::size_t>();
    c.height = j.at("height").get<std::size_t>();
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    const auto r = j.at("rotation").get<std::vector<double>>();
    const auto t = j.at("translation").get<std::vector<double>>();
    if (r.size() != 9 || t.size() != 3) throw Error("camera rotation needs 9 values and translation 3");
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) c.rotation(i, k) = r[static_cast<std::size_t>(3 * i + k)];
    c.translation = Eigen::Vector3d(t[0], t[1], t[2]);
    c.near = j.at("near").get<double>();
    c.far = j.at("far").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("camera entry: ") + e.what());
  }
  c.validate();
  return c;
}

inline std::string cameras_to_string(const std::vector<Camera>& cams) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : cams) arr.push_back(camera_to_json(c));
  return arr.dump(2) + "\n";
}

inline std::vector<Camera> cameras_from_string(const std::string& text) {
  nlohmann::json arr;
  try {
    arr = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("camera file: ") + e.what(), e.byte);
  }
  if (!arr.is_array()) throw Error("camera file must hold a JSON array");
  std::vector<Camera> cams;
  for (const auto& j : arr) cams.push_back(camera_from_json(j));
  return cams;
}

inline std::vector<Camera> read_cameras(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open camera file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return cameras_from_string(ss.str());
}

inline void write_cameras(const std::filesystem::path& path, const std::vector<Camera>& cams) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << cameras_to_string(cams);
}

}  // namespace ahgs
