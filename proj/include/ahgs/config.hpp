#pragma once

// Training configuration and its `key = value` text format.

#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "ahgs/decoder.hpp"
#include "ahgs/errors.hpp"
#include "ahgs/loss.hpp"
#include "ahgs/rasterizer.hpp"

namespace ahgs {

struct TrainConfig {
  std::size_t total_iterations = 2000;
  std::size_t k = 10;
  double voxel_size = 0.0;  // required
  int sh_bands = 2;
  enc::DegreeSet sh_degrees = enc::DegreeSet::kLinear;
  bool sh_full_m = false;
  std::size_t num_freqs_dir = 4;
  std::size_t num_freqs_pos = 6;
  bool use_ddfe = true;
  bool use_pe = true;
  double kappa_min = 0.1;

  double lambda_ssim = 0.2;
  double lambda_per = 0.05;
  std::string feature_weights;  // empty: built-in seeded extractor

  double lr_anchor = 1.6e-4;
  double lr_offset = 1e-2;
  double lr_feature = 2.5e-3;
  double lr_scaling = 7e-3;
  double lr_mlp_opacity = 2e-3;
  double lr_mlp_rotation = 2e-3;
  double lr_mlp_scale = 2e-3;
  double lr_mlp_color = 2e-3;
  double lr_mlp_concentration = 2e-3;

  double grow_grad_factor = 64.0;   // τ_g, relative to the mean Gaussian gradient of the window
  double prune_opacity = 0.005;     // τ_o
  std::size_t densify_interval = 100;
  std::size_t densify_start = 500;
  std::size_t densify_stop = 1500;

  std::uint64_t seed = 0;
  std::array<double, 3> background{0.0, 0.0, 0.0};
  double opacity_threshold = 0.005;  // τ_α
  double t_min = 1e-4;
  double lambda_reg = 0.3;

  ModelConfig model() const {
    ModelConfig m;
    m.k = k;
    m.voxel_size = voxel_size;
    m.num_freqs_dir = num_freqs_dir;
    m.num_freqs_pos = num_freqs_pos;
    m.sh_bands = sh_bands;
    m.sh_degrees = sh_degrees;
    m.sh_full_m = sh_full_m;
    m.use_ddfe = use_ddfe;
    m.use_pe = use_pe;
    m.kappa_min = kappa_min;
    return m;
  }

  RasterSettings raster() const {
    RasterSettings r;
    r.background = Eigen::Vector3d(background[0], background[1], background[2]);
    r.t_min = t_min;
    r.lambda_reg = lambda_reg;
    return r;
  }

  loss::LossWeights weights() const { return {lambda_ssim, lambda_per, total_iterations}; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (total_iterations < 1) fail("total_iterations must be >= 1");
    if (k < 1) fail("k must be >= 1");
    if (!(voxel_size > 0.0)) fail("voxel_size is required and must be positive");
    if (sh_bands < 1) fail("sh_bands must be >= 1");
    if (sh_degrees == enc::DegreeSet::kPowersOfTwo && sh_bands > 6) fail("sh_bands too large for powers-of-two degrees");
    if (num_freqs_dir < 1 || num_freqs_pos < 1) fail("num_freqs_* must be >= 1");
    if (!(kappa_min > 0.0)) fail("kappa_min must be positive");
    for (double v : {lambda_ssim, lambda_per, grow_grad_factor, prune_opacity, t_min, lambda_reg}) {
      if (!(v >= 0.0)) fail("weights and thresholds must be >= 0");
    }
    for (double v : {lr_anchor, lr_offset, lr_feature, lr_scaling, lr_mlp_opacity, lr_mlp_rotation, lr_mlp_scale,
                     lr_mlp_color, lr_mlp_concentration}) {
      if (!(v >= 0.0)) fail("learning rates must be >= 0");
    }
    if (!(opacity_threshold >= 0.0 && opacity_threshold < 1.0)) fail("opacity_threshold must lie in [0, 1)");
    if (!(lambda_reg > 0.0)) fail("lambda_reg must be positive");
    if (densify_interval < 1) fail("densify_interval must be >= 1");
    if (!(0 < densify_start && densify_start < densify_stop && densify_stop <= total_iterations)) {
      fail("densification window requires 0 < densify_start < densify_stop <= total_iterations");
    }
    for (double c : background) {
      if (!(c >= 0.0 && c <= 1.0)) fail("background components must lie in [0, 1]");
    }
  }

  /// Every field as `key = value` lines in a fixed order.
  std::string to_text() const;
  /// SHA-256 of to_text().
  std::array<std::uint8_t, 32> hash() const;
};

namespace config_detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

inline const std::vector<std::pair<std::string, Field>>& fields() {
  using C = TrainConfig;
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto num = [&t](const char* name, double C::*m) {
      t.push_back({name, {[m](const C& c) { return format_double(c.*m); },
                          [m, name](C& c, const std::string& v) { c.*m = parse_double(name, v); }}});
    };
    auto uint = [&t](const char* name, std::size_t C::*m) {
      t.push_back({name, {[m](const C& c) { return std::to_string(c.*m); },
                          [m, name](C& c, const std::string& v) { c.*m = static_cast<std::size_t>(parse_uint(name, v)); }}});
    };
    auto flag = [&t](const char* name, bool C::*m) {
      t.push_back({name, {[m](const C& c) { return std::string(c.*m ? "true" : "false"); },
                          [m, name](C& c, const std::string& v) { c.*m = parse_bool(name, v); }}});
    };
    uint("total_iterations", &C::total_iterations);
    uint("k", &C::k);
    num("voxel_size", &C::voxel_size);
    t.push_back({"sh_bands", {[](const C& c) { return std::to_string(c.sh_bands); },
                              [](C& c, const std::string& v) { c.sh_bands = static_cast<int>(parse_uint("sh_bands", v)); }}});
    t.push_back({"sh_degrees", {[](const C& c) { return std::string(c.sh_degrees == enc::DegreeSet::kLinear ? "linear" : "powers_of_two"); },
                                [](C& c, const std::string& v) {
                                  if (v == "linear") c.sh_degrees = enc::DegreeSet::kLinear;
                                  else if (v == "powers_of_two") c.sh_degrees = enc::DegreeSet::kPowersOfTwo;
                                  else throw ConfigError("config key 'sh_degrees': expected linear or powers_of_two");
                                }}});
    flag("sh_full_m", &C::sh_full_m);
    uint("num_freqs_dir", &C::num_freqs_dir);
    uint("num_freqs_pos", &C::num_freqs_pos);
    flag("use_ddfe", &C::use_ddfe);
    flag("use_pe", &C::use_pe);
    num("kappa_min", &C::kappa_min);
    num("lambda_ssim", &C::lambda_ssim);
    num("lambda_per", &C::lambda_per);
    t.push_back({"feature_weights", {[](const C& c) { return c.feature_weights; },
                                     [](C& c, const std::string& v) { c.feature_weights = v; }}});
    num("lr_anchor", &C::lr_anchor);
    num("lr_offset", &C::lr_offset);
    num("lr_feature", &C::lr_feature);
    num("lr_scaling", &C::lr_scaling);
    num("lr_mlp_opacity", &C::lr_mlp_opacity);
    num("lr_mlp_rotation", &C::lr_mlp_rotation);
    num("lr_mlp_scale", &C::lr_mlp_scale);
    num("lr_mlp_color", &C::lr_mlp_color);
    num("lr_mlp_concentration", &C::lr_mlp_concentration);
    num("grow_grad_factor", &C::grow_grad_factor);
    num("prune_opacity", &C::prune_opacity);
    uint("densify_interval", &C::densify_interval);
    uint("densify_start", &C::densify_start);
    uint("densify_stop", &C::densify_stop);
    t.push_back({"seed", {[](const C& c) { return std::to_string(c.seed); },
                          [](C& c, const std::string& v) { c.seed = parse_uint("seed", v); }}});
    t.push_back({"background", {[](const C& c) {
                                  return format_double(c.background[0]) + " " + format_double(c.background[1]) + " " +
                                         format_double(c.background[2]);
                                },
                                [](C& c, const std::string& v) {
                                  std::istringstream ss(v);
                                  std::string a, b, d, extra;
                                  if (!(ss >> a >> b >> d) || (ss >> extra)) {
                                    throw ConfigError("config key 'background': expected three numbers");
                                  }
                                  c.background = {parse_double("background", a), parse_double("background", b),
                                                  parse_double("background", d)};
                                }}});
    num("opacity_threshold", &C::opacity_threshold);
    num("t_min", &C::t_min);
    num("lambda_reg", &C::lambda_reg);
    return t;
  }();
  return table;
}

}  // namespace config_detail

inline std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& [key, f] : config_detail::fields()) out += key + " = " + f.get(*this) + "\n";
  return out;
}

inline std::array<std::uint8_t, 32> TrainConfig::hash() const {
  const std::string text = to_text();
  std::array<std::uint8_t, 32> digest{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1 || len != 32) {
    throw Error("SHA-256 digest failed");
  }
  return digest;
}

/// Parses `key = value` lines; `#` starts a comment. Unknown keys, repeated
/// keys and malformed values are errors. Missing keys keep their defaults.
inline TrainConfig parse_config(const std::string& text, TrainConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = config_detail::trim(line.substr(0, eq));
    const std::string value = config_detail::trim(line.substr(eq + 1));
    const auto& table = config_detail::fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const auto& kv) { return kv.first == key; });
    if (it == table.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.emplace(key, lineno).second) throw ConfigError("config key '" + key + "' given twice");
    it->second.set(base, value);
  }
  base.validate();
  return base;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

}  // namespace ahgs
