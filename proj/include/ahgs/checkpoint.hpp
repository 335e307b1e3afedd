#pragma once

// Binary checkpoint:
//   "AHGS" | u32 version | u64 iteration | 32-byte config hash | u32 array count
//   then per array: u64 length | length × float64, all little-endian.
// Arrays in order: descriptor, anchor positions, features, log scaling,
// offsets, then w1 b1 w2 b2 of the opacity, rotation, scale, color and
// concentration heads.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ahgs/errors.hpp"
#include "ahgs/model.hpp"

namespace ahgs {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kDescriptorSize = 23;

struct Checkpoint {
  std::uint64_t iteration = 0;
  std::array<std::uint8_t, 32> config_hash{};
  SceneModel model;
};

namespace ckpt_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_array(std::string& out, std::span<const double> values) {
  put_u64(out, values.size());
  for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::vector<double> array(std::size_t expected, const char* what) {
    const std::uint64_t n = uint(8);
    if (n != expected) {
      throw LoadError(std::string("checkpoint: array '") + what + "' has length " + std::to_string(n) + ", expected " +
                      std::to_string(expected));
    }
    need(8 * n);
    std::vector<double> v(n);
    for (auto& x : v) x = std::bit_cast<double>(uint(8));
    return v;
  }

  /// Length of the next array without consuming it.
  std::uint64_t peek_length() {
    const std::size_t save = pos_;
    const std::uint64_t n = uint(8);
    pos_ = save;
    return n;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw LoadError("checkpoint: truncated at byte " + std::to_string(pos_));
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace ckpt_detail

inline std::vector<double> model_descriptor(const SceneModel& m) {
  const ModelConfig& c = m.config;
  return {static_cast<double>(c.k),
          c.voxel_size,
          static_cast<double>(c.num_freqs_dir),
          static_cast<double>(c.num_freqs_pos),
          static_cast<double>(c.sh_bands),
          c.sh_degrees == enc::DegreeSet::kLinear ? 0.0 : 1.0,
          c.sh_full_m ? 1.0 : 0.0,
          c.use_ddfe ? 1.0 : 0.0,
          c.use_pe ? 1.0 : 0.0,
          c.kappa_min,
          static_cast<double>(c.hidden),
          m.bounds.lo[0], m.bounds.lo[1], m.bounds.lo[2],
          m.bounds.hi[0], m.bounds.hi[1], m.bounds.hi[2],
          m.raster.background.x(), m.raster.background.y(), m.raster.background.z(),
          m.raster.t_min,
          m.raster.lambda_reg,
          m.opacity_threshold};
}

inline std::string encode_checkpoint(const Checkpoint& ck) {
  const SceneModel& m = ck.model;
  std::string out = "AHGS";
  ckpt_detail::put_u32(out, kCheckpointVersion);
  ckpt_detail::put_u64(out, ck.iteration);
  out.append(reinterpret_cast<const char*>(ck.config_hash.data()), ck.config_hash.size());
  ckpt_detail::put_u32(out, 25);
  const auto desc = model_descriptor(m);
  ckpt_detail::put_array(out, desc);
  for (const auto* t : {&m.anchors.positions, &m.anchors.features, &m.anchors.log_scaling, &m.anchors.offsets}) {
    ckpt_detail::put_array(out, t->data());
  }
  for (const Mlp* h : m.heads.all())
    for (const auto& t : h->parameters()) ckpt_detail::put_array(out, t.data());
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "AHGS") != 0) throw LoadError("checkpoint: bad magic");
  ckpt_detail::Reader r(bytes);
  r.uint(4);
  const auto version = r.uint(4);
  if (version != kCheckpointVersion) throw LoadError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.iteration = r.uint(8);
  for (auto& b : ck.config_hash) b = static_cast<std::uint8_t>(r.uint(1));
  if (r.uint(4) != 25) throw LoadError("checkpoint: unexpected array count");

  const auto d = r.array(kDescriptorSize, "descriptor");
  auto as_count = [](double v, const char* what) {
    if (!(v >= 0.0 && v < 1e9) || v != std::floor(v)) throw LoadError(std::string("checkpoint: bad ") + what);
    return static_cast<std::size_t>(v);
  };
  SceneModel& m = ck.model;
  ModelConfig& c = m.config;
  c.k = as_count(d[0], "k");
  c.voxel_size = d[1];
  c.num_freqs_dir = as_count(d[2], "num_freqs_dir");
  c.num_freqs_pos = as_count(d[3], "num_freqs_pos");
  c.sh_bands = static_cast<int>(as_count(d[4], "sh_bands"));
  c.sh_degrees = d[5] == 0.0 ? enc::DegreeSet::kLinear : enc::DegreeSet::kPowersOfTwo;
  c.sh_full_m = d[6] != 0.0;
  c.use_ddfe = d[7] != 0.0;
  c.use_pe = d[8] != 0.0;
  c.kappa_min = d[9];
  c.hidden = as_count(d[10], "hidden");
  if (c.k == 0 || c.hidden == 0 || c.sh_bands < 1 || !(c.voxel_size > 0.0)) throw LoadError("checkpoint: bad descriptor");
  for (int i = 0; i < 3; ++i) {
    m.bounds.lo[i] = d[11 + i];
    m.bounds.hi[i] = d[14 + i];
  }
  m.raster.background = Eigen::Vector3d(d[17], d[18], d[19]);
  m.raster.t_min = d[20];
  m.raster.lambda_reg = d[21];
  m.opacity_threshold = d[22];

  const std::uint64_t pos_len = r.peek_length();
  if (pos_len % 3 != 0) throw LoadError("checkpoint: anchor positions length is not a multiple of 3");
  const std::size_t n = pos_len / 3;
  AnchorSet& a = m.anchors;
  a.k = c.k;
  a.voxel_size = c.voxel_size;
  a.positions = ad::Tensor::parameter({n, 3}, r.array(n * 3, "positions"));
  a.features = ad::Tensor::parameter({n, kFeatureDim}, r.array(n * kFeatureDim, "features"));
  a.log_scaling = ad::Tensor::parameter({n, 3}, r.array(n * 3, "log_scaling"));
  a.offsets = ad::Tensor::parameter({n, c.k, 3}, r.array(n * c.k * 3, "offsets"));

  auto read_mlp = [&](std::size_t in, std::size_t out, const char* name) {
    Mlp h;
    h.w1 = ad::Tensor::parameter({in, c.hidden}, r.array(in * c.hidden, name));
    h.b1 = ad::Tensor::parameter({1, c.hidden}, r.array(c.hidden, name));
    h.w2 = ad::Tensor::parameter({c.hidden, out}, r.array(c.hidden * out, name));
    h.b2 = ad::Tensor::parameter({1, out}, r.array(out, name));
    return h;
  };
  const std::size_t g = c.geometry_input_width();
  m.heads.opacity = read_mlp(g, c.k, "opacity head");
  m.heads.rotation = read_mlp(g, 4 * c.k, "rotation head");
  m.heads.scale = read_mlp(g, 3 * c.k, "scale head");
  m.heads.color = read_mlp(c.color_input_width(), 3 * c.k, "color head");
  m.heads.concentration = read_mlp(c.concentration_input_width(), 1, "concentration head");
  if (r.remaining() != 0) throw LoadError("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const std::string bytes = encode_checkpoint(ck);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write checkpoint " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("cannot write checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace ahgs
