#pragma once

// Minimal PLY reader/writer for SfM point clouds: a vertex element with
// x, y, z (float or double) and optional uchar red, green, blue. ASCII and
// binary little-endian bodies are supported. Other elements are skipped.

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ahgs/errors.hpp"

namespace ahgs {

struct PointCloud {
  std::vector<std::array<double, 3>> points;
  std::vector<std::array<double, 3>> colors;  // empty, or one per point in [0, 1]

  std::size_t size() const { return points.size(); }
  bool has_colors() const { return !colors.empty(); }
};

namespace ply_detail {

enum class Scalar { kInt8, kUInt8, kInt16, kUInt16, kInt32, kUInt32, kFloat32, kFloat64 };

inline std::optional<Scalar> parse_scalar(std::string_view s) {
  if (s == "char" || s == "int8") return Scalar::kInt8;
  if (s == "uchar" || s == "uint8") return Scalar::kUInt8;
  if (s == "short" || s == "int16") return Scalar::kInt16;
  if (s == "ushort" || s == "uint16") return Scalar::kUInt16;
  if (s == "int" || s == "int32") return Scalar::kInt32;
  if (s == "uint" || s == "uint32") return Scalar::kUInt32;
  if (s == "float" || s == "float32") return Scalar::kFloat32;
  if (s == "double" || s == "float64") return Scalar::kFloat64;
  return std::nullopt;
}

inline std::size_t scalar_size(Scalar s) {
  switch (s) {
    case Scalar::kInt8:
    case Scalar::kUInt8: return 1;
    case Scalar::kInt16:
    case Scalar::kUInt16: return 2;
    case Scalar::kInt32:
    case Scalar::kUInt32:
    case Scalar::kFloat32: return 4;
    case Scalar::kFloat64: return 8;
  }
  return 0;
}

template <class T>
T load_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

inline double load_scalar(Scalar s, const char* p) {
  switch (s) {
    case Scalar::kInt8: return load_le<std::int8_t>(p);
    case Scalar::kUInt8: return load_le<std::uint8_t>(p);
    case Scalar::kInt16: return load_le<std::int16_t>(p);
    case Scalar::kUInt16: return load_le<std::uint16_t>(p);
    case Scalar::kInt32: return load_le<std::int32_t>(p);
    case Scalar::kUInt32: return load_le<std::uint32_t>(p);
    case Scalar::kFloat32: return load_le<float>(p);
    case Scalar::kFloat64: return load_le<double>(p);
  }
  return 0.0;
}

struct Property {
  std::string name;
  Scalar type;
  bool is_list = false;
  Scalar count_type = Scalar::kUInt8;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> props;
};

}  // namespace ply_detail

inline PointCloud parse_ply(const std::string& bytes) {
  using namespace ply_detail;
  std::size_t pos = 0;
  auto next_line = [&]() -> std::pair<std::string, std::size_t> {
    if (pos >= bytes.size()) throw ParseError("PLY: unexpected end of header (missing end_header)", pos);
    const std::size_t start = pos;
    std::size_t end = bytes.find('\n', pos);
    if (end == std::string::npos) end = bytes.size();
    pos = end + 1;
    std::string line = bytes.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return {line, start};
  };

  auto [magic, magic_at] = next_line();
  if (magic != "ply") throw ParseError("PLY: missing 'ply' magic", magic_at);

  bool ascii = false, have_format = false;
  std::vector<Element> elements;
  while (true) {
    auto [line, at] = next_line();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw.empty() || kw == "comment" || kw == "obj_info") continue;
    if (kw == "end_header") break;
    if (kw == "format") {
      std::string fmt, ver;
      ls >> fmt >> ver;
      if (fmt == "ascii") {
        ascii = true;
      } else if (fmt == "binary_little_endian") {
        ascii = false;
      } else {
        throw ParseError("PLY: unsupported format '" + fmt + "'", at);
      }
      have_format = true;
    } else if (kw == "element") {
      Element e;
      long long count = -1;
      ls >> e.name >> count;
      if (e.name.empty() || count < 0) throw ParseError("PLY: malformed element line", at);
      e.count = static_cast<std::size_t>(count);
      elements.push_back(std::move(e));
    } else if (kw == "property") {
      if (elements.empty()) throw ParseError("PLY: property before any element", at);
      std::string t;
      ls >> t;
      Property p;
      if (t == "list") {
        std::string ct, it;
        ls >> ct >> it >> p.name;
        auto c = parse_scalar(ct);
        auto i = parse_scalar(it);
        if (!c || !i) throw ParseError("PLY: unsupported list property types", at);
        p.is_list = true;
        p.count_type = *c;
        p.type = *i;
      } else {
        auto s = parse_scalar(t);
        if (!s) throw ParseError("PLY: unsupported property type '" + t + "'", at);
        p.type = *s;
        ls >> p.name;
      }
      if (p.name.empty()) throw ParseError("PLY: property without a name", at);
      elements.back().props.push_back(std::move(p));
    } else {
      throw ParseError("PLY: unknown header keyword '" + kw + "'", at);
    }
  }
  if (!have_format) throw ParseError("PLY: missing format line", 0);

  const Element* vertex = nullptr;
  for (const auto& e : elements)
    if (e.name == "vertex") vertex = &e;
  if (!vertex) throw ParseError("PLY: no vertex element", pos);

  auto find = [&](const char* name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < vertex->props.size(); ++i)
      if (vertex->props[i].name == name) return i;
    return std::nullopt;
  };
  std::array<std::size_t, 3> xyz{};
  {
    const char* names[3] = {"x", "y", "z"};
    for (int i = 0; i < 3; ++i) {
      auto k = find(names[i]);
      if (!k) throw ParseError(std::string("PLY: vertex lacks property '") + names[i] + "'", pos);
      const auto& p = vertex->props[*k];
      if (p.is_list || (p.type != Scalar::kFloat32 && p.type != Scalar::kFloat64)) {
        throw ParseError(std::string("PLY: vertex property '") + names[i] + "' must be float or double", pos);
      }
      xyz[static_cast<std::size_t>(i)] = *k;
    }
  }
  std::optional<std::array<std::size_t, 3>> rgb;
  {
    auto r = find("red"), g = find("green"), b = find("blue");
    if (r && g && b) {
      for (auto k : {*r, *g, *b}) {
        if (vertex->props[k].is_list || vertex->props[k].type != Scalar::kUInt8) {
          throw ParseError("PLY: color properties must be uchar", pos);
        }
      }
      rgb = std::array<std::size_t, 3>{*r, *g, *b};
    }
  }
  for (const auto& p : vertex->props) {
    if (p.is_list) throw ParseError("PLY: list properties on vertices are not supported", pos);
  }

  PointCloud cloud;
  cloud.points.reserve(vertex->count);
  if (rgb) cloud.colors.reserve(vertex->count);
  std::vector<double> row;

  if (ascii) {
    auto next_token = [&]() -> std::pair<std::string_view, std::size_t> {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos >= bytes.size()) throw ParseError("PLY: truncated ASCII body", pos);
      const std::size_t start = pos;
      while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      return {std::string_view(bytes).substr(start, pos - start), start};
    };
    auto number = [&]() {
      auto [tok, at] = next_token();
      std::string s(tok);
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (end != s.c_str() + s.size()) throw ParseError("PLY: bad number '" + s + "'", at);
      return v;
    };
    for (const auto& e : elements) {
      for (std::size_t i = 0; i < e.count; ++i) {
        row.clear();
        for (const auto& p : e.props) {
          if (p.is_list) {
            const auto n = static_cast<std::size_t>(number());
            for (std::size_t k = 0; k < n; ++k) number();
            row.push_back(0.0);
          } else {
            row.push_back(number());
          }
        }
        if (&e == vertex) {
          cloud.points.push_back({row[xyz[0]], row[xyz[1]], row[xyz[2]]});
          if (rgb) cloud.colors.push_back({row[(*rgb)[0]] / 255.0, row[(*rgb)[1]] / 255.0, row[(*rgb)[2]] / 255.0});
        }
      }
      if (&e == vertex) break;
    }
  } else {
    for (const auto& e : elements) {
      for (std::size_t i = 0; i < e.count; ++i) {
        row.clear();
        for (const auto& p : e.props) {
          if (p.is_list) {
            const std::size_t cs = scalar_size(p.count_type);
            if (bytes.size() - pos < cs) throw ParseError("PLY: truncated binary body", pos);
            const auto n = static_cast<std::size_t>(load_scalar(p.count_type, &bytes[pos]));
            pos += cs;
            const std::size_t skip = n * scalar_size(p.type);
            if (bytes.size() - pos < skip) throw ParseError("PLY: truncated binary body", pos);
            pos += skip;
            row.push_back(0.0);
          } else {
            const std::size_t sz = scalar_size(p.type);
            if (pos > bytes.size() || bytes.size() - pos < sz) throw ParseError("PLY: truncated binary body", pos);
            row.push_back(load_scalar(p.type, &bytes[pos]));
            pos += sz;
          }
        }
        if (&e == vertex) {
          cloud.points.push_back({row[xyz[0]], row[xyz[1]], row[xyz[2]]});
          if (rgb) cloud.colors.push_back({row[(*rgb)[0]] / 255.0, row[(*rgb)[1]] / 255.0, row[(*rgb)[2]] / 255.0});
        }
      }
      if (&e == vertex) break;
    }
  }
  for (const auto& p : cloud.points) {
    for (double v : p) {
      if (!std::isfinite(v)) throw ParseError("PLY: non-finite vertex coordinate", pos);
    }
  }
  if (cloud.points.empty()) throw ParseError("PLY: point cloud is empty", pos);
  return cloud;
}

inline PointCloud load_pointcloud(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open point cloud " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_ply(ss.str());
}

enum class PlyFormat { kAscii, kBinary };

/// Serializes with float32 x, y, z and, when present, uchar red, green, blue.
inline std::string encode_ply(const PointCloud& cloud, PlyFormat format) {
  std::ostringstream out;
  out << "ply\n"
      << (format == PlyFormat::kAscii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n")
      << "element vertex " << cloud.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n";
  if (cloud.has_colors()) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";
  auto to_u8 = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); };
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    if (format == PlyFormat::kAscii) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g", static_cast<double>(static_cast<float>(p[0])),
                    static_cast<double>(static_cast<float>(p[1])), static_cast<double>(static_cast<float>(p[2])));
      out << buf;
      if (cloud.has_colors()) {
        for (double c : cloud.colors[i]) out << ' ' << static_cast<int>(to_u8(c));
      }
      out << '\n';
    } else {
      for (double v : p) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
        for (int b = 0; b < 4; ++b) out.put(static_cast<char>((bits >> (8 * b)) & 0xFF));
      }
      if (cloud.has_colors()) {
        for (double c : cloud.colors[i]) out.put(static_cast<char>(to_u8(c)));
      }
    }
  }
  return out.str();
}

inline void write_ply(const std::filesystem::path& path, const PointCloud& cloud, PlyFormat format) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_ply(cloud, format);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace ahgs
