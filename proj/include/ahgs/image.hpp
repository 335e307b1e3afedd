#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ahgs/autodiff.hpp"
#include "ahgs/errors.hpp"

namespace ahgs {

/// H×W×3 image, row-major, interleaved RGB, values nominally in [0, 1].
struct ImageBuffer {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  ImageBuffer() = default;
  ImageBuffer(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), pixels(w * h * 3, fill) {}

  double& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  double at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }

  bool same_size(const ImageBuffer& o) const { return width == o.width && height == o.height; }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

/// (3, H, W) tensor view of an image, the layout the losses consume.
inline ad::Tensor to_tensor(const ImageBuffer& img) {
  const std::size_t n = img.width * img.height;
  std::vector<double> v(3 * n);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < 3; ++c) v[c * n + p] = img.pixels[p * 3 + c];
  return ad::Tensor::constant({3, img.height, img.width}, std::move(v));
}

inline ImageBuffer from_tensor(const ad::Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("from_tensor: expected (3, H, W)");
  ImageBuffer img(t.dim(2), t.dim(1));
  const std::size_t n = img.width * img.height;
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < 3; ++c) img.pixels[p * 3 + c] = t[c * n + p];
  return img;
}

inline std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
}

/// Binary PPM (P6, maxval 255).
inline std::string encode_ppm(const ImageBuffer& img) {
  std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::string out = header;
  out.reserve(header.size() + img.pixels.size());
  for (double v : img.pixels) out.push_back(static_cast<char>(quantize(v)));
  return out;
}

inline void write_ppm(const std::filesystem::path& path, const ImageBuffer& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_ppm(img);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing " + path.string());
}

inline ImageBuffer decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> std::size_t {
    skip_ws();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
    if (pos == start) throw ParseError("PPM: expected integer", start);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw ParseError("PPM: missing P6 magic", 0);
  pos = 2;
  const std::size_t w = read_int(), h = read_int(), maxval = read_int();
  if (maxval != 255) throw ParseError("PPM: only maxval 255 is supported", pos);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) throw ParseError("PPM: bad header terminator", pos);
  ++pos;
  if (bytes.size() - pos < w * h * 3) throw ParseError("PPM: truncated pixel data", bytes.size());
  ImageBuffer img(w, h);
  for (std::size_t i = 0; i < w * h * 3; ++i) img.pixels[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
  return img;
}

inline ImageBuffer read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_ppm(ss.str());
}

}  // namespace ahgs
