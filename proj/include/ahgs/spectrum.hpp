#pragma once

// Image quality metrics and Fourier-spectrum diagnostics.

#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "ahgs/errors.hpp"
#include "ahgs/image.hpp"
#include "ahgs/loss.hpp"

namespace ahgs {

/// −10·log10(MSE) with peak 1. Identical images give +infinity.
inline double psnr(const ImageBuffer& rendered, const ImageBuffer& target) {
  if (!rendered.same_size(target)) throw ContractError("psnr: image sizes differ");
  if (rendered.pixels.empty()) throw ContractError("psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < rendered.pixels.size(); ++i) {
    const double d = rendered.pixels[i] - target.pixels[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(rendered.pixels.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

inline std::string format_psnr(double db) {
  if (std::isinf(db)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", db);
  return buf;
}

inline double ssim_value(const ImageBuffer& rendered, const ImageBuffer& target) {
  if (!rendered.same_size(target)) throw ContractError("ssim: image sizes differ");
  return loss::ssim(to_tensor(rendered), to_tensor(target)).item();
}

// ---------------------------------------------------------------------------
// DFT

using Complex = std::complex<double>;

/// In-place 1D DFT (forward, unnormalized). Radix-2 when n is a power of two,
/// direct summation otherwise.
inline void dft1d(std::vector<Complex>& a) {
  const std::size_t n = a.size();
  if (n <= 1) return;
  if ((n & (n - 1)) != 0) {
    std::vector<Complex> out(n);
    for (std::size_t k = 0; k < n; ++k) {
      Complex acc = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        const double ang = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
        acc += a[t] * Complex(std::cos(ang), std::sin(ang));
      }
      out[k] = acc;
    }
    a = std::move(out);
    return;
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t j = 0; j < len / 2; ++j) {
        const Complex w(std::cos(ang * static_cast<double>(j)), std::sin(ang * static_cast<double>(j)));
        const Complex u = a[i + j], v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
      }
    }
  }
}

/// 2D DFT of a row-major H×W real field.
inline std::vector<Complex> dft2d(const std::vector<double>& field, std::size_t width, std::size_t height) {
  if (field.size() != width * height) throw ShapeError("dft2d: field size mismatch");
  std::vector<Complex> f(field.begin(), field.end());
  std::vector<Complex> line(width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) line[x] = f[y * width + x];
    dft1d(line);
    for (std::size_t x = 0; x < width; ++x) f[y * width + x] = line[x];
  }
  line.resize(height);
  for (std::size_t x = 0; x < width; ++x) {
    for (std::size_t y = 0; y < height; ++y) line[y] = f[y * width + x];
    dft1d(line);
    for (std::size_t y = 0; y < height; ++y) f[y * width + x] = line[y];
  }
  return f;
}

inline std::vector<double> grayscale(const ImageBuffer& img) {
  std::vector<double> g(img.width * img.height);
  for (std::size_t p = 0; p < g.size(); ++p) {
    g[p] = (img.pixels[3 * p] + img.pixels[3 * p + 1] + img.pixels[3 * p + 2]) / 3.0;
  }
  return g;
}

struct SpectrumReport {
  std::size_t width = 0, height = 0;
  std::vector<double> log_magnitude;  // H×W, DC at (H/2, W/2)
  double hf_ratio = 0.0;
  double cutoff = 0.25;

  /// Log magnitude scaled to [0, 1] as a gray image.
  ImageBuffer to_image() const {
    ImageBuffer img(width, height);
    double peak = 0.0;
    for (double v : log_magnitude) peak = std::max(peak, v);
    for (std::size_t p = 0; p < log_magnitude.size(); ++p) {
      const double v = peak > 0.0 ? log_magnitude[p] / peak : 0.0;
      for (std::size_t c = 0; c < 3; ++c) img.pixels[3 * p + c] = v;
    }
    return img;
  }
};

inline constexpr double kDefaultCutoff = 0.25;

/// Spectrum of the channel-mean image. The high-frequency ratio is the share
/// of non-DC energy at normalized radius above `cutoff`, where 1 is Nyquist
/// along each axis; 0 when there is no non-DC energy.
inline SpectrumReport spectrum(const ImageBuffer& img, double cutoff = kDefaultCutoff) {
  if (!(cutoff > 0.0 && cutoff <= 1.0)) throw ContractError("spectrum: cutoff must lie in (0, 1]");
  if (img.width == 0 || img.height == 0) throw ContractError("spectrum: empty image");
  const std::size_t w = img.width, h = img.height;
  const auto f = dft2d(grayscale(img), w, h);
  SpectrumReport r;
  r.width = w;
  r.height = h;
  r.cutoff = cutoff;
  r.log_magnitude.assign(w * h, 0.0);
  double total = 0.0, high = 0.0;
  for (std::size_t v = 0; v < h; ++v) {
    for (std::size_t u = 0; u < w; ++u) {
      const double mag = std::abs(f[v * w + u]);
      const std::size_t sy = (v + h / 2) % h, sx = (u + w / 2) % w;
      r.log_magnitude[sy * w + sx] = std::log1p(mag);
      if (u == 0 && v == 0) continue;
      // signed frequency index, normalized so Nyquist is 1
      const double fu = static_cast<double>(u <= w / 2 ? static_cast<double>(u) : static_cast<double>(u) - static_cast<double>(w)) / (0.5 * static_cast<double>(w));
      const double fv = static_cast<double>(v <= h / 2 ? static_cast<double>(v) : static_cast<double>(v) - static_cast<double>(h)) / (0.5 * static_cast<double>(h));
      const double e = mag * mag;
      total += e;
      if (std::hypot(fu, fv) > cutoff) high += e;
    }
  }
  r.hf_ratio = total > 0.0 ? std::clamp(high / total, 0.0, 1.0) : 0.0;
  return r;
}

}  // namespace ahgs
