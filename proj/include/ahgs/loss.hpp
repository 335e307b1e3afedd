#pragma once

// Training objective: L1, SSIM, a feature-space perceptual term, and their
// combination with a perceptual weight that decays linearly over training.

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ahgs/autodiff.hpp"
#include "ahgs/random.hpp"

namespace ahgs::loss {

using ad::Tensor;

namespace detail {
inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(op) + ": image shapes differ " + ad::to_string(a.shape()) + " vs " +
                        ad::to_string(b.shape()));
  }
}
}  // namespace detail

/// Mean absolute difference over all entries.
inline Tensor l1_loss(const Tensor& rendered, const Tensor& target) {
  detail::require_same(rendered, target, "l1_loss");
  return ad::mean(ad::abs(rendered - target));
}

// ---------------------------------------------------------------------------
// SSIM

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Normalized 11×11 Gaussian window (σ = 1.5) as a (1, 1, 11, 11) kernel.
inline Tensor ssim_window() {
  std::vector<double> g(kSsimWindow);
  double total = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(kSsimWindow / 2);
    g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    total += g[i];
  }
  std::vector<double> w(kSsimWindow * kSsimWindow);
  for (std::size_t y = 0; y < kSsimWindow; ++y)
    for (std::size_t x = 0; x < kSsimWindow; ++x) w[y * kSsimWindow + x] = g[y] * g[x] / (total * total);
  return Tensor::constant({1, 1, kSsimWindow, kSsimWindow}, std::move(w));
}

/// Mean local SSIM of two (C, H, W) images over valid window positions,
/// averaged over channels. Differentiable in `rendered`.
inline Tensor ssim(const Tensor& rendered, const Tensor& target) {
  detail::require_same(rendered, target, "ssim");
  if (rendered.rank() != 3) throw ContractError("ssim: expected (C, H, W) images");
  if (rendered.dim(1) < kSsimWindow || rendered.dim(2) < kSsimWindow) {
    throw ContractError("ssim: image smaller than the 11x11 window");
  }
  const Tensor w = ssim_window();
  const std::size_t C = rendered.dim(0);
  std::vector<Tensor> per_channel;
  for (std::size_t c = 0; c < C; ++c) {
    const Tensor x = ad::slice(rendered, 0, c, c + 1);
    const Tensor y = ad::slice(target, 0, c, c + 1);
    const Tensor mx = ad::conv2d(x, w, 0), my = ad::conv2d(y, w, 0);
    const Tensor mx2 = ad::square(mx), my2 = ad::square(my), mxy = mx * my;
    const Tensor sx = ad::conv2d(ad::square(x), w, 0) - mx2;
    const Tensor sy = ad::conv2d(ad::square(y), w, 0) - my2;
    const Tensor sxy = ad::conv2d(x * y, w, 0) - mxy;
    const Tensor num = (2.0 * mxy + kSsimC1) * (2.0 * sxy + kSsimC2);
    const Tensor den = (mx2 + my2 + kSsimC1) * (sx + sy + kSsimC2);
    per_channel.push_back(ad::mean(num / den));
  }
  Tensor total = per_channel[0];
  for (std::size_t c = 1; c < C; ++c) total = total + per_channel[c];
  return total * (1.0 / static_cast<double>(C));
}

inline Tensor ssim_loss(const Tensor& rendered, const Tensor& target) { return 1.0 - ssim(rendered, target); }

// ---------------------------------------------------------------------------
// perceptual term

/// Two frozen 3×3 convolutions (3→64, 64→64, padding 1), ReLU after each.
class FeatureExtractor {
 public:
  enum class Source { kBuiltinSeeded, kLoadedFromFile };

  static constexpr std::size_t kChannels = 64;

  /// Deterministic He-uniform initialization with the given seed.
  static FeatureExtractor builtin(std::uint64_t seed = 19) {
    Rng rng(seed);
    auto fill = [&](std::size_t n, double bound) {
      std::vector<double> v(n);
      for (auto& x : v) x = rng.uniform(-bound, bound);
      return v;
    };
    FeatureExtractor fe;
    fe.source_ = Source::kBuiltinSeeded;
    fe.set(fill(kChannels * 3 * 9, std::sqrt(6.0 / 27.0)), std::vector<double>(kChannels, 0.0),
           fill(kChannels * kChannels * 9, std::sqrt(6.0 / (kChannels * 9.0))), std::vector<double>(kChannels, 0.0));
    return fe;
  }

  /// Weight file: "AHFE", u32 version (1), then little-endian float32
  /// conv1 weight (64·3·3·3), conv1 bias (64), conv2 weight (64·64·3·3),
  /// conv2 bias (64). Weights are laid out (out, in, ky, kx).
  static FeatureExtractor load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open feature extractor weights " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode(ss.str());
  }

  static FeatureExtractor decode(const std::string& bytes) {
    const std::size_t counts[4] = {kChannels * 3 * 9, kChannels, kChannels * kChannels * 9, kChannels};
    std::size_t expected = 8;
    for (std::size_t c : counts) expected += 4 * c;
    if (bytes.size() < 8 || bytes.compare(0, 4, "AHFE") != 0) throw LoadError("feature weights: bad magic");
    std::uint32_t version = 0;
    for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 + i])) << (8 * i);
    if (version != 1) throw LoadError("feature weights: unsupported version " + std::to_string(version));
    if (bytes.size() != expected) throw LoadError("feature weights: wrong file length");
    std::size_t pos = 8;
    std::vector<double> arrays[4];
    for (int a = 0; a < 4; ++a) {
      arrays[a].resize(counts[a]);
      for (auto& v : arrays[a]) {
        std::uint32_t bits = 0;
        for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
        pos += 4;
        v = static_cast<double>(std::bit_cast<float>(bits));
      }
    }
    FeatureExtractor fe;
    fe.source_ = Source::kLoadedFromFile;
    fe.set(std::move(arrays[0]), std::move(arrays[1]), std::move(arrays[2]), std::move(arrays[3]));
    return fe;
  }

  std::string encode() const {
    std::string out = "AHFE";
    auto put32 = [&](std::uint32_t v) {
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    };
    put32(1);
    for (const Tensor* t : {&w1_, &b1_, &w2_, &b2_})
      for (double v : t->data()) put32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
  }

  Source source() const { return source_; }
  const Tensor& conv1_weight() const { return w1_; }
  const Tensor& conv1_bias() const { return b1_; }
  const Tensor& conv2_weight() const { return w2_; }
  const Tensor& conv2_bias() const { return b2_; }

  /// (3, H, W) → (64, H, W).
  Tensor operator()(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("FeatureExtractor: expected a (3, H, W) image");
    return ad::relu(ad::conv2d(ad::relu(ad::conv2d(image, w1_, b1_, 1)), w2_, b2_, 1));
  }

 private:
  void set(std::vector<double> w1, std::vector<double> b1, std::vector<double> w2, std::vector<double> b2) {
    w1_ = Tensor::constant({kChannels, 3, 3, 3}, std::move(w1));
    b1_ = Tensor::constant({kChannels}, std::move(b1));
    w2_ = Tensor::constant({kChannels, kChannels, 3, 3}, std::move(w2));
    b2_ = Tensor::constant({kChannels}, std::move(b2));
  }

  Source source_ = Source::kBuiltinSeeded;
  Tensor w1_, b1_, w2_, b2_;
};

/// ‖F(rendered) - F(target)‖² / (C·H·W) over the feature tensor. The target
/// features are treated as data.
inline Tensor perceptual_loss_from_features(const Tensor& rendered, const Tensor& target_features,
                                            const FeatureExtractor& fe) {
  const Tensor fr = fe(rendered);
  if (fr.shape() != target_features.shape()) throw ContractError("perceptual_loss: feature shapes differ");
  return ad::mean(ad::square(fr - target_features.detach()));
}

inline Tensor perceptual_loss(const Tensor& rendered, const Tensor& target, const FeatureExtractor& fe) {
  detail::require_same(rendered, target, "perceptual_loss");
  return perceptual_loss_from_features(rendered, fe(target.detach()), fe);
}

// ---------------------------------------------------------------------------
// combined objective

struct LossWeights {
  double lambda_ssim = 0.2;
  double lambda_per = 0.05;
  std::size_t total_iterations = 30000;
};

/// (1 - k / total) · λ_per.
inline double perceptual_weight(std::size_t k, const LossWeights& w) {
  if (w.total_iterations < 1) throw ContractError("total_iterations must be >= 1");
  if (k > w.total_iterations) throw ContractError("iteration index exceeds total_iterations");
  return (1.0 - static_cast<double>(k) / static_cast<double>(w.total_iterations)) * w.lambda_per;
}

struct LossTerms {
  Tensor total;
  double l1 = 0.0;
  double ssim_loss = 0.0;
  double perceptual = 0.0;
};

/// L1 + λ_SSIM·(1 - SSIM) + (1 - k/total)·λ_per·L_per. The perceptual term is
/// skipped entirely when its weight is zero.
inline LossTerms total_loss_terms(const Tensor& rendered, const Tensor& target, std::size_t k, const LossWeights& w,
                                  const FeatureExtractor& fe, const Tensor* target_features = nullptr) {
  if (w.lambda_ssim < 0.0 || w.lambda_per < 0.0) throw ContractError("loss weights must be non-negative");
  const double wp = perceptual_weight(k, w);
  LossTerms t;
  const Tensor l1 = l1_loss(rendered, target);
  const Tensor ls = ssim_loss(rendered, target);
  t.l1 = l1.item();
  t.ssim_loss = ls.item();
  t.total = l1 + ls * w.lambda_ssim;
  if (wp > 0.0) {
    const Tensor lp = target_features ? perceptual_loss_from_features(rendered, *target_features, fe)
                                      : perceptual_loss(rendered, target, fe);
    t.perceptual = lp.item();
    t.total = t.total + lp * wp;
  }
  return t;
}

inline Tensor total_loss(const Tensor& rendered, const Tensor& target, std::size_t k, const LossWeights& w,
                         const FeatureExtractor& fe) {
  return total_loss_terms(rendered, target, k, w, fe).total;
}

}  // namespace ahgs::loss
