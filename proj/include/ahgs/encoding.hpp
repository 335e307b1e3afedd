#pragma once

// Direction and position encodings fed to the attribute and color heads:
// NeRF-style sinusoidal encoding, real spherical harmonics, the von
// Mises-Fisher density on S², and its attenuated SH expectation.

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "ahgs/autodiff.hpp"

namespace ahgs::enc {

using ad::Tensor;

/// Concatenates (sin(2^j π p), cos(2^j π p)) for j = 0..num_freqs-1 along the
/// last axis: input (..., n) becomes (..., 2·n·num_freqs).
inline Tensor positional_encoding(const Tensor& p, std::size_t num_freqs) {
  if (num_freqs < 1) throw ContractError("positional_encoding: num_freqs must be >= 1");
  for (double v : p.data()) {
    if (!std::isfinite(v)) throw DomainError("positional_encoding: non-finite input");
  }
  std::vector<Tensor> parts;
  parts.reserve(2 * num_freqs);
  const std::size_t axis = p.rank() == 0 ? 0 : p.rank() - 1;
  const Tensor x = p.rank() == 0 ? ad::reshape(p, {1}) : p;
  for (std::size_t j = 0; j < num_freqs; ++j) {
    const Tensor scaled = x * (std::ldexp(1.0, static_cast<int>(j)) * std::numbers::pi);
    parts.push_back(ad::sin(scaled));
    parts.push_back(ad::cos(scaled));
  }
  return ad::concat(parts, axis);
}

// ---------------------------------------------------------------------------
// spherical harmonics

enum class DegreeSet {
  kLinear,      // ℓ = 1, 2, ..., 2L
  kPowersOfTwo  // ℓ = 1, 2, 4, ..., 2^(L-1)
};

struct ShPair {
  int l;
  int m;
  friend bool operator==(const ShPair&, const ShPair&) = default;
};

/// Ordered (ℓ, m) pairs of the directional encoding.
class SHIndexSet {
 public:
  /// `full_m` selects m = -ℓ..ℓ instead of m = 0..ℓ; `with_dc` prepends Y_0^0.
  static SHIndexSet make(int L, DegreeSet degrees = DegreeSet::kLinear, bool full_m = false, bool with_dc = true) {
    if (L < 1) throw ContractError("SHIndexSet: L must be >= 1");
    std::vector<int> ls;
    if (with_dc) ls.push_back(0);
    if (degrees == DegreeSet::kLinear) {
      for (int l = 1; l <= 2 * L; ++l) ls.push_back(l);
    } else {
      for (int i = 0; i < L; ++i) ls.push_back(1 << i);
    }
    return from_degrees(ls, full_m, L);
  }

  static SHIndexSet from_degrees(const std::vector<int>& degrees, bool full_m, int L = 0) {
    SHIndexSet s;
    s.L_ = L;
    s.full_m_ = full_m;
    for (int l : degrees) {
      if (l < 0) throw ContractError("SHIndexSet: negative degree");
      if (!s.pairs_.empty() && l <= s.pairs_.back().l) throw ContractError("SHIndexSet: degrees must increase");
      for (int m = full_m ? -l : 0; m <= l; ++m) s.pairs_.push_back({l, m});
      s.max_degree_ = l;
    }
    return s;
  }

  int L() const { return L_; }
  bool full_m() const { return full_m_; }
  int max_degree() const { return max_degree_; }
  std::size_t size() const { return pairs_.size(); }
  const std::vector<ShPair>& pairs() const { return pairs_; }
  const ShPair& operator[](std::size_t i) const { return pairs_[i]; }

 private:
  int L_ = 0;
  bool full_m_ = false;
  int max_degree_ = 0;
  std::vector<ShPair> pairs_;
};

namespace detail {

// Orthonormalization constant sqrt((2ℓ+1)/(4π) · (ℓ-|m|)!/(ℓ+|m|)!).
inline double sh_norm(int l, int m) {
  double ratio = 1.0;
  for (int k = l - m + 1; k <= l + m; ++k) ratio /= static_cast<double>(k);
  return std::sqrt((2.0 * l + 1.0) / (4.0 * std::numbers::pi) * ratio);
}

}  // namespace detail

/// Evaluates real orthonormal spherical harmonics (no Condon-Shortley phase)
/// as polynomials in (x, y, z), with optional gradients.
///
/// Y_ℓ^0 = K P̃_ℓ^0(z); Y_ℓ^m = √2 K P̃_ℓ^m(z) Re((x+iy)^m) and
/// Y_ℓ^-m = √2 K P̃_ℓ^m(z) Im((x+iy)^m) for m > 0, where P̃ is the associated
/// Legendre function with the (1-z²)^(m/2) factor removed.
class ShEvaluator {
 public:
  explicit ShEvaluator(const SHIndexSet& set) : set_(set), lmax_(set.max_degree()) {
    norms_.reserve(set.size());
    for (const auto& p : set.pairs()) {
      const int am = std::abs(p.m);
      norms_.push_back(detail::sh_norm(p.l, am) * (p.m == 0 ? 1.0 : std::numbers::sqrt2));
    }
  }

  const SHIndexSet& index_set() const { return set_; }

  /// Writes set.size() values; if grad is non-null also writes 3 partials per value.
  void eval(double x, double y, double z, double* values, double* grad) const {
    const int L = lmax_;
    const std::size_t stride = static_cast<std::size_t>(L) + 1;
    // C_m, S_m = Re/Im (x + iy)^m
    std::vector<double> C(stride), S(stride);
    C[0] = 1.0;
    S[0] = 0.0;
    for (int m = 1; m <= L; ++m) {
      C[m] = x * C[m - 1] - y * S[m - 1];
      S[m] = x * S[m - 1] + y * C[m - 1];
    }
    // P̃_ℓ^m(z) and d/dz, indexed [m * stride + ℓ]
    std::vector<double> P(stride * stride, 0.0), dP(stride * stride, 0.0);
    double dfact = 1.0;  // (2m-1)!!
    for (int m = 0; m <= L; ++m) {
      if (m > 0) dfact *= 2.0 * m - 1.0;
      double* pm = &P[m * stride];
      double* dpm = &dP[m * stride];
      pm[m] = dfact;
      dpm[m] = 0.0;
      if (m + 1 <= L) {
        pm[m + 1] = (2.0 * m + 1.0) * z * dfact;
        dpm[m + 1] = (2.0 * m + 1.0) * dfact;
      }
      for (int l = m + 2; l <= L; ++l) {
        const double a = 2.0 * l - 1.0, b = static_cast<double>(l + m - 1), c = static_cast<double>(l - m);
        pm[l] = (a * z * pm[l - 1] - b * pm[l - 2]) / c;
        dpm[l] = (a * (pm[l - 1] + z * dpm[l - 1]) - b * dpm[l - 2]) / c;
      }
    }
    for (std::size_t i = 0; i < set_.size(); ++i) {
      const auto [l, m] = set_[i];
      const int am = std::abs(m);
      const double k = norms_[i];
      const double p = P[am * stride + l];
      const bool sine = m < 0;
      const double t = sine ? S[am] : C[am];
      values[i] = k * p * t;
      if (grad) {
        double dtx = 0.0, dty = 0.0;
        if (am > 0) {
          if (sine) {
            dtx = am * S[am - 1];
            dty = am * C[am - 1];
          } else {
            dtx = am * C[am - 1];
            dty = -am * S[am - 1];
          }
        }
        grad[3 * i + 0] = k * p * dtx;
        grad[3 * i + 1] = k * p * dty;
        grad[3 * i + 2] = k * dP[am * stride + l] * t;
      }
    }
  }

  std::vector<double> operator()(const std::array<double, 3>& d) const {
    std::vector<double> v(set_.size());
    eval(d[0], d[1], d[2], v.data(), nullptr);
    return v;
  }

 private:
  SHIndexSet set_;
  int lmax_;
  std::vector<double> norms_;
};

/// Spherical harmonics of each row of an (N, 3) tensor of unit directions,
/// giving (N, |set|). Rows must have unit length within 1e-6.
inline Tensor sh_eval(const Tensor& dirs, const SHIndexSet& set) {
  if (dirs.rank() != 2 || dirs.dim(1) != 3) throw ShapeError("sh_eval: expected (N, 3) directions");
  const std::size_t n = dirs.dim(0), M = set.size();
  for (std::size_t r = 0; r < n; ++r) {
    const double len = std::sqrt(dirs[3 * r] * dirs[3 * r] + dirs[3 * r + 1] * dirs[3 * r + 1] + dirs[3 * r + 2] * dirs[3 * r + 2]);
    if (!(std::abs(len - 1.0) <= 1e-6)) throw ContractError("sh_eval: direction is not unit length");
  }
  const ShEvaluator sh(set);
  std::vector<double> out(n * M), jac(dirs.requires_grad() ? n * M * 3 : 0);
  for (std::size_t r = 0; r < n; ++r) {
    sh.eval(dirs[3 * r], dirs[3 * r + 1], dirs[3 * r + 2], &out[r * M], jac.empty() ? nullptr : &jac[r * M * 3]);
  }
  return ad::make_result({n, M}, std::move(out), {dirs}, "sh_eval", [n, M, jac = std::move(jac)](ad::Node& self) {
    std::vector<double> g(n * 3, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t i = 0; i < M; ++i) {
        const double go = self.grad[r * M + i];
        for (std::size_t c = 0; c < 3; ++c) g[r * 3 + c] += go * jac[(r * M + i) * 3 + c];
      }
    ad::accumulate(self, 0, g);
  });
}

// ---------------------------------------------------------------------------
// von Mises-Fisher on S²

struct VmfParams {
  std::array<double, 3> mu;
  double kappa;
};

/// Density κ e^{κ μᵀx} / (4π sinh κ), evaluated in the overflow-free form
/// κ e^{κ(μᵀx - 1)} / (2π (1 - e^{-2κ})). Uses the uniform limit 1/(4π)
/// for κ ≤ 1e-6.
inline double vmf_pdf(const std::array<double, 3>& x, const VmfParams& p) {
  if (!(p.kappa >= 0.0) || !std::isfinite(p.kappa)) throw ContractError("vmf_pdf: kappa must be finite and >= 0");
  if (p.kappa <= 1e-6) return 1.0 / (4.0 * std::numbers::pi);
  const double dot = p.mu[0] * x[0] + p.mu[1] * x[1] + p.mu[2] * x[2];
  return p.kappa * std::exp(p.kappa * (dot - 1.0)) / (2.0 * std::numbers::pi * -std::expm1(-2.0 * p.kappa));
}

/// A_ℓ(κ) = exp(-ℓ(ℓ+1) / (2κ)).
inline double sh_attenuation(int l, double kappa) {
  if (l < 0) throw ContractError("sh_attenuation: negative degree");
  if (!(kappa > 0.0)) throw ContractError("sh_attenuation: kappa must be positive");
  return std::exp(-0.5 * l * (l + 1.0) / kappa);
}

/// Expected spherical harmonics under vMF(d, κ): A_ℓ(κ)·Y_ℓ^m(d) per pair.
/// dirs (N, 3) unit rows, kappa (N, 1) positive; result (N, |set|).
inline Tensor ddfe(const Tensor& dirs, const Tensor& kappa, const SHIndexSet& set) {
  if (kappa.rank() != 2 || kappa.dim(1) != 1 || dirs.rank() != 2 || kappa.dim(0) != dirs.dim(0)) {
    throw ShapeError("ddfe: expected kappa of shape (N, 1) matching directions");
  }
  for (double k : kappa.data()) {
    if (!(k > 0.0)) throw ContractError("ddfe: kappa must be positive");
  }
  std::vector<double> half_ll(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) half_ll[i] = 0.5 * set[i].l * (set[i].l + 1.0);
  const Tensor coef = Tensor::constant({1, set.size()}, std::move(half_ll));
  const Tensor atten = ad::exp(-(coef / kappa));
  return sh_eval(dirs, set) * atten;
}

}  // namespace ahgs::enc
