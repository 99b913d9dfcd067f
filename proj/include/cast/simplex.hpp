#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cast/error.hpp"

namespace cast {

inline constexpr double kSimplexTol = 1e-9;
inline constexpr double kDefaultEps = 1e-8;

/// A probability vector on the (D-1)-simplex. Immutable once built.
///
/// Construction validates nonnegativity and D >= 2; inputs whose sum is off by
/// more than kSimplexTol are renormalized rather than rejected.
class Dist {
 public:
  Dist() = default;

  explicit Dist(std::vector<double> values) : v_(std::move(values)) {
    require(v_.size() >= 2, ErrorCode::InvalidArgument, "a Dist needs D >= 2");
    double sum = 0.0;
    for (double& x : v_) {
      require(std::isfinite(x), ErrorCode::InvalidArgument, "non-finite mass");
      if (x < 0.0) {
        require(x > -1e-12, ErrorCode::NegativeMass, "entry " + std::to_string(x));
        x = 0.0;
      }
      sum += x;
    }
    require(sum > 0.0, ErrorCode::AllZeroMass, "all entries are zero");
    if (std::abs(sum - 1.0) > kSimplexTol) {
      for (double& x : v_) x /= sum;
    }
  }

  std::size_t size() const noexcept { return v_.size(); }
  double operator[](std::size_t i) const { return v_[i]; }
  std::span<const double> values() const noexcept { return v_; }
  const std::vector<double>& vec() const noexcept { return v_; }
  auto begin() const noexcept { return v_.begin(); }
  auto end() const noexcept { return v_.end(); }

  double sum() const { return std::accumulate(v_.begin(), v_.end(), 0.0); }

  static Dist uniform(std::size_t d) {
    require(d >= 2, ErrorCode::InvalidArgument, "a Dist needs D >= 2");
    return Dist(std::vector<double>(d, 1.0 / static_cast<double>(d)));
  }

  /// Point mass at 0-based bin k.
  static Dist point_mass(std::size_t d, std::size_t k) {
    std::vector<double> v(d, 0.0);
    require(k < d, ErrorCode::InvalidArgument, "bin out of range");
    v[k] = 1.0;
    return Dist(std::move(v));
  }

  friend bool operator==(const Dist& a, const Dist& b) { return a.v_ == b.v_; }

 private:
  std::vector<double> v_;
};

/// A Dist whose entries are all bounded below by gamma > 0.
class SmoothedDist {
 public:
  SmoothedDist(std::vector<double> values, double gamma) : v_(std::move(values)), gamma_(gamma) {}

  std::size_t size() const noexcept { return v_.size(); }
  double operator[](std::size_t i) const { return v_[i]; }
  std::span<const double> values() const noexcept { return v_; }
  double gamma() const noexcept { return gamma_; }
  Dist as_dist() const { return Dist(v_); }

 private:
  std::vector<double> v_;
  double gamma_;
};

inline void require_same_dim(std::size_t a, std::size_t b) {
  require(a == b, ErrorCode::DimensionMismatch, std::to_string(a) + " vs " + std::to_string(b));
}

/// raw / sum(raw).
inline Dist normalize(std::span<const double> raw) {
  double sum = 0.0;
  for (double x : raw) {
    require(x >= 0.0, ErrorCode::NegativeMass, "entry " + std::to_string(x));
    sum += x;
  }
  require(sum > 0.0, ErrorCode::AllZeroMass, "all entries are zero");
  std::vector<double> v(raw.begin(), raw.end());
  for (double& x : v) x /= sum;
  return Dist(std::move(v));
}

/// (p + eps) / (1 + D eps), entrywise.
inline SmoothedDist smooth(const Dist& p, double eps = kDefaultEps) {
  require(eps > 0.0, ErrorCode::InvalidArgument, "smoothing eps must be positive");
  const double denom = 1.0 + static_cast<double>(p.size()) * eps;
  std::vector<double> v(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) v[j] = (p[j] + eps) / denom;
  return SmoothedDist(std::move(v), eps / denom);
}

/// lambda * a + (1 - lambda) * b.
inline Dist convex_mix(const Dist& a, const Dist& b, double lambda) {
  require_same_dim(a.size(), b.size());
  require(lambda >= 0.0 && lambda <= 1.0, ErrorCode::InvalidArgument, "lambda outside [0,1]");
  std::vector<double> v(a.size());
  const double mu = 1.0 - lambda;
  for (std::size_t j = 0; j < a.size(); ++j) v[j] = lambda * a[j] + mu * b[j];
  return Dist(std::move(v));
}

/// Support mean with bins indexed 1..D.
inline double mean_support(std::span<const double> p) {
  double m = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) m += static_cast<double>(j + 1) * p[j];
  return m;
}
inline double mean_support(const Dist& p) { return mean_support(p.values()); }

inline double std_support(std::span<const double> p) {
  const double mu = mean_support(p);
  double var = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double d = static_cast<double>(j + 1) - mu;
    var += p[j] * d * d;
  }
  return std::sqrt(std::max(var, 0.0));
}
inline double std_support(const Dist& p) { return std_support(p.values()); }

// Isometric log-ratio coordinates in the Helmert basis: coordinate i (1-based)
// contrasts the geometric mean of parts 1..i against part i+1.

inline std::vector<double> ilr_forward(std::span<const double> p) {
  const std::size_t d = p.size();
  require(d >= 2, ErrorCode::InvalidArgument, "ilr needs D >= 2");
  std::vector<double> z(d - 1);
  double log_sum = 0.0;
  for (std::size_t i = 1; i < d; ++i) {
    require(p[i - 1] > 0.0, ErrorCode::ZeroComponent, "component " + std::to_string(i - 1));
    log_sum += std::log(p[i - 1]);
    require(p[i] > 0.0, ErrorCode::ZeroComponent, "component " + std::to_string(i));
    const double fi = static_cast<double>(i);
    z[i - 1] = std::sqrt(fi / (fi + 1.0)) * (log_sum / fi - std::log(p[i]));
  }
  return z;
}
inline std::vector<double> ilr_forward(const SmoothedDist& p) { return ilr_forward(p.values()); }

inline Dist ilr_inverse(std::span<const double> z, std::size_t d) {
  require(d >= 2, ErrorCode::InvalidArgument, "ilr needs D >= 2");
  require_same_dim(z.size(), d - 1);
  // clr_k = sum_i z_i e_i(k), e_i = sqrt(i/(i+1)) (1/i, .., 1/i, -1, 0, ..).
  std::vector<double> clr(d, 0.0);
  double tail = 0.0;  // sum over i >= k of z_i * sqrt(i/(i+1)) / i
  for (std::size_t i = d - 1; i >= 1; --i) {
    require(std::isfinite(z[i - 1]), ErrorCode::InvalidArgument, "non-finite ilr coordinate");
    const double fi = static_cast<double>(i);
    const double c = std::sqrt(fi / (fi + 1.0));
    clr[i] -= c * z[i - 1];
    tail += c * z[i - 1] / fi;
    clr[i - 1] += tail;
  }
  double mx = clr[0];
  for (double x : clr) mx = std::max(mx, x);
  double s = 0.0;
  for (double& x : clr) {
    x = std::exp(x - mx);
    s += x;
  }
  for (double& x : clr) x /= s;
  return Dist(std::move(clr));
}

/// A time-indexed sequence of Dist sharing one D.
///
/// loss_mask[t] marks whether the target steps[t + 1] is scored.
class SimplexSeries {
 public:
  SimplexSeries() = default;

  SimplexSeries(std::string id, bool ordered, std::vector<Dist> steps, std::vector<bool> loss_mask = {})
      : id_(std::move(id)), ordered_(ordered), steps_(std::move(steps)), mask_(std::move(loss_mask)) {
    require(!steps_.empty(), ErrorCode::InvalidArgument, "series " + id_ + " is empty");
    for (const auto& s : steps_) require_same_dim(s.size(), steps_.front().size());
    if (mask_.empty()) mask_.assign(steps_.size() - 1, true);
    require(mask_.size() == steps_.size() - 1, ErrorCode::InvalidArgument,
            "loss_mask length must be T-1 for series " + id_);
  }

  const std::string& id() const noexcept { return id_; }
  bool ordered() const noexcept { return ordered_; }
  std::size_t length() const noexcept { return steps_.size(); }
  std::size_t dim() const noexcept { return steps_.front().size(); }
  const std::vector<Dist>& steps() const noexcept { return steps_; }
  const Dist& operator[](std::size_t t) const { return steps_[t]; }
  const std::vector<bool>& loss_mask() const noexcept { return mask_; }

  std::size_t scored_count() const {
    return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), true));
  }

  SimplexSeries with_mask(std::vector<bool> mask) const { return SimplexSeries(id_, ordered_, steps_, std::move(mask)); }

 private:
  std::string id_;
  bool ordered_ = false;
  std::vector<Dist> steps_;
  std::vector<bool> mask_;
};

}  // namespace cast
