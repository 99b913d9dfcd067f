#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include "cast/simplex.hpp"

namespace cast {

/// Fixed causal feature map standing in for a learned sequence encoder.
///
/// h_t = [p_t, p_{t-1}, ..., p_{t-W+1} (zero-padded before the series start),
///        exponentially weighted mean of p_{1:t} (decay beta),
///        p_t - p_{t-1} (zero at t = 1),
///        mu(p_t) / D, sigma_supp(p_t) / D  (ordered supports only)]
struct FeatureConfig {
  std::size_t window = 8;
  double beta = 0.9;
  bool ew_mean = true;
  bool delta = true;
  bool moments = true;

  /// Only the current distribution (and its moments): the fixed-summary view.
  static FeatureConfig current_only() { return FeatureConfig{1, 0.0, false, false, true}; }
};

inline std::size_t feature_dim(const FeatureConfig& cfg, std::size_t d, bool ordered) {
  std::size_t f = cfg.window * d;
  if (cfg.ew_mean) f += d;
  if (cfg.delta) f += d;
  if (cfg.moments && ordered) f += 2;
  return f;
}

/// Streams a series one step at a time and emits h_t after each push.
class FeatureEncoder {
 public:
  FeatureEncoder(FeatureConfig cfg, std::size_t d, bool ordered)
      : cfg_(cfg), d_(d), ordered_(ordered), ew_(d, 0.0), prev_(d, 0.0) {
    require(cfg_.window >= 1, ErrorCode::InvalidArgument, "feature window must be >= 1");
  }

  std::size_t dim() const { return feature_dim(cfg_, d_, ordered_); }
  std::size_t steps_seen() const { return seen_; }

  void push(std::span<const double> p) {
    require_same_dim(p.size(), d_);
    if (seen_ == 0) {
      ew_.assign(p.begin(), p.end());
      prev_.assign(p.begin(), p.end());
    } else {
      for (std::size_t j = 0; j < d_; ++j) ew_[j] = cfg_.beta * ew_[j] + (1.0 - cfg_.beta) * p[j];
    }
    last_delta_.assign(d_, 0.0);
    if (seen_ > 0) {
      for (std::size_t j = 0; j < d_; ++j) last_delta_[j] = p[j] - prev_[j];
    }
    prev_.assign(p.begin(), p.end());
    window_.emplace_front(p.begin(), p.end());
    if (window_.size() > cfg_.window) window_.pop_back();
    ++seen_;
  }

  /// Features for the most recent push; writes dim() values.
  void write(std::span<double> out) const {
    require(seen_ > 0, ErrorCode::EmptyPrefix, "no steps encoded yet");
    require_same_dim(out.size(), dim());
    std::size_t k = 0;
    for (std::size_t w = 0; w < cfg_.window; ++w) {
      if (w < window_.size()) {
        for (double x : window_[w]) out[k++] = x;
      } else {
        for (std::size_t j = 0; j < d_; ++j) out[k++] = 0.0;
      }
    }
    if (cfg_.ew_mean)
      for (double x : ew_) out[k++] = x;
    if (cfg_.delta)
      for (double x : last_delta_) out[k++] = x;
    if (cfg_.moments && ordered_) {
      const double dd = static_cast<double>(d_);
      out[k++] = mean_support(window_.front()) / dd;
      out[k++] = std_support(window_.front()) / dd;
    }
  }

  std::vector<double> features() const {
    std::vector<double> h(dim());
    write(h);
    return h;
  }

 private:
  FeatureConfig cfg_;
  std::size_t d_;
  bool ordered_;
  std::deque<std::vector<double>> window_;
  std::vector<double> ew_;
  std::vector<double> prev_;
  std::vector<double> last_delta_;
  std::size_t seen_ = 0;
};

/// Features of the last step of a nonempty prefix.
inline std::vector<double> encode(std::span<const Dist> prefix, const FeatureConfig& cfg, bool ordered) {
  require(!prefix.empty(), ErrorCode::EmptyPrefix, "cannot encode an empty prefix");
  FeatureEncoder enc(cfg, prefix.front().size(), ordered);
  for (const auto& p : prefix) enc.push(p.values());
  return enc.features();
}

}  // namespace cast
