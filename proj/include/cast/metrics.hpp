#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "cast/simplex.hpp"

namespace cast {

/// Sum_j p_j ln(p_j / q_j) on raw vectors; +inf when q_j = 0 < p_j.
inline double kl_raw(std::span<const double> p, std::span<const double> q) {
  require_same_dim(p.size(), q.size());
  double s = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] <= 0.0) continue;
    if (q[j] <= 0.0) return std::numeric_limits<double>::infinity();
    s += p[j] * std::log(p[j] / q[j]);
  }
  return std::max(s, 0.0);
}

/// KL(p || q) in nats after smoothing both arguments with eps.
inline double kl(const Dist& p, const Dist& q, double eps = kDefaultEps) {
  require_same_dim(p.size(), q.size());
  return kl_raw(smooth(p, eps).values(), smooth(q, eps).values());
}

inline double jsd_raw(std::span<const double> p, std::span<const double> q) {
  require_same_dim(p.size(), q.size());
  std::vector<double> m(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) m[j] = 0.5 * (p[j] + q[j]);
  return 0.5 * kl_raw(p, m) + 0.5 * kl_raw(q, m);
}

/// Jensen-Shannon divergence on the same eps-smoothed path as kl().
inline double jsd(const Dist& p, const Dist& q, double eps = kDefaultEps) {
  require_same_dim(p.size(), q.size());
  return jsd_raw(smooth(p, eps).values(), smooth(q, eps).values());
}

inline double l1(std::span<const double> p, std::span<const double> q) {
  require_same_dim(p.size(), q.size());
  double s = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) s += std::abs(p[j] - q[j]);
  return s;
}
inline double l1(const Dist& p, const Dist& q) { return l1(p.values(), q.values()); }

inline double bray_curtis(const Dist& p, const Dist& q) {
  require_same_dim(p.size(), q.size());
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    num += std::abs(p[j] - q[j]);
    den += p[j] + q[j];
  }
  return den > 0.0 ? num / den : 0.0;
}

/// W1 on the line with unit ground metric via cumulative differences.
inline double w1_ordered(std::span<const double> p, std::span<const double> q) {
  require_same_dim(p.size(), q.size());
  double cum = 0.0, s = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    cum += p[j] - q[j];
    s += std::abs(cum);
  }
  return s;
}
inline double w1_ordered(const Dist& p, const Dist& q) { return w1_ordered(p.values(), q.values()); }

/// Sum_z pi_z KL(u_z || u_bar), u_bar = sum_z pi_z u_z.
inline double js_weighted(std::span<const Dist> dists, std::span<const double> weights) {
  require(!dists.empty(), ErrorCode::InvalidArgument, "js_weighted needs at least one Dist");
  require_same_dim(dists.size(), weights.size());
  double wsum = 0.0;
  for (double w : weights) {
    require(w >= 0.0, ErrorCode::WeightSumInvalid, "negative weight");
    wsum += w;
  }
  require(std::abs(wsum - 1.0) <= kSimplexTol, ErrorCode::WeightSumInvalid, "weights sum to " + std::to_string(wsum));
  const std::size_t d = dists.front().size();
  std::vector<double> mix(d, 0.0);
  for (std::size_t z = 0; z < dists.size(); ++z) {
    require_same_dim(dists[z].size(), d);
    for (std::size_t j = 0; j < d; ++j) mix[j] += weights[z] * dists[z][j];
  }
  double s = 0.0;
  for (std::size_t z = 0; z < dists.size(); ++z) {
    if (weights[z] > 0.0) s += weights[z] * kl_raw(dists[z].values(), mix);
  }
  return s;
}

/// Half the squared L1 distance between the smoothed arguments used by kl();
/// Pinsker guarantees it never exceeds kl(p, q, eps).
inline double pinsker_lower_bound(const Dist& p, const Dist& q, double eps = kDefaultEps) {
  const double d = l1(smooth(p, eps).values(), smooth(q, eps).values());
  return 0.5 * d * d;
}

struct MetricReport {
  double kl = 0.0;
  double jsd = 0.0;
  double l1 = 0.0;
  double bray_curtis = 0.0;
  std::optional<double> w1;
};

inline MetricReport score(const Dist& target, const Dist& prediction, bool ordered, double eps = kDefaultEps) {
  MetricReport r;
  r.kl = kl(target, prediction, eps);
  r.jsd = jsd(target, prediction, eps);
  r.l1 = l1(target, prediction);
  r.bray_curtis = bray_curtis(target, prediction);
  if (ordered) r.w1 = w1_ordered(target, prediction);
  return r;
}

}  // namespace cast
