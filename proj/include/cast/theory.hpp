#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "cast/lp.hpp"
#include "cast/metrics.hpp"
#include "cast/rng.hpp"
#include "cast/simplex.hpp"
#include "cast/transport.hpp"

namespace cast {

/// Shared current state p*, with K regimes that move it by different local transports.
struct AliasingScenario {
  Dist p_star;
  double rho = 0.2;
  std::vector<double> weights;
  std::vector<TransportKernel> kernels;
  std::vector<std::vector<Dist>> preludes;  // per regime, the causal history leading into p*

  std::size_t regimes() const { return weights.size(); }

  Dist successor(std::size_t z) const {
    const auto tp = apply_transport(kernels[z], p_star);
    std::vector<double> u(p_star.size());
    for (std::size_t j = 0; j < u.size(); ++j) u[j] = (1.0 - rho) * p_star[j] + rho * tp[j];
    return Dist(std::move(u));
  }
  std::vector<Dist> successors() const {
    std::vector<Dist> out;
    for (std::size_t z = 0; z < regimes(); ++z) out.push_back(successor(z));
    return out;
  }
  void validate() const {
    require(!weights.empty() && weights.size() == kernels.size(), ErrorCode::InvalidArgument,
            "scenario needs one kernel per regime");
    double s = 0.0;
    for (double w : weights) {
      require(w >= 0.0, ErrorCode::WeightSumInvalid, "negative regime weight");
      s += w;
    }
    require(std::abs(s - 1.0) <= 1e-9, ErrorCode::WeightSumInvalid, "regime weights must sum to 1");
    require(rho > 0.0 && rho <= 1.0, ErrorCode::InvalidArgument, "rho must be in (0,1]");
    for (const auto& k : kernels) require_same_dim(k.size(), p_star.size());
  }
};

/// D = 21, two peaks on bins 3..19, rho = 0.2, equal-weight right/left unit shifts.
inline AliasingScenario default_scenario() {
  constexpr std::size_t d = 21;
  std::vector<double> raw(d, 0.0);
  for (std::size_t j = 2; j + 2 < d; ++j) {
    const double x = static_cast<double>(j + 1);
    raw[j] = std::exp(-0.5 * std::pow((x - 8.0) / 1.5, 2)) + 0.7 * std::exp(-0.5 * std::pow((x - 14.0) / 2.0, 2));
  }
  AliasingScenario s;
  s.p_star = normalize(raw);
  s.rho = 0.2;
  s.weights = {0.5, 0.5};
  const auto right = TransportKernel::right_shift(d);
  const auto left = TransportKernel::left_shift(d);
  s.kernels = {right, left};
  // The history drifts in the regime's direction: two earlier states shifted the opposite way.
  const Dist l1 = apply_transport(left, s.p_star), l2 = apply_transport(left, l1);
  const Dist r1 = apply_transport(right, s.p_star), r2 = apply_transport(right, r1);
  s.preludes = {{l2, l1}, {r2, r1}};
  return s;
}

inline Dist random_simplex_point(Philox& rng, std::size_t d, double floor = 0.0) {
  std::gamma_distribution<double> gam(1.0, 1.0);
  std::vector<double> v(d);
  for (auto& x : v) x = floor + gam(rng);
  return normalize(v);
}

inline TransportKernel random_kernel(Philox& rng, std::size_t d) {
  std::vector<TransportKernel::Row> rows(d);
  for (auto& r : rows) {
    const Dist x = random_simplex_point(rng, 3);
    r = {x[0], x[1], x[2]};
  }
  return TransportKernel(std::move(rows));
}

/// Random interior p*, random kernels and weights, random distinct two-step preludes.
inline AliasingScenario random_scenario(Philox& rng, std::size_t d, std::size_t k, double rho_max = 1.0) {
  AliasingScenario s;
  s.p_star = random_simplex_point(rng, d, 0.05);
  s.rho = std::max(1e-3, rho_max * rng.uniform());
  s.weights = k == 1 ? std::vector<double>{1.0} : random_simplex_point(rng, k, 0.05).vec();
  for (std::size_t z = 0; z < k; ++z) {
    s.kernels.push_back(random_kernel(rng, d));
    s.preludes.push_back({random_simplex_point(rng, d), random_simplex_point(rng, d)});
  }
  return s;
}

struct FixedSummaryResult {
  Dist q_star;
  double excess = 0.0;
  double numeric_min = 0.0;  // best objective found by multistart mirror descent
};

/// Objective sum_z pi_z KL(u_z || q) in raw natural-log KL.
inline double mixture_risk(std::span<const Dist> u, std::span<const double> w, std::span<const double> q) {
  double s = 0.0;
  for (std::size_t z = 0; z < u.size(); ++z) s += w[z] * kl_raw(u[z].values(), q);
  return s;
}

/// Damped Newton descent of the mixture risk in softmax coordinates, from `start`.
/// The objective is log-sum-exp minus a linear term there, so it is convex in theta.
inline std::vector<double> minimize_mixture_risk(std::span<const Dist> u, std::span<const double> w,
                                                 std::span<const double> start, std::size_t iters = 200) {
  const std::size_t d = start.size();
  std::vector<double> ubar(d, 0.0);
  for (std::size_t z = 0; z < u.size(); ++z)
    for (std::size_t j = 0; j < d; ++j) ubar[j] += w[z] * u[z][j];
  Eigen::VectorXd theta(static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) theta(static_cast<Eigen::Index>(j)) = std::log(start[j]);
  auto probs = [&](const Eigen::VectorXd& th) {
    std::vector<double> q(d);
    const double mx = th.maxCoeff();
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (q[j] = std::exp(th(static_cast<Eigen::Index>(j)) - mx));
    for (double& x : q) x /= z;
    return q;
  };
  auto objective = [&](const Eigen::VectorXd& th) {
    const double mx = th.maxCoeff();
    double z = 0.0, lin = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      z += std::exp(th(static_cast<Eigen::Index>(j)) - mx);
      lin += ubar[j] * th(static_cast<Eigen::Index>(j));
    }
    return mx + std::log(z) - lin;
  };
  // theta_0 is pinned to remove the shift-invariance direction; pick a coordinate with mass.
  const std::size_t pin = static_cast<std::size_t>(std::max_element(ubar.begin(), ubar.end()) - ubar.begin());
  for (std::size_t it = 0; it < iters; ++it) {
    const auto q = probs(theta);
    Eigen::VectorXd g(static_cast<Eigen::Index>(d));
    Eigen::MatrixXd h(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i) {
      g(static_cast<Eigen::Index>(i)) = q[i] - ubar[i];
      for (std::size_t j = 0; j < d; ++j)
        h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (i == j ? q[i] : 0.0) - q[i] * q[j];
    }
    const auto ip = static_cast<Eigen::Index>(pin);
    g(ip) = 0.0;
    h.row(ip).setZero();
    h.col(ip).setZero();
    h(ip, ip) = 1.0;
    const Eigen::VectorXd step = h.ldlt().solve(-g);
    if (!step.allFinite() || g.norm() < 1e-15) break;
    const double f0 = objective(theta);
    double t = 1.0;
    while (t > 1e-12 && objective(theta + t * step) > f0 + 1e-4 * t * g.dot(step)) t *= 0.5;
    theta += t * step;
  }
  return probs(theta);
}

inline FixedSummaryResult fixed_summary_optimum(const AliasingScenario& s, std::uint64_t seed = 0,
                                                std::size_t starts = 20) {
  s.validate();
  const auto u = s.successors();
  std::vector<double> ubar(s.p_star.size(), 0.0);
  for (std::size_t z = 0; z < u.size(); ++z)
    for (std::size_t j = 0; j < ubar.size(); ++j) ubar[j] += s.weights[z] * u[z][j];
  FixedSummaryResult r{Dist(ubar), js_weighted(u, s.weights), std::numeric_limits<double>::infinity()};
  Philox rng(seed, 0x715);
  for (std::size_t k = 0; k < starts; ++k) {
    const auto q = minimize_mixture_risk(u, s.weights, random_simplex_point(rng, ubar.size(), 0.05).values());
    r.numeric_min = std::min(r.numeric_min, mixture_risk(u, s.weights, q));
  }
  return r;
}

struct AnchorOnlyResult {
  std::vector<Dist> per_regime;   // best no-transport prediction per regime
  std::vector<double> regime_kl;  // its KL to u_z
  std::vector<double> delta;      // L1 distance from u_z to the anchor hull
  double excess = 0.0;            // sum_z pi_z regime_kl
  double pinsker_bound = 0.0;     // 0.5 * sum_z pi_z delta_z^2
  double max_start_spread = 0.0;
};

inline double hull_kl(const Eigen::MatrixXd& v, std::span<const double> u, const std::vector<double>& w,
                      std::vector<double>* grad) {
  const auto d = static_cast<std::size_t>(v.rows()), k = static_cast<std::size_t>(v.cols());
  std::vector<double> q(d, 0.0);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t i = 0; i < k; ++i) q[j] += v(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) * w[i];
  const double f = kl_raw(u, q);
  if (grad) {
    grad->assign(k, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      if (u[j] <= 0.0) continue;
      for (std::size_t i = 0; i < k; ++i)
        (*grad)[i] -= u[j] * v(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) / q[j];
    }
  }
  return f;
}

/// min over x in the simplex of c.x + x'Hx/2 for small k, exactly: the optimum is the
/// equality-constrained minimizer of some face, so every feasible face minimizer is a candidate.
inline std::vector<double> simplex_qp(const Eigen::MatrixXd& h, const Eigen::VectorXd& c) {
  const auto k = static_cast<std::size_t>(c.size());
  require(k >= 1 && k <= 16, ErrorCode::InvalidArgument, "simplex_qp supports 1..16 columns");
  std::vector<double> best;
  double best_val = std::numeric_limits<double>::infinity();
  for (std::uint32_t mask = 1; mask < (1u << k); ++mask) {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < k; ++i)
      if (mask & (1u << i)) idx.push_back(static_cast<Eigen::Index>(i));
    const auto m = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(m + 1, m + 1);
    Eigen::VectorXd rhs(m + 1);
    for (Eigen::Index a = 0; a < m; ++a) {
      for (Eigen::Index b = 0; b < m; ++b) kkt(a, b) = h(idx[a], idx[b]);
      kkt(a, m) = kkt(m, a) = 1.0;
      rhs(a) = -c(idx[a]);
    }
    rhs(m) = 1.0;
    const Eigen::VectorXd sol = kkt.completeOrthogonalDecomposition().solve(rhs);
    if (!sol.allFinite() || (kkt * sol - rhs).norm() > 1e-9 * (1.0 + rhs.norm())) continue;
    std::vector<double> x(k, 0.0);
    bool feasible = true;
    for (Eigen::Index a = 0; a < m; ++a) {
      if (sol(a) < -1e-12) feasible = false;
      x[static_cast<std::size_t>(idx[a])] = std::max(0.0, sol(a));
    }
    if (!feasible) continue;
    const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(k));
    const double val = c.dot(xv) + 0.5 * xv.dot(h * xv);
    if (val < best_val) {
      best_val = val;
      best = std::move(x);
    }
  }
  return best;
}

/// Projected Newton on the simplex; stops when the Frank-Wolfe gap g.w - min g (an upper
/// bound on f - f* for this convex objective) is negligible.
inline std::vector<double> minimize_hull_kl(const Eigen::MatrixXd& v, std::span<const double> u,
                                            std::vector<double> w, double* value) {
  const auto d = v.rows(), k = v.cols();
  std::vector<double> g;
  double f = hull_kl(v, u, w, &g);
  for (int it = 0; it < 500 && std::isfinite(f); ++it) {
    double gw = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) gw += g[i] * w[i];
    if (gw - *std::min_element(g.begin(), g.end()) <= 1e-14 * std::max(1.0, std::abs(f))) break;
    const Eigen::Map<const Eigen::VectorXd> wv(w.data(), k);
    const Eigen::VectorXd q = v * wv;
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(k, k);
    for (Eigen::Index j = 0; j < d; ++j)
      if (u[static_cast<std::size_t>(j)] > 0.0)
        h.selfadjointView<Eigen::Lower>().rankUpdate(Eigen::VectorXd(v.row(j).transpose()),
                                                     u[static_cast<std::size_t>(j)] / (q(j) * q(j)));
    h = h.selfadjointView<Eigen::Lower>();
    const Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(g.data(), k) - h * wv;
    const auto x = simplex_qp(h, c);
    if (x.empty()) break;
    double lin = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) lin += g[i] * (x[i] - w[i]);
    if (!(lin < 0.0)) break;
    bool moved = false;
    for (double t = 1.0; t > 1e-12; t *= 0.5) {
      std::vector<double> wn(w.size());
      for (std::size_t i = 0; i < w.size(); ++i) wn[i] = w[i] + t * (x[i] - w[i]);
      const double fn = hull_kl(v, u, wn, nullptr);
      if (std::isfinite(fn) && fn <= f + 1e-4 * t * lin) {
        w = std::move(wn);
        f = hull_kl(v, u, w, &g);
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  *value = f;
  return w;
}

/// Best anchor prediction lambda p* + (1 - lambda) r, r in conv(anchors), per regime.
inline AnchorOnlyResult anchor_only_optimum(const AliasingScenario& s, std::span<const Dist> anchors,
                                            std::uint64_t seed = 0, std::size_t starts = 20,
                                            double tolerance = 1e-6) {
  s.validate();
  require(!anchors.empty(), ErrorCode::InvalidArgument, "anchor set is empty");
  const std::size_t d = s.p_star.size(), k = anchors.size() + 1;
  Eigen::MatrixXd v(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
  for (std::size_t j = 0; j < d; ++j) {
    v(static_cast<Eigen::Index>(j), 0) = s.p_star[j];
    for (std::size_t i = 0; i < anchors.size(); ++i)
      v(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i + 1)) = anchors[i][j];
  }
  AnchorOnlyResult res;
  Philox rng(seed, 0xA7C);
  const auto u = s.successors();
  for (std::size_t z = 0; z < s.regimes(); ++z) {
    const Eigen::Map<const Eigen::VectorXd> uz(u[z].values().data(), static_cast<Eigen::Index>(d));
    res.delta.push_back(l1_distance_to_hull(v, uz));
    double best = std::numeric_limits<double>::infinity(), worst = -best;
    std::vector<double> best_w;
    for (std::size_t st = 0; st < starts; ++st) {
      const auto w0 = st == 0 ? std::vector<double>(k, 1.0 / static_cast<double>(k)) : random_simplex_point(rng, k).vec();
      double f = 0.0;
      auto w = minimize_hull_kl(v, u[z].values(), w0, &f);
      if (f < best || best_w.empty()) {
        best = f;
        best_w = w;
      }
      worst = std::max(worst, f);
    }
    // Support mismatch makes every start infinite; that is an exact answer, not a disagreement.
    const double spread = std::isfinite(best) ? worst - best : 0.0;
    res.max_start_spread = std::max(res.max_start_spread, spread);
    require(spread <= tolerance, ErrorCode::OptimizationNotConverged,
            "anchor-hull multistart disagreement " + std::to_string(spread));
    Eigen::VectorXd q = v * Eigen::Map<const Eigen::VectorXd>(best_w.data(), static_cast<Eigen::Index>(k));
    res.per_regime.push_back(normalize(std::span<const double>(q.data(), d)));
    res.regime_kl.push_back(best);
    res.excess += s.weights[z] * best;
    res.pinsker_bound += 0.5 * s.weights[z] * res.delta.back() * res.delta.back();
  }
  return res;
}

/// Regime-aware CAST with lambda = 1, the regime's kernel and exact strength: reproduces u_z.
inline std::vector<Dist> cast_oracle(const AliasingScenario& s) {
  s.validate();
  const BudgetParams open{std::numeric_limits<double>::infinity(), 0.0, 1e-12};
  std::vector<Dist> out;
  for (std::size_t z = 0; z < s.regimes(); ++z)
    out.push_back(cast_step(s.p_star, s.p_star, 1.0, s.kernels[z], s.rho, open, true));
  return out;
}

struct AliasingDataset {
  std::vector<SimplexSeries> series;
  std::vector<std::size_t> regime;
};

/// Sequences prelude_z..., p*, u_z; only the final transition is scored.
inline AliasingDataset build_aliasing_dataset(const AliasingScenario& s, std::size_t n, double noise,
                                              std::uint64_t seed, const std::string& prefix = "seq",
                                              double min_prelude_margin = 0.05) {
  s.validate();
  require(n >= 2, ErrorCode::InvalidArgument, "need at least two sequences");
  require(noise >= 0.0 && noise < 1.0, ErrorCode::InvalidArgument, "noise must be in [0,1)");
  require(s.preludes.size() == s.regimes(), ErrorCode::InvalidArgument, "one prelude per regime required");
  for (std::size_t a = 0; a < s.regimes(); ++a)
    for (std::size_t b = a + 1; b < s.regimes(); ++b) {
      double gap = 0.0;
      for (std::size_t i = 0; i < std::min(s.preludes[a].size(), s.preludes[b].size()); ++i)
        gap = std::max(gap, l1(s.preludes[a][i], s.preludes[b][i]));
      require(gap >= min_prelude_margin, ErrorCode::InvalidArgument, "regime preludes are not distinguishable");
    }
  const auto u = s.successors();
  std::vector<double> cum(s.regimes());
  std::partial_sum(s.weights.begin(), s.weights.end(), cum.begin());
  Philox rng(seed, 0xDA7A);
  std::gamma_distribution<double> gam(1.0, 1.0);
  AliasingDataset ds;
  const int width = static_cast<int>(std::to_string(n - 1).size());
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform();
    std::size_t z = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), x) - cum.begin());
    z = std::min(z, s.regimes() - 1);
    std::vector<Dist> steps = s.preludes[z];
    steps.push_back(s.p_star);
    Dist target = u[z];
    if (noise > 0.0) {
      std::vector<double> w(target.size());
      for (auto& e : w) e = gam(rng);
      const Dist dw = normalize(w);
      target = convex_mix(dw, target, noise);
    }
    steps.push_back(target);
    std::vector<bool> mask(steps.size() - 1, false);
    mask.back() = true;
    std::string idx = std::to_string(i);
    idx.insert(0, static_cast<std::size_t>(width) - idx.size(), '0');
    ds.series.emplace_back(prefix + "-" + idx, true, std::move(steps), std::move(mask));
    ds.regime.push_back(z);
  }
  return ds;
}

struct ApproximationCase {
  double lhs = 0.0;  // || u~ - u ||_1
  double rhs = 0.0;  // eps_r + 2 eps_lambda + rho_max eps_T + 2 eps_rho
};

/// Perturb (r, lambda, T, rho) of a transport step and compare the output change with its bound.
inline ApproximationCase approximation_case(Philox& rng, std::size_t d, double rho_max) {
  const BudgetParams open{std::numeric_limits<double>::infinity(), 0.0, 1e-12};
  const Dist p = random_simplex_point(rng, d);
  const Dist r = random_simplex_point(rng, d);
  const double lam = rng.uniform();
  const double rho = rho_max * rng.uniform();
  const TransportKernel k = random_kernel(rng, d);
  const double scale = std::pow(10.0, -3.0 * rng.uniform());
  const Dist r2 = convex_mix(random_simplex_point(rng, d), r, scale * rng.uniform());
  const double lam2 = std::clamp(lam + scale * (rng.uniform() - 0.5), 0.0, 1.0);
  const double rho2 = std::clamp(rho + scale * rho_max * (rng.uniform() - 0.5), 0.0, rho_max);
  std::vector<TransportKernel::Row> rows(d);
  const TransportKernel noise = random_kernel(rng, d);
  const double mix = scale * rng.uniform();
  double eps_t = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double row_gap = 0.0;
    for (std::size_t o = 0; o < 3; ++o) {
      rows[j][o] = (1.0 - mix) * k[j][o] + mix * noise[j][o];
      row_gap += std::abs(rows[j][o] - k[j][o]);
    }
    eps_t = std::max(eps_t, row_gap);  // induced L1 norm of T~ - T
  }
  const TransportKernel k2(rows);
  const Dist u = cast_step(p, r, lam, k, rho, open, true);
  const Dist u2 = cast_step(p, r2, lam2, k2, rho2, open, true);
  return {l1(u, u2), l1(r, r2) + 2.0 * std::abs(lam2 - lam) + rho_max * eps_t + 2.0 * std::abs(rho2 - rho)};
}

struct RetrievalConsistencyReport {
  std::vector<std::size_t> memory_sizes;
  std::vector<double> max_distance;  // max nearest-neighbour context distance per memory size
  std::vector<double> max_error;
  std::size_t queries = 0;
  std::size_t violations = 0;
  double lipschitz = 0.0;
};

/// 1-NN successor retrieval on a Lipschitz map from [0,1]^k contexts to the simplex.
inline RetrievalConsistencyReport retrieval_consistency_check(std::uint64_t seed, std::size_t d = 6,
                                                              std::size_t k = 2, std::size_t base_memory = 32,
                                                              std::size_t doublings = 5, std::size_t queries = 1000,
                                                              double noise = 0.01) {
  Philox rng(seed, 0x11F);
  std::vector<Dist> anchors;
  for (std::size_t i = 0; i <= k; ++i) anchors.push_back(random_simplex_point(rng, d));
  auto f = [&](const std::vector<double>& x) {
    std::vector<double> v(d, 0.0);
    double rest = 1.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double wi = x[i] / static_cast<double>(k);
      rest -= wi;
      for (std::size_t j = 0; j < d; ++j) v[j] += wi * anchors[i + 1][j];
    }
    for (std::size_t j = 0; j < d; ++j) v[j] += rest * anchors[0][j];
    return Dist(std::move(v));
  };
  RetrievalConsistencyReport rep;
  for (std::size_t i = 1; i <= k; ++i)
    rep.lipschitz = std::max(rep.lipschitz, l1(anchors[i], anchors[0]) / static_cast<double>(k));
  auto point = [&] {
    std::vector<double> x(k);
    for (auto& e : x) e = rng.uniform();
    return x;
  };
  const std::size_t max_mem = base_memory << doublings;
  std::vector<std::vector<double>> mem_x;
  std::vector<Dist> mem_y;
  std::vector<double> mem_noise;
  for (std::size_t i = 0; i < max_mem; ++i) {
    auto x = point();
    const Dist clean = f(x);
    const Dist y = convex_mix(random_simplex_point(rng, d), clean, noise * rng.uniform());
    mem_noise.push_back(l1(y, clean));
    mem_x.push_back(std::move(x));
    mem_y.push_back(y);
  }
  std::vector<std::vector<double>> qx;
  for (std::size_t i = 0; i < queries; ++i) qx.push_back(point());
  rep.queries = queries;
  for (std::size_t level = 0; level <= doublings; ++level) {
    const std::size_t n = base_memory << level;
    double max_dist = 0.0, max_err = 0.0;
    for (const auto& x : qx) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t s = 0; s < n; ++s) {
        double dd = 0.0;
        for (std::size_t i = 0; i < k; ++i) dd += std::abs(mem_x[s][i] - x[i]);
        if (dd < best) {
          best = dd;
          arg = s;
        }
      }
      const double err = l1(mem_y[arg], f(x));
      if (err > rep.lipschitz * best + mem_noise[arg] + 1e-12) ++rep.violations;
      max_dist = std::max(max_dist, best);
      max_err = std::max(max_err, err);
    }
    rep.memory_sizes.push_back(n);
    rep.max_distance.push_back(max_dist);
    rep.max_error.push_back(max_err);
  }
  return rep;
}

}  // namespace cast
