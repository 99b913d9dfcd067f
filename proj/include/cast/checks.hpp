#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "cast/lp.hpp"
#include "cast/metrics.hpp"
#include "cast/theory.hpp"
#include "cast/transport.hpp"

namespace cast {

/// Outcome of one numerical invariant check; `worst` is the largest violation margin seen.
struct CheckResult {
  std::string name;
  bool passed = false;
  std::size_t cases = 0;
  std::size_t violations = 0;
  double worst = 0.0;
  double tolerance = 0.0;
};

/// js_weighted against a multistart numerical minimum of the mixture risk.
inline CheckResult check_fixed_summary_identity(std::uint64_t seed, std::size_t n = 1000, double tol = 1e-6) {
  CheckResult r{"fixed_summary_identity", false, n, 0, 0.0, tol};
  Philox rng(seed, 0xC1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t d = 2 + rng.below(5), k = 1 + rng.below(4);
    const auto s = random_scenario(rng, d, k);
    const auto f = fixed_summary_optimum(s, derive_seed(seed, i));
    const double gap = std::abs(f.numeric_min - f.excess);
    r.worst = std::max(r.worst, gap);
    if (!(gap <= tol)) ++r.violations;
  }
  r.passed = r.violations == 0;
  return r;
}

/// Anchor-only excess never falls below half the weighted squared hull distance.
inline CheckResult check_anchor_separation(std::uint64_t seed, std::size_t n = 1000, double slack = 1e-12) {
  CheckResult r{"anchor_only_pinsker_separation", false, n, 0, 0.0, slack};
  Philox rng(seed, 0xC2);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t d = 2 + rng.below(5), k = 1 + rng.below(4);
    const auto s = random_scenario(rng, d, k);
    std::vector<Dist> anchors;
    const std::size_t na = 1 + rng.below(3);
    for (std::size_t a = 0; a < na; ++a) anchors.push_back(random_simplex_point(rng, d));
    const auto ao = anchor_only_optimum(s, anchors, derive_seed(seed, i));
    const double short_by = ao.pinsker_bound - ao.excess;
    r.worst = std::max(r.worst, short_by);
    if (!(ao.excess >= ao.pinsker_bound - slack)) ++r.violations;
  }
  r.passed = r.violations == 0;
  return r;
}

/// Closure, the W1 drift cap and the mean-shift cap of one budget-gated step.
inline CheckResult check_step_invariants(std::uint64_t seed, std::size_t n = 10000, double tol = 1e-12) {
  CheckResult r{"step_simplex_and_drift_invariants", false, n, 0, 0.0, tol};
  Philox rng(seed, 0xC3);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t d = 2 + rng.below(30);
    const Dist p = random_simplex_point(rng, d), q = random_simplex_point(rng, d);
    const double lambda = rng.uniform();
    const double rho = rng.uniform();
    BudgetParams b;
    b.delta_mu = 2.0 * rng.uniform();
    b.delta_sigma = 0.5 * rng.uniform();
    const auto kernel = random_kernel(rng, d);
    const auto st = cast_step_traced(p, q, lambda, kernel, rho, b, true);
    double sum = 0.0, neg = 0.0;
    for (double x : st.prediction) {
      sum += x;
      neg = std::max(neg, -x);
    }
    const double closure = std::max(std::abs(sum - 1.0), neg);
    const double drift = w1_ordered(st.anchor, st.prediction) - st.gate.rho_effective;
    const double shift =
        std::abs(mean_support(st.prediction) - mean_support(st.anchor)) - rho * st.gate.budget;
    const double worst = std::max({closure, drift, shift});
    r.worst = std::max(r.worst, worst);
    if (worst > tol) ++r.violations;
  }
  r.passed = r.violations == 0;
  return r;
}

/// Output perturbation of a transport step stays inside its first-order bound.
inline CheckResult check_approximation_bound(std::uint64_t seed, std::size_t n = 1000, double tol = 1e-12) {
  CheckResult r{"approximation_bound", false, n, 0, 0.0, tol};
  Philox rng(seed, 0xC4);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = approximation_case(rng, 2 + rng.below(8), 0.5);
    r.worst = std::max(r.worst, c.lhs - c.rhs);
    if (c.lhs > c.rhs + tol) ++r.violations;
  }
  r.passed = r.violations == 0;
  return r;
}

inline CheckResult check_w1_against_lp(std::uint64_t seed, std::size_t n = 1000, double tol = 1e-9) {
  CheckResult r{"w1_equals_transport_lp", false, n, 0, 0.0, tol};
  Philox rng(seed, 0xC5);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t d = 2 + rng.below(5);
    const Dist p = random_simplex_point(rng, d), q = random_simplex_point(rng, d);
    const double gap = std::abs(transport_lp(p.values(), q.values()) - w1_ordered(p, q));
    r.worst = std::max(r.worst, gap);
    if (!(gap <= tol)) ++r.violations;
  }
  r.passed = r.violations == 0;
  return r;
}

/// Pinsker and the ln 2 ceiling of JSD on random pairs, including near-degenerate ones.
inline CheckResult check_divergence_bounds(std::uint64_t seed, std::size_t n = 10000, double slack = 1e-12) {
  CheckResult r{"pinsker_and_jsd_bounds", false, n, 0, 0.0, slack};
  Philox rng(seed, 0xC6);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t d = 2 + rng.below(20);
    Dist p = random_simplex_point(rng, d), q = random_simplex_point(rng, d);
    if (i % 4 == 0) {
      std::vector<double> v(d, 0.0);
      v[rng.below(d)] = 1.0;
      p = Dist(std::move(v));
    }
    const double pin = pinsker_lower_bound(p, q) - kl(p, q);
    const double ceil = jsd(p, q) - std::numbers::ln2;
    const double worst = std::max(pin, ceil);
    r.worst = std::max(r.worst, worst);
    if (worst > slack) ++r.violations;
  }
  r.passed = r.violations == 0;
  return r;
}

/// 1-NN successor retrieval error stays under its Lipschitz bound and the covering radius shrinks.
inline CheckResult check_retrieval_consistency(std::uint64_t seed) {
  const auto rep = retrieval_consistency_check(seed);
  CheckResult r{"retrieval_consistency", false, rep.queries * rep.memory_sizes.size(), rep.violations, 0.0, 0.0};
  bool monotone = true;
  for (std::size_t i = 1; i < rep.max_distance.size(); ++i)
    monotone = monotone && rep.max_distance[i] <= rep.max_distance[i - 1];
  r.worst = rep.max_distance.empty() ? 0.0 : rep.max_distance.back();
  r.passed = rep.violations == 0 && monotone;
  return r;
}

inline std::vector<CheckResult> run_theory_checks(std::uint64_t seed, std::size_t scale = 1000) {
  return {check_fixed_summary_identity(seed, scale), check_anchor_separation(seed, scale),
          check_step_invariants(seed, 10 * scale),   check_approximation_bound(seed, scale),
          check_w1_against_lp(seed, scale),          check_divergence_bounds(seed, 10 * scale),
          check_retrieval_consistency(seed)};
}

}  // namespace cast
