#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "cast/simplex.hpp"

namespace cast {

/// Row-stochastic radius-1 kernel: row j gives the probability of moving the
/// mass of bin j by offset -1, 0, +1 (columns 0, 1, 2).
class TransportKernel {
 public:
  using Row = std::array<double, 3>;

  TransportKernel() = default;

  explicit TransportKernel(std::vector<Row> rows) : rows_(std::move(rows)) {
    for (const auto& r : rows_) {
      double s = 0.0;
      for (double x : r) {
        require(x >= 0.0, ErrorCode::NegativeMass, "negative kernel entry");
        s += x;
      }
      require(std::abs(s - 1.0) <= kSimplexTol, ErrorCode::InvalidArgument, "kernel row does not sum to 1");
    }
  }

  std::size_t size() const noexcept { return rows_.size(); }
  const Row& operator[](std::size_t j) const { return rows_[j]; }
  double at(std::size_t j, int offset) const { return rows_[j][static_cast<std::size_t>(offset + 1)]; }
  const std::vector<Row>& rows() const noexcept { return rows_; }

  static TransportKernel constant(std::size_t d, Row row) { return TransportKernel(std::vector<Row>(d, row)); }
  static TransportKernel identity(std::size_t d) { return constant(d, {0.0, 1.0, 0.0}); }
  static TransportKernel right_shift(std::size_t d) { return constant(d, {0.0, 0.0, 1.0}); }
  static TransportKernel left_shift(std::size_t d) { return constant(d, {1.0, 0.0, 0.0}); }

  /// (0.25, 0.5, 0.25) in the interior; at the two boundary bins the
  /// out-of-range offset is dropped and the row renormalized.
  static TransportKernel fixed_local(std::size_t d) {
    std::vector<Row> rows(d, Row{0.25, 0.5, 0.25});
    rows.front() = Row{0.0, 0.5 / 0.75, 0.25 / 0.75};
    rows.back() = Row{0.25 / 0.75, 0.5 / 0.75, 0.0};
    return TransportKernel(std::move(rows));
  }

 private:
  std::vector<Row> rows_;
};

struct BudgetParams {
  double delta_mu = 0.25;
  double delta_sigma = 0.10;
  double epsilon = 1e-6;
};

inline std::size_t clip_bin(std::size_t j, int offset, std::size_t d) {
  if (offset < 0 && j == 0) return 0;
  if (offset > 0 && j + 1 == d) return d - 1;
  return static_cast<std::size_t>(static_cast<long>(j) + offset);
}

inline std::vector<double> apply_transport(const TransportKernel& kernel, std::span<const double> a) {
  require_same_dim(kernel.size(), a.size());
  const std::size_t d = a.size();
  std::vector<double> out(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    for (int o = -1; o <= 1; ++o) out[clip_bin(j, o, d)] += a[j] * kernel.at(j, o);
  }
  return out;
}

inline Dist apply_transport(const TransportKernel& kernel, const Dist& a) {
  return Dist(apply_transport(kernel, a.values()));
}

struct BudgetGate {
  double rho_effective = 0.0;
  double delta_mu = 0.0;  // mu(Ta) - mu(a) at full strength
  double budget = 0.0;    // delta_mu + delta_sigma * sigma_supp(a)
  double scale = 1.0;     // min(1, B / (|delta_mu| + eps))
};

inline BudgetGate budget_gate(std::span<const double> a, std::span<const double> ta, double rho_raw,
                              const BudgetParams& b) {
  BudgetGate g;
  g.delta_mu = mean_support(ta) - mean_support(a);
  g.budget = b.delta_mu + b.delta_sigma * std_support(a);
  g.scale = std::min(1.0, g.budget / (std::abs(g.delta_mu) + b.epsilon));
  g.rho_effective = rho_raw * g.scale;
  return g;
}

inline BudgetGate budget_gate(const Dist& a, const Dist& ta, double rho_raw, const BudgetParams& b) {
  return budget_gate(a.values(), ta.values(), rho_raw, b);
}

struct CastStepResult {
  Dist prediction;
  Dist anchor;
  Dist transported;  // equals anchor when transport is disabled
  BudgetGate gate;
};

/// One full transition: anchor, then budget-gated local transport on ordered supports.
inline CastStepResult cast_step_traced(const Dist& p, const Dist& r, double lambda, const TransportKernel& kernel,
                                       double rho, const BudgetParams& b, bool ordered) {
  require_same_dim(p.size(), r.size());
  require(rho >= 0.0 && rho <= 1.0, ErrorCode::InvalidArgument, "rho outside [0,1]");
  const Dist a = convex_mix(p, r, lambda);
  if (!ordered) return {a, a, a, BudgetGate{}};
  require_same_dim(kernel.size(), a.size());
  const auto ta = apply_transport(kernel, a.values());
  const BudgetGate g = budget_gate(a.values(), ta, rho, b);
  std::vector<double> out(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) out[j] = (1.0 - g.rho_effective) * a[j] + g.rho_effective * ta[j];
  return {Dist(std::move(out)), a, Dist(ta), g};
}

inline Dist cast_step(const Dist& p, const Dist& r, double lambda, const TransportKernel& kernel, double rho,
                      const BudgetParams& b, bool ordered) {
  return cast_step_traced(p, r, lambda, kernel, rho, b, ordered).prediction;
}

/// Weights of the four target-free operator-prior terms.
struct RegWeights {
  double strength = 5e-4;
  double off_identity = 5e-4;
  double smoothness = 1e-4;
  double mean_shift = 5e-4;
};

struct RegTerms {
  double strength = 0.0;
  double off_identity = 0.0;
  double smoothness = 0.0;
  double mean_shift = 0.0;

  double weighted(const RegWeights& w) const {
    return w.strength * strength + w.off_identity * off_identity + w.smoothness * smoothness +
           w.mean_shift * mean_shift;
  }
};

inline RegTerms operator_regularizer_terms(const TransportKernel& kernel, std::span<const double> a, double rho,
                                           const BudgetParams& b) {
  require_same_dim(kernel.size(), a.size());
  RegTerms t;
  t.strength = rho;
  for (std::size_t j = 0; j < kernel.size(); ++j) {
    t.off_identity += kernel[j][0] * kernel[j][0] + kernel[j][2] * kernel[j][2];
    if (j + 1 < kernel.size()) {
      for (std::size_t o = 0; o < 3; ++o) {
        const double diff = kernel[j][o] - kernel[j + 1][o];
        t.smoothness += diff * diff;
      }
    }
  }
  const auto ta = apply_transport(kernel, a);
  const BudgetGate g = budget_gate(a, ta, rho, b);
  const double ratio = g.delta_mu / std::max(g.budget, b.epsilon);
  t.mean_shift = ratio * ratio;
  return t;
}

inline double operator_regularizer(const TransportKernel& kernel, const Dist& a, double rho, const BudgetParams& b,
                                   const RegWeights& w = {}) {
  return operator_regularizer_terms(kernel, a.values(), rho, b).weighted(w);
}

}  // namespace cast
