#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cast/model.hpp"
#include "cast/simplex.hpp"

namespace cast {

/// One-step forecaster interface shared by CAST and the fit-only baselines.
class Forecaster {
 public:
  virtual ~Forecaster() = default;
  virtual std::string name() const = 0;
  virtual Dist predict_next(std::span<const Dist> prefix) const = 0;

  /// Teacher-forced predictions of steps[t + 1] from steps[0..t].
  virtual std::vector<Dist> predict_positions(std::span<const Dist> steps, std::span<const std::size_t> pos) const {
    std::vector<Dist> out;
    out.reserve(pos.size());
    for (std::size_t t : pos) out.push_back(predict_next(steps.first(t + 1)));
    return out;
  }

  /// Feeds each prediction back as the newest observation.
  virtual std::vector<Dist> rollout(std::span<const Dist> context, std::size_t horizon) const {
    require(horizon >= 1, ErrorCode::InvalidArgument, "horizon must be >= 1");
    require(!context.empty(), ErrorCode::EmptyPrefix, "empty context");
    std::vector<Dist> steps(context.begin(), context.end());
    std::vector<Dist> out;
    for (std::size_t k = 0; k < horizon; ++k) {
      Dist next = predict_next(steps);
      steps.push_back(next);
      out.push_back(std::move(next));
    }
    return out;
  }
};

inline Dist persistence_predict(std::span<const Dist> prefix) {
  require(!prefix.empty(), ErrorCode::EmptyPrefix, "empty prefix");
  return prefix.back();
}

class Persistence final : public Forecaster {
 public:
  std::string name() const override { return "persistence"; }
  Dist predict_next(std::span<const Dist> prefix) const override { return persistence_predict(prefix); }
  std::vector<Dist> predict_positions(std::span<const Dist> steps, std::span<const std::size_t> pos) const override {
    std::vector<Dist> out;
    for (std::size_t t : pos) out.push_back(steps[t]);
    return out;
  }
};

class CastForecaster final : public Forecaster {
 public:
  explicit CastForecaster(CastModel model, std::string label = "cast") : model_(std::move(model)), label_(std::move(label)) {}
  std::string name() const override { return label_; }
  Dist predict_next(std::span<const Dist> prefix) const override { return model_.predict_next(prefix); }
  std::vector<Dist> predict_positions(std::span<const Dist> steps, std::span<const std::size_t> pos) const override {
    return model_.predict_positions(steps, pos);
  }
  std::vector<Dist> rollout(std::span<const Dist> context, std::size_t horizon) const override {
    return model_.predict_rollout(context, horizon);
  }
  const CastModel& model() const { return model_; }

 private:
  CastModel model_;
  std::string label_;
};

// ---------------------------------------------------------------- analog retrieval

struct AnalogBank {
  std::size_t window = 4;
  std::size_t k = 8;
  std::size_t dim = 0;
  std::vector<std::vector<double>> windows;  // flattened, oldest first
  std::vector<Dist> successors;
};

/// Last `w` steps of prefix, left-padded with the first step, flattened oldest first.
inline std::vector<double> analog_window(std::span<const Dist> prefix, std::size_t w) {
  require(!prefix.empty(), ErrorCode::EmptyPrefix, "empty prefix");
  const std::size_t d = prefix.front().size();
  std::vector<double> out;
  out.reserve(w * d);
  const std::size_t t = prefix.size() - 1;
  for (std::size_t i = 0; i < w; ++i) {
    const std::size_t back = w - 1 - i;
    const Dist& p = back > t ? prefix.front() : prefix[t - back];
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

/// Context/successor windows from training sequences; evenly thinned to at most `max_windows`.
inline AnalogBank build_analog_bank(const std::vector<SimplexSeries>& train, std::size_t window = 4, std::size_t k = 8,
                                    std::size_t max_windows = 20000) {
  require(window >= 1 && k >= 1, ErrorCode::InvalidArgument, "analog window and k must be >= 1");
  std::vector<std::pair<const SimplexSeries*, std::size_t>> all;
  for (const auto& s : train)
    for (std::size_t t = window - 1; t + 1 < s.length(); ++t) all.emplace_back(&s, t);
  AnalogBank bank;
  bank.window = window;
  bank.k = k;
  if (!train.empty()) bank.dim = train.front().dim();
  const std::size_t n = all.size();
  const std::size_t keep = max_windows == 0 ? n : std::min(n, max_windows);
  for (std::size_t i = 0; i < keep; ++i) {
    const auto& [s, t] = all[i * n / keep];
    bank.windows.push_back(analog_window(std::span<const Dist>(s->steps()).first(t + 1), window));
    bank.successors.push_back((*s)[t + 1]);
  }
  return bank;
}

/// Gaussian-weighted average of the k nearest successors under L1 window distance.
inline Dist analog_predict(std::span<const Dist> prefix, const AnalogBank& bank) {
  require(!bank.windows.empty(), ErrorCode::EmptyBank, "analog bank is empty");
  require_same_dim(prefix.back().size(), bank.dim);
  const auto q = analog_window(prefix, bank.window);
  std::vector<std::pair<double, std::size_t>> dist(bank.windows.size());
  for (std::size_t i = 0; i < bank.windows.size(); ++i) {
    double s = 0.0;
    const auto& w = bank.windows[i];
    for (std::size_t j = 0; j < q.size(); ++j) s += std::abs(w[j] - q[j]);
    dist[i] = {s, i};
  }
  const std::size_t k = std::min(bank.k, dist.size());
  std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(k), dist.end());
  std::vector<double> ds(k);
  for (std::size_t i = 0; i < k; ++i) ds[i] = dist[i].first;
  std::vector<double> sorted = ds;
  const double h = std::max(k % 2 ? sorted[k / 2] : 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]), 1e-12);
  std::vector<double> out(bank.dim, 0.0);
  double wsum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double w = std::exp(-ds[i] * ds[i] / (2.0 * h * h));
    wsum += w;
    const Dist& s = bank.successors[dist[i].second];
    for (std::size_t j = 0; j < bank.dim; ++j) out[j] += w * s[j];
  }
  if (wsum <= 0.0) return bank.successors[dist[0].second];
  for (double& x : out) x /= wsum;
  return Dist(std::move(out));
}

class Analog final : public Forecaster {
 public:
  explicit Analog(AnalogBank bank) : bank_(std::move(bank)) {}
  std::string name() const override { return "analog_successor"; }
  Dist predict_next(std::span<const Dist> prefix) const override { return analog_predict(prefix, bank_); }
  const AnalogBank& bank() const { return bank_; }

 private:
  AnalogBank bank_;
};

// ---------------------------------------------------------------- ilr VAR

inline constexpr double kIlrEps = 1e-6;

inline std::vector<double> to_ilr(const Dist& p, double eps = kIlrEps) { return ilr_forward(smooth(p, eps)); }

struct VarModel {
  std::size_t order = 1;
  std::size_t dim = 0;      // D
  Eigen::MatrixXd coef;     // (1 + order (D-1)) x (D-1); row 0 intercept, then lag 1 block, lag 2 block...
  bool fallback = false;    // too little data: predicts persistence
  std::size_t rows_used = 0;
};

/// Pooled OLS (ridge-stabilized) of z_{t+1} on [1, z_t, ..., z_{t-p+1}] in ilr coordinates.
inline VarModel ilr_var_fit(const std::vector<SimplexSeries>& train, std::size_t order = 1, double ridge = 1e-6,
                            std::size_t max_rows = 200000) {
  require(order >= 1, ErrorCode::InvalidArgument, "VAR order must be >= 1");
  VarModel m;
  m.order = order;
  require(!train.empty(), ErrorCode::InvalidArgument, "empty training split");
  m.dim = train.front().dim();
  const std::size_t k = m.dim - 1, nreg = 1 + order * k;
  std::vector<std::pair<const SimplexSeries*, std::size_t>> rows;
  for (const auto& s : train)
    for (std::size_t t = order - 1; t + 1 < s.length(); ++t) rows.emplace_back(&s, t);
  if (rows.size() < nreg) {
    m.fallback = true;
    return m;
  }
  const std::size_t n = std::min(rows.size(), max_rows);
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nreg), static_cast<Eigen::Index>(nreg));
  Eigen::MatrixXd xty = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nreg), static_cast<Eigen::Index>(k));
  Eigen::VectorXd x(static_cast<Eigen::Index>(nreg));
  for (std::size_t r = 0; r < n; ++r) {
    const auto& [s, t] = rows[r * rows.size() / n];
    x(0) = 1.0;
    for (std::size_t lag = 0; lag < order; ++lag) {
      const auto z = to_ilr((*s)[t - lag]);
      for (std::size_t i = 0; i < k; ++i) x(static_cast<Eigen::Index>(1 + lag * k + i)) = z[i];
    }
    const auto y = to_ilr((*s)[t + 1]);
    xtx.selfadjointView<Eigen::Lower>().rankUpdate(x);
    xty += x * Eigen::Map<const Eigen::RowVectorXd>(y.data(), static_cast<Eigen::Index>(k));
  }
  xtx.triangularView<Eigen::StrictlyUpper>() = xtx.transpose().triangularView<Eigen::StrictlyUpper>();
  xtx.diagonal().array() += ridge;
  m.coef = xtx.ldlt().solve(xty);
  m.rows_used = n;
  if (!m.coef.allFinite()) m.fallback = true;
  return m;
}

inline Dist ilr_var_predict(std::span<const Dist> prefix, const VarModel& m) {
  require(!prefix.empty(), ErrorCode::EmptyPrefix, "empty prefix");
  if (m.fallback || prefix.size() < m.order) return prefix.back();
  const std::size_t k = m.dim - 1;
  Eigen::RowVectorXd x(1 + static_cast<Eigen::Index>(m.order * k));
  x(0) = 1.0;
  for (std::size_t lag = 0; lag < m.order; ++lag) {
    const auto z = to_ilr(prefix[prefix.size() - 1 - lag]);
    for (std::size_t i = 0; i < k; ++i) x(static_cast<Eigen::Index>(1 + lag * k + i)) = z[i];
  }
  const Eigen::RowVectorXd z = x * m.coef;
  return ilr_inverse(std::span<const double>(z.data(), k), m.dim);
}

class IlrVar final : public Forecaster {
 public:
  explicit IlrVar(VarModel m) : m_(std::move(m)) {}
  std::string name() const override { return "ilr_var"; }
  Dist predict_next(std::span<const Dist> prefix) const override { return ilr_var_predict(prefix, m_); }
  const VarModel& model() const { return m_; }

 private:
  VarModel m_;
};

// ---------------------------------------------------------------- ilr ETS

struct EtsModel {
  std::size_t dim = 0;
  std::vector<double> alpha;  // per ilr coordinate
};

inline std::vector<double> ets_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 19; ++i) g.push_back(0.05 * i);
  return g;
}

/// Level-only smoothing per ilr coordinate; alpha by grid search on one-step squared error.
inline EtsModel ets_fit(const std::vector<SimplexSeries>& train, std::size_t max_steps = 200000) {
  require(!train.empty(), ErrorCode::InvalidArgument, "empty training split");
  EtsModel m;
  m.dim = train.front().dim();
  const std::size_t k = m.dim - 1;
  const auto grid = ets_grid();
  std::vector<std::vector<double>> sse(grid.size(), std::vector<double>(k, 0.0));
  std::size_t budget = max_steps;
  for (const auto& s : train) {
    if (budget == 0) break;
    const std::size_t len = std::min(s.length(), budget);
    budget -= len;
    std::vector<std::vector<double>> z;
    for (std::size_t t = 0; t < len; ++t) z.push_back(to_ilr(s[t]));
    for (std::size_t a = 0; a < grid.size(); ++a) {
      std::vector<double> level = z.front();
      for (std::size_t t = 1; t < len; ++t)
        for (std::size_t i = 0; i < k; ++i) {
          const double e = z[t][i] - level[i];
          sse[a][i] += e * e;
          level[i] += grid[a] * e;
        }
    }
  }
  m.alpha.assign(k, grid.front());
  for (std::size_t i = 0; i < k; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < grid.size(); ++a)
      if (sse[a][i] < best) {
        best = sse[a][i];
        m.alpha[i] = grid[a];
      }
  }
  return m;
}

inline Dist ets_predict(std::span<const Dist> prefix, const EtsModel& m) {
  require(!prefix.empty(), ErrorCode::EmptyPrefix, "empty prefix");
  const std::size_t k = m.dim - 1;
  std::vector<double> level = to_ilr(prefix.front());
  for (std::size_t t = 1; t < prefix.size(); ++t) {
    const auto z = to_ilr(prefix[t]);
    for (std::size_t i = 0; i < k; ++i) level[i] += m.alpha[i] * (z[i] - level[i]);
  }
  return ilr_inverse(level, m.dim);
}

class IlrEts final : public Forecaster {
 public:
  explicit IlrEts(EtsModel m) : m_(std::move(m)) {}
  std::string name() const override { return "compositional_ets"; }
  Dist predict_next(std::span<const Dist> prefix) const override { return ets_predict(prefix, m_); }
  std::vector<Dist> predict_positions(std::span<const Dist> steps, std::span<const std::size_t> pos) const override {
    std::vector<Dist> out;
    if (pos.empty()) return out;
    const std::size_t k = m_.dim - 1;
    std::vector<double> level = to_ilr(steps.front());
    std::size_t t = 0, next = 0;
    while (next < pos.size()) {
      while (t < pos[next]) {
        ++t;
        const auto z = to_ilr(steps[t]);
        for (std::size_t i = 0; i < k; ++i) level[i] += m_.alpha[i] * (z[i] - level[i]);
      }
      out.push_back(ilr_inverse(level, m_.dim));
      ++next;
    }
    return out;
  }
  const EtsModel& model() const { return m_; }

 private:
  EtsModel m_;
};

}  // namespace cast
