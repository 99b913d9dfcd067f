#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cast/features.hpp"
#include "cast/rng.hpp"
#include "cast/simplex.hpp"
#include "cast/transport.hpp"

namespace cast {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class AblationVariant { full, no_structural_reg, anchor_only, single_head, fixed_local_kernel, no_persistence_mix };

inline constexpr std::array<AblationVariant, 6> kAllVariants = {
    AblationVariant::full,         AblationVariant::no_structural_reg,  AblationVariant::anchor_only,
    AblationVariant::single_head,  AblationVariant::fixed_local_kernel, AblationVariant::no_persistence_mix};

inline std::string_view to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::full: return "full";
    case AblationVariant::no_structural_reg: return "no_structural_reg";
    case AblationVariant::anchor_only: return "anchor_only";
    case AblationVariant::single_head: return "single_head";
    case AblationVariant::fixed_local_kernel: return "fixed_local_kernel";
    case AblationVariant::no_persistence_mix: return "no_persistence_mix";
  }
  return "full";
}

inline AblationVariant parse_variant(std::string_view s) {
  for (auto v : kAllVariants)
    if (to_string(v) == s) return v;
  fail(ErrorCode::InvalidArgument, "unknown variant '" + std::string(s) + "'");
}

struct CastConfig {
  FeatureConfig features;
  std::size_t heads = 2;
  std::size_t head_dim = 64;
  double temperature = 0.0;  // 0 means sqrt(head_dim)
  double lambda_min = 0.05;
  double lambda_max = 0.95;
  double rho_max = 0.20;
  double lambda_init = 0.55;
  double rho_init = 0.02;
  BudgetParams budget;
  RegWeights reg;
  double kl_eps = kDefaultEps;
  std::size_t memory_cap = 128;  // most recent entries visible to retrieval; 0 = whole prefix
  bool use_retrieval = true;
  AblationVariant variant = AblationVariant::full;

  std::size_t effective_heads() const { return variant == AblationVariant::single_head ? 1 : heads; }
  double effective_temperature() const {
    return temperature > 0.0 ? temperature : std::sqrt(static_cast<double>(head_dim));
  }
};

struct ParamBlock {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return rows * cols; }
};

class ParamLayout {
 public:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols) {
    blocks_.push_back({std::move(name), rows, cols, total_});
    total_ += rows * cols;
    return blocks_.size() - 1;
  }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& operator[](std::size_t i) const { return blocks_[i]; }
  std::size_t total() const { return total_; }

  const ParamBlock* find(std::string_view name) const {
    for (const auto& b : blocks_)
      if (b.name == name) return &b;
    return nullptr;
  }

 private:
  std::vector<ParamBlock> blocks_;
  std::size_t total_ = 0;
};

/// Stored (h_s, p_{s+1}) pairs; entry s is only visible to queries at t > s.
class RetrievalMemory {
 public:
  struct Entry {
    std::size_t time;
    std::vector<double> features;
    Dist successor;
  };

  void insert(std::size_t time, std::vector<double> features, Dist successor) {
    require(entries_.empty() || time > entries_.back().time, ErrorCode::InvalidArgument,
            "memory entries must be inserted in increasing time order");
    entries_.push_back({time, std::move(features), std::move(successor)});
  }

  const std::vector<Entry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

  /// Indices of entries visible at time t, limited to the `cap` most recent (0 = all).
  std::vector<std::size_t> visible(std::size_t t, std::size_t cap) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const std::size_t s = entries_[i].time;
      if (s >= t) break;
      if (cap > 0 && s + cap < t) continue;
      idx.push_back(i);
    }
    return idx;
  }

 private:
  std::vector<Entry> entries_;
};

struct ForwardTrace {
  Dist retrieved;
  Dist anchor;
  Dist prediction;
  double lambda = 0.0;
  double rho = 0.0;
  double rho_effective = 0.0;
  double delta_mu = 0.0;
  double budget = 0.0;
  bool transport_active = false;
  bool retrieval_used = false;
  std::optional<TransportKernel> kernel;
  std::vector<std::vector<double>> attention;  // per head, over visible memory
  std::vector<double> head_mix;
};

/// Positions [begin, end) of one series whose masked targets are scored.
struct TrainingBlock {
  const SimplexSeries* series = nullptr;
  std::size_t begin = 0;
  std::size_t end = 0;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Trainable causal anchored simplex transport forecaster.
class CastModel {
 public:
  CastModel(CastConfig cfg, std::size_t d, bool ordered, std::uint64_t seed)
      : cfg_(std::move(cfg)), d_(d), ordered_(ordered) {
    build_layout();
    theta_.assign(layout_.total(), 0.0);
    initialize(seed);
  }

  CastModel(CastConfig cfg, std::size_t d, bool ordered, std::vector<double> theta)
      : cfg_(std::move(cfg)), d_(d), ordered_(ordered) {
    build_layout();
    require(theta.size() == layout_.total(), ErrorCode::InvalidArgument, "parameter vector has wrong size");
    theta_ = std::move(theta);
  }

  const CastConfig& config() const { return cfg_; }
  std::size_t dim() const { return d_; }
  bool ordered() const { return ordered_; }
  std::size_t feature_size() const { return f_; }
  std::size_t heads() const { return m_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<const double> params() const { return theta_; }
  std::vector<double>& mutable_params() { return theta_; }
  bool transport_active() const { return ordered_ && cfg_.variant != AblationVariant::anchor_only; }

  /// Predict the successor of the last element of `prefix`, retrieving from its own causal prefix.
  Dist predict_next(std::span<const Dist> prefix, ForwardTrace* trace = nullptr) const {
    require(!prefix.empty(), ErrorCode::EmptyPrefix, "empty prefix");
    const std::size_t t = prefix.size() - 1;
    std::vector<Dist> out;
    std::vector<ForwardTrace> traces;
    eval_block(prefix, std::span<const std::size_t>(&t, 1), false, &out, nullptr, trace ? &traces : nullptr);
    if (trace) *trace = std::move(traces.front());
    return out.front();
  }

  /// Teacher-forced predictions of steps[t + 1] for every t in `positions` (sorted ascending).
  std::vector<Dist> predict_positions(std::span<const Dist> steps, std::span<const std::size_t> positions) const {
    std::vector<Dist> out;
    if (positions.empty()) return out;
    eval_block(steps, positions, false, &out, nullptr, nullptr);
    return out;
  }

  /// Forward against an explicitly supplied memory instead of the prefix's own.
  Dist forward(std::span<const Dist> prefix, const RetrievalMemory& mem, ForwardTrace* trace = nullptr) const {
    require(!prefix.empty(), ErrorCode::EmptyPrefix, "empty prefix");
    const std::size_t t = prefix.size() - 1;
    const auto h = encode(prefix, cfg_.features, ordered_);
    const auto vis = mem.visible(t, cfg_.memory_cap);
    const std::size_t n = vis.size();
    RowMatrix hm(n, f_);
    std::vector<const double*> succ(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& e = mem.entries()[vis[i]];
      require_same_dim(e.features.size(), f_);
      require_same_dim(e.successor.size(), d_);
      hm.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(e.features.data(), f_);
      succ[i] = e.successor.values().data();
    }
    std::vector<RowMatrix> keys(m_);
    std::vector<Eigen::VectorXd> q(m_);
    const Eigen::Map<const Eigen::VectorXd> hv(h.data(), f_);
    for (std::size_t m = 0; m < m_; ++m) {
      keys[m] = hm * wk(m).transpose();
      q[m] = wq(m) * hv;
    }
    std::vector<const double*> key_ptr(m_), q_ptr(m_);
    for (std::size_t m = 0; m < m_; ++m) {
      key_ptr[m] = keys[m].data();
      q_ptr[m] = q[m].data();
    }
    std::vector<double> pred(d_);
    StepIo io{h.data(), prefix.back().values(), succ, key_ptr, q_ptr, nullptr, pred.data(), nullptr, {}, {}, trace};
    step(io);
    return Dist(std::move(pred));
  }

  /// Memory of (h_s, p_{s+1}) for every s < T - 1 of a prefix.
  RetrievalMemory memory_from_prefix(std::span<const Dist> prefix) const {
    RetrievalMemory mem;
    if (prefix.empty()) return mem;
    FeatureEncoder enc(cfg_.features, d_, ordered_);
    for (std::size_t s = 0; s + 1 < prefix.size(); ++s) {
      enc.push(prefix[s].values());
      mem.insert(s, enc.features(), prefix[s + 1]);
    }
    return mem;
  }

  /// Iterate the one-step map on its own outputs; never reads beyond `context`.
  std::vector<Dist> predict_rollout(std::span<const Dist> context, std::size_t horizon,
                                    std::vector<ForwardTrace>* traces = nullptr) const {
    require(horizon >= 1, ErrorCode::InvalidArgument, "horizon must be >= 1");
    require(!context.empty(), ErrorCode::EmptyPrefix, "empty context");
    std::vector<Dist> steps(context.begin(), context.end());
    std::vector<Dist> out;
    for (std::size_t k = 0; k < horizon; ++k) {
      ForwardTrace tr;
      Dist next = predict_next(steps, traces ? &tr : nullptr);
      if (traces) traces->push_back(std::move(tr));
      steps.push_back(next);
      out.push_back(std::move(next));
    }
    return out;
  }

  /// Mean one-step KL (+ operator prior) over the scored positions of `blocks`.
  double loss(std::span<const TrainingBlock> blocks) const { return loss_impl(blocks, nullptr); }

  /// Same as loss() and writes the exact gradient with respect to every parameter.
  double loss_and_grad(std::span<const TrainingBlock> blocks, std::vector<double>& grad) const {
    grad.assign(theta_.size(), 0.0);
    const double l = loss_impl(blocks, &grad);
    bool finite = std::isfinite(l);
    for (double g : grad) finite = finite && std::isfinite(g);
    require(finite, ErrorCode::NonFiniteGradient, "loss or gradient is not finite");
    return l;
  }

 private:
  struct StepIo {
    const double* h;
    std::span<const double> p;
    std::span<const double* const> successors;
    std::span<const double* const> keys;  // per head: successors.size() x head_dim, row-major
    std::span<const double* const> queries;
    const double* target;  // nullptr: no loss
    double* prediction;
    double* grad;  // nullptr: forward only
    std::span<double* const> dkeys;
    std::span<double* const> dqueries;
    ForwardTrace* trace;
  };

  struct StepLoss {
    double kl = 0.0;
    double reg = 0.0;
  };

  void build_layout() {
    f_ = feature_dim(cfg_.features, d_, ordered_);
    m_ = cfg_.effective_heads();
    require(m_ >= 1 && cfg_.head_dim >= 1, ErrorCode::InvalidArgument, "need at least one head of positive width");
    require(cfg_.lambda_min >= 0.0 && cfg_.lambda_min <= cfg_.lambda_max && cfg_.lambda_max <= 1.0,
            ErrorCode::InvalidArgument, "persistence gate bounds must satisfy 0 <= min <= max <= 1");
    require(cfg_.rho_max >= 0.0 && cfg_.rho_max <= 1.0, ErrorCode::InvalidArgument, "rho_max must be in [0,1]");
    for (std::size_t m = 0; m < m_; ++m) {
      i_wq_.push_back(layout_.add("W_q." + std::to_string(m), cfg_.head_dim, f_));
      i_wk_.push_back(layout_.add("W_k." + std::to_string(m), cfg_.head_dim, f_));
    }
    i_weta_ = layout_.add("W_eta", m_, f_);
    i_beta_ = layout_.add("b_eta", m_, 1);
    i_wlam_ = layout_.add("w_lambda", 1, f_);
    i_blam_ = layout_.add("b_lambda", 1, 1);
    i_wrho_ = layout_.add("w_rho", 1, f_);
    i_brho_ = layout_.add("b_rho", 1, 1);
    i_wkern_ = layout_.add("W_K", 3, f_);
    i_ukern_ = layout_.add("U_K", 3, 2);
    i_bkern_ = layout_.add("b_K", 3, 1);
    pos_.resize(d_);
    for (std::size_t j = 0; j < d_; ++j) {
      const double th = std::numbers::pi * static_cast<double>(j) / static_cast<double>(d_ - 1);
      pos_[j] = {std::sin(th), std::cos(th)};
    }
  }

  void initialize(std::uint64_t seed) {
    Philox rng(derive_seed(seed, 0xC0DE));
    std::normal_distribution<double> normal(0.0, 1.0);
    const double proj_sd = 1.0 / std::sqrt(static_cast<double>(f_));
    auto fill = [&](std::size_t block, double sd) {
      const auto& b = layout_[block];
      for (std::size_t i = 0; i < b.size(); ++i) theta_[b.offset + i] = sd * normal(rng);
    };
    for (std::size_t m = 0; m < m_; ++m) {
      fill(i_wq_[m], proj_sd);
      fill(i_wk_[m], proj_sd);
    }
    fill(i_weta_, 0.01);
    fill(i_wlam_, 0.01);
    fill(i_wrho_, 0.01);
    fill(i_wkern_, 0.01);
    fill(i_ukern_, 0.01);
    const double span = cfg_.lambda_max - cfg_.lambda_min;
    if (span > 0.0) {
      const double frac = std::clamp((cfg_.lambda_init - cfg_.lambda_min) / span, 1e-6, 1.0 - 1e-6);
      theta_[layout_[i_blam_].offset] = logit(frac);
    }
    if (cfg_.rho_max > 0.0) {
      const double frac = std::clamp(cfg_.rho_init / cfg_.rho_max, 1e-6, 1.0 - 1e-6);
      theta_[layout_[i_brho_].offset] = logit(frac);
    }
  }

  using ConstMap = Eigen::Map<const RowMatrix>;
  ConstMap block(std::size_t i) const {
    const auto& b = layout_[i];
    return ConstMap(theta_.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols));
  }
  ConstMap wq(std::size_t m) const { return block(i_wq_[m]); }
  ConstMap wk(std::size_t m) const { return block(i_wk_[m]); }
  const double* raw(std::size_t i) const { return theta_.data() + layout_[i].offset; }

  static double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
  }
  static void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
  }

  /// One transition, optionally with loss and its backward pass.
  StepLoss step(const StepIo& io) const {
    const std::size_t d = d_, f = f_, dr = cfg_.head_dim;
    const double tau = cfg_.effective_temperature();
    const double* h = io.h;
    const std::size_t n = io.successors.size();
    const bool use_ret = cfg_.use_retrieval && n > 0;

    // Retrieval.
    std::vector<double> r(io.p.begin(), io.p.end());
    std::vector<std::vector<double>> alpha(m_), rm(m_);
    std::vector<double> eta(m_, 1.0);
    if (use_ret) {
      for (std::size_t m = 0; m < m_; ++m) {
        auto& al = alpha[m];
        al.resize(n);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < n; ++s) {
          al[s] = dot(io.queries[m], io.keys[m] + s * dr, dr) / tau;
          mx = std::max(mx, al[s]);
        }
        double z = 0.0;
        for (double& x : al) {
          x = std::exp(x - mx);
          z += x;
        }
        rm[m].assign(d, 0.0);
        for (std::size_t s = 0; s < n; ++s) {
          al[s] /= z;
          axpy(al[s], io.successors[s], rm[m].data(), d);
        }
      }
      if (m_ > 1) {
        const double* w = raw(i_weta_);
        const double* b = raw(i_beta_);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t m = 0; m < m_; ++m) {
          eta[m] = dot(w + m * f, h, f) + b[m];
          mx = std::max(mx, eta[m]);
        }
        double z = 0.0;
        for (double& e : eta) {
          e = std::exp(e - mx);
          z += e;
        }
        for (double& e : eta) e /= z;
      }
      std::fill(r.begin(), r.end(), 0.0);
      for (std::size_t m = 0; m < m_; ++m) axpy(eta[m], rm[m].data(), r.data(), d);
    }

    // Persistence gate and anchor.
    double lam = 0.0, s_lam = 0.0;
    const double lam_span = cfg_.lambda_max - cfg_.lambda_min;
    const bool gate_lambda = cfg_.variant != AblationVariant::no_persistence_mix;
    if (gate_lambda) {
      s_lam = sigmoid(dot(raw(i_wlam_), h, f) + raw(i_blam_)[0]);
      lam = cfg_.lambda_min + lam_span * s_lam;
    }
    std::vector<double> a(d);
    for (std::size_t j = 0; j < d; ++j) a[j] = lam * io.p[j] + (1.0 - lam) * r[j];

    // Transport.
    const bool active = transport_active();
    const bool fixed_kernel = cfg_.variant == AblationVariant::fixed_local_kernel;
    const bool with_reg = active && cfg_.variant != AblationVariant::no_structural_reg;
    std::vector<std::array<double, 3>> kern;
    std::vector<double> ta;
    double rho = 0.0, s_rho = 0.0, rho_eff = 0.0, dmu = 0.0, sig_a = 0.0, mu_a = 0.0, budget = 0.0, ratio = 1.0,
           g = 1.0;
    const double* pred_src = a.data();
    std::vector<double> pred;
    if (active) {
      s_rho = sigmoid(dot(raw(i_wrho_), h, f) + raw(i_brho_)[0]);
      rho = cfg_.rho_max * s_rho;
      kern.resize(d);
      if (fixed_kernel) {
        const auto fk = TransportKernel::fixed_local(d);
        for (std::size_t j = 0; j < d; ++j) kern[j] = fk[j];
      } else {
        const double* wkern = raw(i_wkern_);
        const double* ukern = raw(i_ukern_);
        const double* bkern = raw(i_bkern_);
        std::array<double, 3> c{};
        for (std::size_t o = 0; o < 3; ++o) c[o] = dot(wkern + o * f, h, f) + bkern[o];
        for (std::size_t j = 0; j < d; ++j) {
          std::array<double, 3> zl{};
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t o = 0; o < 3; ++o) {
            zl[o] = c[o] + ukern[o * 2] * pos_[j][0] + ukern[o * 2 + 1] * pos_[j][1];
            mx = std::max(mx, zl[o]);
          }
          double z = 0.0;
          for (std::size_t o = 0; o < 3; ++o) {
            zl[o] = std::exp(zl[o] - mx);
            z += zl[o];
          }
          for (std::size_t o = 0; o < 3; ++o) kern[j][o] = zl[o] / z;
        }
      }
      ta.assign(d, 0.0);
      for (std::size_t j = 0; j < d; ++j)
        for (int o = -1; o <= 1; ++o) ta[clip_bin(j, o, d)] += a[j] * kern[j][static_cast<std::size_t>(o + 1)];
      mu_a = mean_support(a);
      dmu = mean_support(ta) - mu_a;
      sig_a = std_support(a);
      budget = cfg_.budget.delta_mu + cfg_.budget.delta_sigma * sig_a;
      ratio = budget / (std::abs(dmu) + cfg_.budget.epsilon);
      g = std::min(1.0, ratio);
      rho_eff = rho * g;
      pred.resize(d);
      for (std::size_t j = 0; j < d; ++j) pred[j] = (1.0 - rho_eff) * a[j] + rho_eff * ta[j];
      pred_src = pred.data();
    }
    std::copy(pred_src, pred_src + d, io.prediction);

    if (io.trace) {
      ForwardTrace& tr = *io.trace;
      tr.retrieved = Dist(r);
      tr.anchor = Dist(a);
      tr.prediction = Dist(std::vector<double>(pred_src, pred_src + d));
      tr.lambda = lam;
      tr.rho = rho;
      tr.rho_effective = rho_eff;
      tr.delta_mu = dmu;
      tr.budget = budget;
      tr.transport_active = active;
      tr.retrieval_used = use_ret;
      if (active) tr.kernel = TransportKernel(kern);
      tr.attention = alpha;
      tr.head_mix = eta;
    }

    StepLoss out;
    if (!io.target) return out;

    // Loss: KL(target || prediction) on the eps-smoothed path, plus operator prior.
    const double eps = cfg_.kl_eps;
    const double denom = 1.0 + static_cast<double>(d) * eps;
    std::vector<double> g_pred(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double ys = (io.target[j] + eps) / denom;
      const double qs = (pred_src[j] + eps) / denom;
      out.kl += ys * std::log(ys / qs);
      g_pred[j] = -ys / qs / denom;
    }
    const RegWeights& rw = cfg_.reg;
    const double bc = std::max(budget, cfg_.budget.epsilon);
    if (with_reg) {
      RegTerms terms;
      terms.strength = rho;
      for (std::size_t j = 0; j < d; ++j) {
        terms.off_identity += kern[j][0] * kern[j][0] + kern[j][2] * kern[j][2];
        if (j + 1 < d)
          for (std::size_t o = 0; o < 3; ++o) terms.smoothness += (kern[j][o] - kern[j + 1][o]) * (kern[j][o] - kern[j + 1][o]);
      }
      terms.mean_shift = (dmu / bc) * (dmu / bc);
      out.reg = terms.weighted(rw);
    }
    if (!io.grad) return out;

    double* grad = io.grad;
    std::vector<double> g_a(d, 0.0);
    if (active) {
      double d_rho_eff = 0.0;
      std::vector<double> g_ta(d);
      for (std::size_t j = 0; j < d; ++j) {
        d_rho_eff += g_pred[j] * (ta[j] - a[j]);
        g_a[j] = (1.0 - rho_eff) * g_pred[j];
        g_ta[j] = rho_eff * g_pred[j];
      }
      double d_rho = d_rho_eff * g;
      const double d_g = d_rho_eff * rho;
      double d_dmu = 0.0, d_budget = 0.0;
      std::vector<std::array<double, 3>> d_kern(d, {0.0, 0.0, 0.0});
      if (with_reg) {
        d_rho += rw.strength;
        for (std::size_t j = 0; j < d; ++j) {
          d_kern[j][0] += 2.0 * rw.off_identity * kern[j][0];
          d_kern[j][2] += 2.0 * rw.off_identity * kern[j][2];
          if (j + 1 < d) {
            for (std::size_t o = 0; o < 3; ++o) {
              const double diff = 2.0 * rw.smoothness * (kern[j][o] - kern[j + 1][o]);
              d_kern[j][o] += diff;
              d_kern[j + 1][o] -= diff;
            }
          }
        }
        const double rt = dmu / bc;
        d_dmu += rw.mean_shift * 2.0 * rt / bc;
        if (budget > cfg_.budget.epsilon) d_budget += -rw.mean_shift * 2.0 * rt * rt / budget;
      }
      if (ratio < 1.0) {
        const double den = std::abs(dmu) + cfg_.budget.epsilon;
        d_budget += d_g / den;
        const double sgn = dmu > 0.0 ? 1.0 : (dmu < 0.0 ? -1.0 : 0.0);
        d_dmu += -d_g * budget / (den * den) * sgn;
      }
      if (sig_a > 1e-12) {
        const double d_var = d_budget * cfg_.budget.delta_sigma / (2.0 * sig_a);
        double sa = 0.0;
        for (double x : a) sa += x;
        for (std::size_t k = 0; k < d; ++k) {
          const double kk = static_cast<double>(k + 1);
          g_a[k] += d_var * ((kk - mu_a) * (kk - mu_a) - 2.0 * kk * mu_a * (1.0 - sa));
        }
      }
      for (std::size_t k = 0; k < d; ++k) {
        const double kk = static_cast<double>(k + 1);
        g_ta[k] += d_dmu * kk;
        g_a[k] -= d_dmu * kk;
      }
      for (std::size_t j = 0; j < d; ++j) {
        for (int o = -1; o <= 1; ++o) {
          const std::size_t oi = static_cast<std::size_t>(o + 1);
          const double gt = g_ta[clip_bin(j, o, d)];
          g_a[j] += kern[j][oi] * gt;
          d_kern[j][oi] += a[j] * gt;
        }
      }
      if (!fixed_kernel) {
        const auto& bw = layout_[i_wkern_];
        const auto& bu = layout_[i_ukern_];
        const auto& bb = layout_[i_bkern_];
        std::array<double, 3> dc{};
        for (std::size_t j = 0; j < d; ++j) {
          double inner = 0.0;
          for (std::size_t o = 0; o < 3; ++o) inner += d_kern[j][o] * kern[j][o];
          for (std::size_t o = 0; o < 3; ++o) {
            const double dz = kern[j][o] * (d_kern[j][o] - inner);
            dc[o] += dz;
            grad[bu.offset + o * 2] += dz * pos_[j][0];
            grad[bu.offset + o * 2 + 1] += dz * pos_[j][1];
          }
        }
        for (std::size_t o = 0; o < 3; ++o) {
          grad[bb.offset + o] += dc[o];
          axpy(dc[o], h, grad + bw.offset + o * f, f);
        }
      }
      const double dv = d_rho * cfg_.rho_max * s_rho * (1.0 - s_rho);
      axpy(dv, h, grad + layout_[i_wrho_].offset, f);
      grad[layout_[i_brho_].offset] += dv;
    } else {
      g_a = g_pred;
    }

    if (gate_lambda) {
      double d_lam = 0.0;
      for (std::size_t j = 0; j < d; ++j) d_lam += g_a[j] * (io.p[j] - r[j]);
      const double du = d_lam * lam_span * s_lam * (1.0 - s_lam);
      axpy(du, h, grad + layout_[i_wlam_].offset, f);
      grad[layout_[i_blam_].offset] += du;
    }

    if (use_ret) {
      std::vector<double> g_r(d);
      for (std::size_t j = 0; j < d; ++j) g_r[j] = (1.0 - lam) * g_a[j];
      if (m_ > 1) {
        std::vector<double> d_eta(m_);
        double inner = 0.0;
        for (std::size_t m = 0; m < m_; ++m) {
          d_eta[m] = dot(g_r.data(), rm[m].data(), d);
          inner += d_eta[m] * eta[m];
        }
        const auto& bw = layout_[i_weta_];
        const auto& bb = layout_[i_beta_];
        for (std::size_t m = 0; m < m_; ++m) {
          const double de = eta[m] * (d_eta[m] - inner);
          axpy(de, h, grad + bw.offset + m * f, f);
          grad[bb.offset + m] += de;
        }
      }
      std::vector<double> d_alpha(n);
      for (std::size_t m = 0; m < m_; ++m) {
        const auto& al = alpha[m];
        double inner = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
          d_alpha[s] = eta[m] * dot(g_r.data(), io.successors[s], d);
          inner += al[s] * d_alpha[s];
        }
        for (std::size_t s = 0; s < n; ++s) {
          const double ds = al[s] * (d_alpha[s] - inner) / tau;
          if (ds == 0.0) continue;
          axpy(ds, io.keys[m] + s * dr, io.dqueries[m], dr);
          axpy(ds, io.queries[m], io.dkeys[m] + s * dr, dr);
        }
      }
    }
    return out;
  }

  std::size_t memory_start(std::size_t t) const {
    return (cfg_.memory_cap > 0 && t > cfg_.memory_cap) ? t - cfg_.memory_cap : 0;
  }

  /// Evaluate positions of one series in a single pass; returns summed loss.
  StepLoss eval_block(std::span<const Dist> steps, std::span<const std::size_t> positions, bool with_targets,
                      std::vector<Dist>* preds, std::vector<double>* grad, std::vector<ForwardTrace>* traces) const {
    StepLoss total;
    if (positions.empty()) return total;
    require(std::is_sorted(positions.begin(), positions.end()), ErrorCode::InvalidArgument, "positions must be sorted");
    const std::size_t hi = positions.back();
    require(hi < steps.size() && (!with_targets || hi + 1 < steps.size()), ErrorCode::InvalidArgument,
            "position out of range");
    for (const auto& s : steps) require_same_dim(s.size(), d_);
    const std::size_t lo = memory_start(positions.front());
    const std::size_t rows = hi - lo + 1;
    const std::size_t dr = cfg_.head_dim;

    RowMatrix hmat(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(f_));
    FeatureEncoder enc(cfg_.features, d_, ordered_);
    for (std::size_t t = 0; t <= hi; ++t) {
      enc.push(steps[t].values());
      if (t >= lo) enc.write(std::span<double>(hmat.row(static_cast<Eigen::Index>(t - lo)).data(), f_));
    }

    const bool need_ret = cfg_.use_retrieval;
    std::vector<RowMatrix> qm(m_), km(m_), dqm, dkm;
    if (need_ret) {
      for (std::size_t m = 0; m < m_; ++m) {
        qm[m] = hmat * wq(m).transpose();
        km[m] = hmat * wk(m).transpose();
      }
      if (grad) {
        dqm.assign(m_, RowMatrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dr)));
        dkm.assign(m_, RowMatrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dr)));
      }
    }

    std::vector<double> pred(d_);
    std::vector<const double*> succ, kp(m_), qp(m_);
    std::vector<double*> dkp(m_), dqp(m_);
    for (std::size_t t : positions) {
      const std::size_t s0 = need_ret ? memory_start(t) : t;
      succ.clear();
      for (std::size_t s = s0; s < t; ++s) succ.push_back(steps[s + 1].values().data());
      if (need_ret) {
        for (std::size_t m = 0; m < m_; ++m) {
          kp[m] = km[m].data() + (s0 - lo) * dr;
          qp[m] = qm[m].data() + (t - lo) * dr;
          if (grad) {
            dkp[m] = dkm[m].data() + (s0 - lo) * dr;
            dqp[m] = dqm[m].data() + (t - lo) * dr;
          }
        }
      }
      ForwardTrace tr;
      StepIo io{hmat.row(static_cast<Eigen::Index>(t - lo)).data(),
                steps[t].values(),
                succ,
                kp,
                qp,
                with_targets ? steps[t + 1].values().data() : nullptr,
                pred.data(),
                grad ? grad->data() : nullptr,
                dkp,
                dqp,
                traces ? &tr : nullptr};
      const StepLoss sl = step(io);
      total.kl += sl.kl;
      total.reg += sl.reg;
      if (preds) preds->emplace_back(pred);
      if (traces) traces->push_back(std::move(tr));
    }

    if (grad && need_ret) {
      for (std::size_t m = 0; m < m_; ++m) {
        const auto& bq = layout_[i_wq_[m]];
        const auto& bk = layout_[i_wk_[m]];
        Eigen::Map<RowMatrix> gq(grad->data() + bq.offset, static_cast<Eigen::Index>(dr), static_cast<Eigen::Index>(f_));
        Eigen::Map<RowMatrix> gk(grad->data() + bk.offset, static_cast<Eigen::Index>(dr), static_cast<Eigen::Index>(f_));
        gq.noalias() += dqm[m].transpose() * hmat;
        gk.noalias() += dkm[m].transpose() * hmat;
      }
    }
    return total;
  }

  double loss_impl(std::span<const TrainingBlock> blocks, std::vector<double>* grad) const {
    double kl_sum = 0.0, reg_sum = 0.0;
    std::size_t count = 0;
    std::vector<std::size_t> pos;
    for (const auto& b : blocks) {
      require(b.series != nullptr, ErrorCode::InvalidArgument, "training block without series");
      const auto& mask = b.series->loss_mask();
      pos.clear();
      for (std::size_t t = b.begin; t < std::min(b.end, mask.size()); ++t)
        if (mask[t]) pos.push_back(t);
      if (pos.empty()) continue;
      const StepLoss sl = eval_block(b.series->steps(), pos, true, nullptr, grad, nullptr);
      kl_sum += sl.kl;
      reg_sum += sl.reg;
      count += pos.size();
    }
    require(count > 0, ErrorCode::EmptyBatch, "no scored positions in batch");
    const double inv = 1.0 / static_cast<double>(count);
    if (grad)
      for (double& g : *grad) g *= inv;
    return (kl_sum + reg_sum) * inv;
  }

  CastConfig cfg_;
  std::size_t d_;
  bool ordered_;
  std::size_t f_ = 0;
  std::size_t m_ = 0;
  ParamLayout layout_;
  std::vector<double> theta_;
  std::vector<std::size_t> i_wq_, i_wk_;
  std::size_t i_weta_ = 0, i_beta_ = 0, i_wlam_ = 0, i_blam_ = 0, i_wrho_ = 0, i_brho_ = 0, i_wkern_ = 0,
              i_ukern_ = 0, i_bkern_ = 0;
  std::vector<std::array<double, 2>> pos_;
};

}  // namespace cast
