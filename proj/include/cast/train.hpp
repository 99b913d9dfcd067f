#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "cast/metrics.hpp"
#include "cast/model.hpp"
#include "cast/rng.hpp"

namespace cast {

struct TrainConfig {
  std::size_t steps = 2000;
  double lr = 3e-4;
  std::size_t warmup = 200;
  double weight_decay = 0.1;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t block_len = 128;  // scored positions per sampled block
  std::size_t batch = 4;        // blocks per optimizer step
  std::size_t eval_every = 100;
  std::size_t val_max_positions = 64;  // per validation series, evenly spaced
};

struct TrainLogEntry {
  std::size_t step = 0;
  double train_loss = 0.0;
  double val_kl = 0.0;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;
  std::size_t best_step = 0;
  double best_val_kl = std::numeric_limits<double>::infinity();
};

struct TrainResult {
  CastModel model;
  TrainLog log;
};

/// Bias-corrected AdamW with decoupled weight decay.
class AdamW {
 public:
  AdamW(std::size_t n, const TrainConfig& cfg, std::vector<bool> decay_mask)
      : cfg_(cfg), m_(n, 0.0), v_(n, 0.0), decay_(std::move(decay_mask)) {}

  void step(std::vector<double>& theta, const std::vector<double>& grad, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      const double mh = m_[i] / c1;
      const double vh = v_[i] / c2;
      if (decay_[i]) theta[i] -= lr * cfg_.weight_decay * theta[i];
      theta[i] -= lr * mh / (std::sqrt(vh) + cfg_.adam_eps);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<double> m_, v_;
  std::vector<bool> decay_;
  std::uint64_t t_ = 0;
};

inline double learning_rate(const TrainConfig& cfg, std::size_t step) {
  if (cfg.warmup == 0 || step >= cfg.warmup) return cfg.lr;
  return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup);
}

inline double clip_gradient(std::vector<double>& grad, double max_norm) {
  double n2 = 0.0;
  for (double g : grad) n2 += g * g;
  const double norm = std::sqrt(n2);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (double& g : grad) g *= s;
  }
  return norm;
}

/// Scored positions of a series, thinned to at most `cap` evenly spaced ones (0 = all).
inline std::vector<std::size_t> scored_positions(const SimplexSeries& s, std::size_t cap = 0) {
  std::vector<std::size_t> pos;
  const auto& mask = s.loss_mask();
  for (std::size_t t = 0; t < mask.size(); ++t)
    if (mask[t]) pos.push_back(t);
  if (cap == 0 || pos.size() <= cap) return pos;
  std::vector<std::size_t> out;
  out.reserve(cap);
  for (std::size_t i = 0; i < cap; ++i) out.push_back(pos[i * pos.size() / cap]);
  return out;
}

/// Mean one-step KL over scored positions (no operator prior).
inline double mean_one_step_kl(const CastModel& model, const std::vector<SimplexSeries>& data,
                               std::size_t cap_per_series = 0) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : data) {
    const auto pos = scored_positions(s, cap_per_series);
    if (pos.empty()) continue;
    const auto preds = model.predict_positions(s.steps(), pos);
    for (std::size_t i = 0; i < pos.size(); ++i) sum += kl(s[pos[i] + 1], preds[i], model.config().kl_eps);
    n += pos.size();
  }
  require(n > 0, ErrorCode::NoScoredPositions, "no scored positions");
  return sum / static_cast<double>(n);
}

/// Samples training blocks: series proportional to scored count, block start uniform.
class BlockSampler {
 public:
  BlockSampler(const std::vector<SimplexSeries>& data, std::size_t block_len, std::uint64_t seed)
      : data_(data), block_len_(block_len), rng_(seed, 0x5A17) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::size_t c = data[i].scored_count();
      if (c == 0) continue;
      total_ += c;
      cum_.push_back(total_);
      idx_.push_back(i);
    }
    require(total_ > 0, ErrorCode::EmptyBatch, "training data has no scored positions");
  }

  TrainingBlock next() {
    const std::uint64_t u = rng_.below(total_);
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), u);
    const SimplexSeries& s = data_[idx_[static_cast<std::size_t>(it - cum_.begin())]];
    const std::size_t n = s.length() - 1;
    if (block_len_ == 0 || n <= block_len_) return {&s, 0, n};
    const std::size_t begin = rng_.below(n - block_len_ + 1);
    return {&s, begin, begin + block_len_};
  }

 private:
  const std::vector<SimplexSeries>& data_;
  std::size_t block_len_;
  Philox rng_;
  std::vector<std::uint64_t> cum_;
  std::vector<std::size_t> idx_;
  std::uint64_t total_ = 0;
};

/// Train from a fresh initialization; keeps the parameters with lowest validation KL.
inline TrainResult train(const CastConfig& cfg, const std::vector<SimplexSeries>& train_set,
                         const std::vector<SimplexSeries>& val_set, const TrainConfig& tc, std::uint64_t seed) {
  require(!train_set.empty(), ErrorCode::InvalidArgument, "empty training split");
  require(!val_set.empty(), ErrorCode::InvalidArgument, "empty validation split");
  const std::size_t d = train_set.front().dim();
  const bool ordered = train_set.front().ordered();
  CastModel model(cfg, d, ordered, derive_seed(seed, 1));

  std::vector<bool> decay(model.params().size(), false);
  for (const auto& b : model.layout().blocks())
    if (b.name.rfind("b_", 0) != 0)
      for (std::size_t i = 0; i < b.size(); ++i) decay[b.offset + i] = true;
  AdamW opt(model.params().size(), tc, std::move(decay));
  BlockSampler sampler(train_set, tc.block_len, derive_seed(seed, 2));

  TrainLog log;
  std::vector<double> best = model.mutable_params();
  auto validate = [&](std::size_t step, double train_loss) {
    const double v = mean_one_step_kl(model, val_set, tc.val_max_positions);
    log.entries.push_back({step, train_loss, v});
    if (v < log.best_val_kl) {
      log.best_val_kl = v;
      log.best_step = step;
      best = model.mutable_params();
    }
  };
  validate(0, std::numeric_limits<double>::quiet_NaN());

  std::vector<TrainingBlock> batch(tc.batch);
  std::vector<double> grad;
  double running = 0.0;
  std::size_t since = 0;
  for (std::size_t step = 0; step < tc.steps; ++step) {
    for (auto& b : batch) b = sampler.next();
    double l = 0.0;
    try {
      l = model.loss_and_grad(batch, grad);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NonFiniteGradient)
        fail(ErrorCode::DivergedTraining, "training diverged at step " + std::to_string(step));
      throw;
    }
    clip_gradient(grad, tc.clip_norm);
    opt.step(model.mutable_params(), grad, learning_rate(tc, step));
    running += l;
    ++since;
    const bool last = step + 1 == tc.steps;
    if ((tc.eval_every > 0 && (step + 1) % tc.eval_every == 0) || last) {
      validate(step + 1, running / static_cast<double>(since));
      running = 0.0;
      since = 0;
    }
  }
  model.mutable_params() = best;
  return {std::move(model), std::move(log)};
}

}  // namespace cast
