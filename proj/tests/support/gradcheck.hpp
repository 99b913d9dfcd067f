#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cast/model.hpp"
#include "cast/rng.hpp"

namespace cast::gradcheck {

inline Dist random_dist(Philox& rng, std::size_t d, double floor = 0.0) {
  std::vector<double> v(d);
  for (auto& x : v) x = floor + rng.uniform();
  return normalize(v);
}

inline SimplexSeries random_series(Philox& rng, std::size_t d, std::size_t t, bool ordered, std::string id = "s") {
  std::vector<Dist> steps;
  for (std::size_t i = 0; i < t; ++i) steps.push_back(random_dist(rng, d, 0.05));
  return SimplexSeries(std::move(id), ordered, std::move(steps));
}

// Push the kernel toward right shifts so that the mean-shift budget binds.
inline void perturb(CastModel& model, Philox& rng) {
  for (auto& x : model.mutable_params()) x += 0.3 * (rng.uniform() - 0.5);
  const auto* bk = model.layout().find("b_K");
  model.mutable_params()[bk->offset + 2] += 2.5;
}

inline CastConfig small_config() {
  CastConfig c;
  c.features.window = 2;
  c.head_dim = 3;
  c.memory_cap = 4;
  return c;
}

// Central differences against the analytic gradient; returns the worst relative error.
inline double fd_worst(CastModel& model, std::span<const TrainingBlock> blocks) {
  std::vector<double> grad;
  model.loss_and_grad(blocks, grad);
  auto& th = model.mutable_params();
  double worst = 0.0;
  const double h = 1e-5;
  for (std::size_t i = 0; i < th.size(); ++i) {
    const double orig = th[i];
    th[i] = orig + h;
    const double lp = model.loss(blocks);
    th[i] = orig - h;
    const double lm = model.loss(blocks);
    th[i] = orig;
    const double fd = (lp - lm) / (2 * h);
    const double err = std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace cast::gradcheck
