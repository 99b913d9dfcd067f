#include <gtest/gtest.h>

#include "cast/baselines.hpp"
#include "cast/eval.hpp"
#include "cast/train.hpp"

using namespace cast;

namespace {

std::vector<SimplexSeries> drifting(std::size_t n, std::uint64_t seed) {
  Philox rng(seed, 0);
  std::vector<SimplexSeries> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Dist> steps;
    double c = 1.0 + 2.0 * rng.uniform();
    for (std::size_t t = 0; t < 24; ++t) {
      std::vector<double> v(6);
      for (std::size_t j = 0; j < 6; ++j) v[j] = std::exp(-0.5 * std::pow((static_cast<double>(j) - c) / 0.8, 2)) + 1e-3;
      steps.push_back(normalize(v));
      c = std::min(4.5, c + 0.1);
    }
    out.emplace_back("s" + std::to_string(i), true, std::move(steps));
  }
  return out;
}

CastConfig tiny() {
  CastConfig c;
  c.features.window = 2;
  c.head_dim = 4;
  return c;
}

}  // namespace

TEST(LearningRate, WarmupThenConstant) {
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.warmup = 10;
  EXPECT_NEAR(learning_rate(tc, 0), 1e-4, 1e-15);
  EXPECT_NEAR(learning_rate(tc, 9), 1e-3, 1e-15);
  EXPECT_NEAR(learning_rate(tc, 500), 1e-3, 1e-15);
}

TEST(ClipGradient, ScalesToMaxNorm) {
  std::vector<double> g = {3.0, 4.0};
  EXPECT_DOUBLE_EQ(clip_gradient(g, 1.0), 5.0);
  EXPECT_NEAR(g[0], 0.6, 1e-15);
  EXPECT_NEAR(g[1], 0.8, 1e-15);
  std::vector<double> small = {0.1, 0.1};
  clip_gradient(small, 1.0);
  EXPECT_EQ(small[0], 0.1);
}

TEST(AdamW, FirstStepMovesBySignedLearningRate) {
  TrainConfig tc;
  tc.weight_decay = 0.0;
  AdamW opt(2, tc, {true, true});
  std::vector<double> x = {1.0, -1.0}, g = {0.5, -2.0};
  opt.step(x, g, 0.1);
  EXPECT_NEAR(x[0], 0.9, 1e-7);
  EXPECT_NEAR(x[1], -0.9, 1e-7);
}

TEST(AdamW, DecoupledDecaySkipsMaskedParameters) {
  TrainConfig tc;
  tc.weight_decay = 0.5;
  AdamW opt(2, tc, {true, false});
  std::vector<double> x = {1.0, 1.0}, g = {0.0, 0.0};
  opt.step(x, g, 0.1);
  EXPECT_NEAR(x[0], 1.0 - 0.1 * 0.5, 1e-12);
  EXPECT_EQ(x[1], 1.0);
}

TEST(Train, SeedFixedGivesBitIdenticalParameters) {
  const auto tr = drifting(6, 1), va = drifting(2, 2);
  TrainConfig tc;
  tc.steps = 15;
  tc.warmup = 2;
  tc.eval_every = 5;
  tc.block_len = 8;
  tc.lr = 1e-2;
  const auto a = train(tiny(), tr, va, tc, 7);
  const auto b = train(tiny(), tr, va, tc, 7);
  EXPECT_TRUE(std::equal(a.model.params().begin(), a.model.params().end(), b.model.params().begin()));
  EXPECT_EQ(a.log.best_step, b.log.best_step);
  EXPECT_FALSE(a.log.entries.empty());
}

TEST(Train, ConstantSeriesReachesPersistenceLevel) {
  std::vector<SimplexSeries> tr, va;
  for (int i = 0; i < 4; ++i) {
    const Dist p({0.1 + 0.05 * i, 0.3, 0.6 - 0.05 * i});
    tr.emplace_back("t" + std::to_string(i), true, std::vector<Dist>(12, p));
    va.emplace_back("v" + std::to_string(i), true, std::vector<Dist>(12, p));
  }
  TrainConfig tc;
  tc.steps = 40;
  tc.warmup = 5;
  tc.lr = 1e-2;
  tc.eval_every = 10;
  const auto res = train(tiny(), tr, va, tc, 3);
  const MetricMeans persist = evaluate_offline(Persistence{}, va);
  EXPECT_LE(res.log.best_val_kl, persist.kl + 1e-6);
}

TEST(Train, ImprovesOverInitialization) {
  const auto tr = drifting(8, 3), va = drifting(3, 4);
  TrainConfig tc;
  tc.steps = 150;
  tc.warmup = 10;
  tc.lr = 1e-2;
  tc.eval_every = 25;
  tc.block_len = 0;
  const auto res = train(tiny(), tr, va, tc, 1);
  EXPECT_LT(res.log.best_val_kl, res.log.entries.front().val_kl);
}

TEST(Train, EmptySplitsAreRejected) {
  const auto tr = drifting(2, 1);
  EXPECT_THROW(train(tiny(), tr, {}, TrainConfig{}, 0), Error);
  EXPECT_THROW(train(tiny(), {}, tr, TrainConfig{}, 0), Error);
}
