#include <gtest/gtest.h>

#include "cast/checks.hpp"
#include "cast/synthetic.hpp"
#include "cast/theory.hpp"

using namespace cast;

TEST(Scenario, DefaultShape) {
  const auto s = default_scenario();
  ASSERT_EQ(s.p_star.size(), 21u);
  EXPECT_EQ(s.p_star[0], 0.0);
  EXPECT_EQ(s.p_star[20], 0.0);
  EXPECT_GT(s.p_star[7], s.p_star[10]);  // two peaks with a dip between
  EXPECT_GT(s.p_star[13], s.p_star[10]);
  const auto u = s.successors();
  EXPECT_GT(l1(u[0], u[1]), 0.1);
  EXPECT_NEAR(mean_support(u[0]) - mean_support(s.p_star), 0.2, 1e-12);
  EXPECT_NEAR(mean_support(u[1]) - mean_support(s.p_star), -0.2, 1e-12);
}

TEST(Scenario, FixedSummaryEqualsWeightedJs) {
  const auto s = default_scenario();
  const auto r = fixed_summary_optimum(s);
  EXPECT_NEAR(r.numeric_min, r.excess, 1e-6);
  EXPECT_GT(r.excess, 1e-3);
  std::vector<Dist> mix(2, r.q_star);
  double risk = 0.0;
  const auto u = s.successors();
  for (std::size_t z = 0; z < 2; ++z) risk += 0.5 * kl_raw(u[z].values(), mix[z].values());
  EXPECT_NEAR(risk, r.excess, 1e-12);
}

TEST(Scenario, OracleReproducesSuccessors) {
  Philox rng(8, 0);
  for (int i = 0; i < 50; ++i) {
    const auto s = random_scenario(rng, 3 + rng.below(10), 1 + rng.below(4));
    const auto o = cast_oracle(s);
    const auto u = s.successors();
    for (std::size_t z = 0; z < s.regimes(); ++z) ASSERT_LT(l1(o[z], u[z]), 1e-12);
  }
}

TEST(Scenario, AnchorOnlyRespectsPinsker) {
  const auto s = default_scenario();
  // Only the left-shifted state is stored: the left regime's successor lies in the hull, the right one does not.
  std::vector<Dist> anchors = {s.preludes[0][1]};
  const auto r = anchor_only_optimum(s, anchors);
  EXPECT_GE(r.excess + 1e-12, r.pinsker_bound);
  EXPECT_LE(r.max_start_spread, 1e-6);
  EXPECT_GT(r.delta[0], 0.05);
  EXPECT_LT(r.delta[1], 1e-9);
  EXPECT_LT(r.regime_kl[1], 1e-8);
}

TEST(AliasingDataset, OnlyFinalTransitionScored) {
  const auto s = default_scenario();
  const auto ds = build_aliasing_dataset(s, 40, 0.1, 7, "seq");
  ASSERT_EQ(ds.series.size(), 40u);
  std::size_t ones = 0;
  for (std::size_t i = 0; i < ds.series.size(); ++i) {
    const auto& q = ds.series[i];
    ASSERT_EQ(q.length(), 4u);
    EXPECT_EQ(q.loss_mask(), (std::vector<bool>{false, false, true}));
    EXPECT_EQ(q[2].vec(), s.p_star.vec());
    ones += ds.regime[i];
  }
  EXPECT_GT(ones, 8u);
  EXPECT_LT(ones, 32u);
  EXPECT_EQ(ds.series[3].id(), "seq-03");
  const auto again = build_aliasing_dataset(s, 40, 0.1, 7, "seq");
  EXPECT_EQ(again.series[17][3].vec(), ds.series[17][3].vec());

  AliasingScenario bad = s;
  bad.preludes[1] = bad.preludes[0];
  EXPECT_THROW(build_aliasing_dataset(bad, 10, 0.0, 1), Error);
}

TEST(TheoryChecks, AllPassAtReducedScale) {
  for (const auto& c : run_theory_checks(3, 200)) EXPECT_TRUE(c.passed) << c.name << " worst " << c.worst;
}

TEST(Approximation, BoundHoldsAndIsReasonablyTight) {
  Philox rng(12, 0);
  double worst_ratio = 0.0;
  for (int i = 0; i < 500; ++i) {
    const auto c = approximation_case(rng, 2 + rng.below(12), 0.5);
    ASSERT_LE(c.lhs, c.rhs + 1e-12);
    if (c.rhs > 0.0) worst_ratio = std::max(worst_ratio, c.lhs / c.rhs);
  }
  EXPECT_GT(worst_ratio, 0.05);
}

TEST(Retrieval, ErrorShrinksWithMemory) {
  const auto r = retrieval_consistency_check(4);
  EXPECT_EQ(r.violations, 0u);
  ASSERT_GE(r.max_distance.size(), 2u);
  EXPECT_LT(r.max_distance.back(), r.max_distance.front());
}

TEST(SyntheticExperiment, ShortRunOrdersMethods) {
  SyntheticOptions o;
  o.n_train = 256;
  o.n_val = 64;
  o.train.steps = 300;
  const std::uint64_t seeds[] = {0};
  const auto rep = run_synthetic_experiment(default_scenario(), seeds, o);
  EXPECT_NEAR(rep.row("fixed_summary_optimum").kl.mean, rep.js_weighted_value, 1e-6);  // metrics smooth with eps
  EXPECT_LT(rep.row("cast_oracle").kl.mean, 1e-12);
  EXPECT_GE(rep.row("trained_current_only").kl.mean, rep.js_weighted_value - 1e-6);
  EXPECT_LT(rep.row("trained_cast").kl.mean, rep.row("trained_current_only").kl.mean);
}
