#include <gtest/gtest.h>

#include <cmath>

#include "cast/eval.hpp"
#include "fixtures.hpp"

using namespace cast;

TEST(Offline, PersistenceOnAlternatingSeriesMatchesClosedForm) {
  const Dist a({0.7, 0.2, 0.1}), b({0.1, 0.3, 0.6});
  std::vector<Dist> steps;
  for (int t = 0; t < 11; ++t) steps.push_back(t % 2 ? b : a);
  const std::vector<SimplexSeries> data{SimplexSeries("alt", true, steps)};
  const auto m = evaluate_offline(Persistence(), data);
  EXPECT_EQ(m.count, 10u);
  EXPECT_NEAR(m.kl, 0.5 * (kl(a, b) + kl(b, a)), 1e-12);
  EXPECT_NEAR(m.jsd, jsd(a, b), 1e-12);
  EXPECT_NEAR(m.l1, l1(a, b), 1e-12);
  ASSERT_TRUE(m.w1.has_value());
  EXPECT_NEAR(*m.w1, w1_ordered(a, b), 1e-12);
}

TEST(Offline, MaskAndCaps) {
  auto data = fixture::random_walks(1, 5, 20, 4, false);
  data[0] = data[0].with_mask(std::vector<bool>(19, false));
  const auto m = evaluate_offline(Persistence(), data);
  EXPECT_EQ(m.count, 4u * 19);
  EXPECT_FALSE(m.w1.has_value());
  OfflineOptions o;
  o.max_sequences = 3;
  o.max_positions_per_sequence = 5;
  EXPECT_EQ(evaluate_offline(Persistence(), data, o).count, 2u * 5);  // s100 is first by id and unscored
  for (auto& s : data) s = s.with_mask(std::vector<bool>(19, false));
  EXPECT_EQ(fixture::code_of([&] { evaluate_offline(Persistence(), data); }), ErrorCode::NoScoredPositions);
}

TEST(Rollout, HorizonOneFinalStepEqualsOfflineAtContextEnd) {
  const auto data = fixture::random_walks(2, 4, 30, 5);
  const IlrEts f(ets_fit(data));
  RolloutConfig rc;
  rc.context_len = 12;
  rc.horizon = 1;
  rc.final_step_only = true;
  const auto r = evaluate_rollout(f, data, rc);
  EXPECT_EQ(r.examples, 4u);
  MetricAccumulator acc(true, kDefaultEps);
  for (const auto& s : data) acc.add(s[12], f.predict_next(std::span<const Dist>(s.steps()).first(12)));
  EXPECT_NEAR(r.means.kl, acc.means().kl, 1e-12);
}

TEST(Rollout, SkipsShortSequences) {
  auto data = fixture::random_walks(3, 3, 30, 4);
  const auto shorter = fixture::random_walks(4, 2, 10, 4);
  data.insert(data.end(), shorter.begin(), shorter.end());
  RolloutConfig rc;
  rc.context_len = 16;
  rc.horizon = 8;
  rc.max_examples = 2;
  const auto r = evaluate_rollout(Persistence(), data, rc);
  EXPECT_EQ(r.skipped, 2u);
  EXPECT_EQ(r.examples, 2u);
  EXPECT_EQ(r.means.count, 16u);
  rc.context_len = 40;
  EXPECT_EQ(fixture::code_of([&] { evaluate_rollout(Persistence(), data, rc); }), ErrorCode::NoEligibleSequences);
}

TEST(Ranks, TiesMissingAndTopOne) {
  const double nan = std::nan("");
  const auto rm = rank_aggregate({"a", "b", "c"}, {"x", "y", "z"},
                                 {{0.1, 0.5, nan}, {0.2, 0.5, 0.3}, {0.3, 0.2, 0.1}});
  EXPECT_EQ(rm.ranks[0][0], 1.0);
  EXPECT_EQ(rm.ranks[2][0], 3.0);
  EXPECT_EQ(rm.ranks[0][1], 2.5);
  EXPECT_EQ(rm.ranks[1][1], 2.5);
  EXPECT_TRUE(std::isnan(rm.ranks[0][2]));
  EXPECT_EQ(rm.ranks[2][2], 1.0);
  EXPECT_DOUBLE_EQ(rm.average[0], 1.75);
  EXPECT_DOUBLE_EQ(rm.average[1], (2.0 + 2.5 + 2.0) / 3.0);
  EXPECT_EQ(rm.top1, (std::vector<std::size_t>{1, 0, 2}));
  const auto tie = rank_aggregate({"a", "b"}, {"x"}, {{1.0}, {1.0}});
  EXPECT_EQ(tie.top1, (std::vector<std::size_t>{1, 1}));
  EXPECT_EQ(tie.ranks[0][0], 1.5);
}

TEST(Diagnostic, IdenticalSequencesAreDegenerate) {
  const auto one = fixture::random_walks(5, 1, 25, 6);
  std::vector<SimplexSeries> data;
  for (int i = 0; i < 4; ++i) data.emplace_back("c" + std::to_string(i), true, one[0].steps());
  DiagnosticConfig cfg;
  cfg.n_samples = 100;
  const auto r = aliasing_diagnostic(data, cfg);
  EXPECT_EQ(r.samples, 100u);
  EXPECT_EQ(r.neighbor_jsd_median, 0.0);
  EXPECT_EQ(r.successor_jsd_median, 0.0);
  EXPECT_EQ(r.ratio, 0.0);
  EXPECT_EQ(r.evidence, "weak");
  EXPECT_FALSE(r.history_better_rate.has_value());
  EXPECT_EQ(r.ties, 100u);
}

TEST(Diagnostic, AliasedDatasetFavoursHistory) {
  const auto ds = build_aliasing_dataset(default_scenario(), 200, 0.0, 3);
  const auto r = aliasing_diagnostic(ds.series);
  ASSERT_TRUE(r.history_better_rate.has_value());
  EXPECT_GT(*r.history_better_rate, 0.95);
  const auto again = aliasing_diagnostic(ds.series);
  EXPECT_EQ(again.successor_jsd_median, r.successor_jsd_median);
  EXPECT_EQ(fixture::code_of([&] { aliasing_diagnostic({ds.series[0]}); }), ErrorCode::TooFewSequences);
}

TEST(Diagnostic, OrderedDescriptorOfPointMass) {
  const auto d = ordered_descriptor(Dist({0, 0, 1, 0}));
  EXPECT_NEAR(d[1], 0.0, 1e-12);  // sd
  EXPECT_EQ(d[2], d[3]);
  EXPECT_EQ(d[3], d[4]);
}

TEST(SeedStudy, MeanAndSampleSd) {
  const std::uint64_t seeds[] = {1, 2, 3};
  const auto rows = seed_study(
      [](std::uint64_t s) {
        return std::vector<std::pair<std::string, double>>{{"x", static_cast<double>(s)}, {"y", 2.0}};
      },
      seeds);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].stats.mean, 2.0);
  EXPECT_DOUBLE_EQ(rows[0].stats.sd, 1.0);
  EXPECT_EQ(rows[1].stats.sd, 0.0);
  EXPECT_THROW(seed_study([](std::uint64_t) { return std::vector<std::pair<std::string, double>>{}; },
                          std::span<const std::uint64_t>(seeds, 1)),
               Error);
}
