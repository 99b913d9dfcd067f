#include <gtest/gtest.h>

#include "cast/baselines.hpp"
#include "fixtures.hpp"

using namespace cast;

TEST(Persistence, ReturnsLastObservation) {
  const auto data = fixture::random_walks(1, 1, 10, 5);
  const Persistence p;
  const auto& steps = data[0].steps();
  EXPECT_EQ(p.predict_next(std::span<const Dist>(steps).first(4)).vec(), steps[3].vec());
  const std::size_t pos[] = {0, 5, 8};
  const auto out = p.predict_positions(steps, pos);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(out[i].vec(), steps[pos[i]].vec());
  const auto roll = p.rollout(std::span<const Dist>(steps).first(3), 4);
  ASSERT_EQ(roll.size(), 4u);
  for (const auto& r : roll) EXPECT_EQ(r.vec(), steps[2].vec());
  EXPECT_EQ(fixture::code_of([&] { p.predict_next({}); }), ErrorCode::EmptyPrefix);
}

TEST(Analog, ExactMatchWithSingleNeighbourReturnsStoredSuccessor) {
  const auto data = fixture::random_walks(2, 6, 30, 4);
  const auto bank = build_analog_bank(data, 3, 1);
  EXPECT_EQ(bank.windows.size(), 6u * (30 - 3));
  const auto& steps = data[2].steps();
  const auto pred = analog_predict(std::span<const Dist>(steps).first(11), bank);
  EXPECT_EQ(pred.vec(), steps[11].vec());
}

TEST(Analog, WindowPadsWithFirstStepAndBankThins) {
  const auto data = fixture::random_walks(3, 4, 50, 3);
  const auto w = analog_window(std::span<const Dist>(data[0].steps()).first(2), 4);
  ASSERT_EQ(w.size(), 12u);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(w[j], data[0][0][j]);
    EXPECT_EQ(w[3 + j], data[0][0][j]);
    EXPECT_EQ(w[6 + j], data[0][0][j]);
    EXPECT_EQ(w[9 + j], data[0][1][j]);
  }
  EXPECT_EQ(build_analog_bank(data, 4, 8, 25).windows.size(), 25u);
  const auto pred = analog_predict(data[1].steps(), build_analog_bank(data));
  EXPECT_NEAR(pred.sum(), 1.0, 1e-12);
  const AnalogBank empty;
  EXPECT_EQ(fixture::code_of([&] { analog_predict(data[0].steps(), empty); }), ErrorCode::EmptyBank);
}

TEST(IlrVar, RecoversKnownLinearDynamics) {
  // z_{t+1} = c + A z_t + noise in ilr coordinates, D = 3.
  Philox rng(4, 0);
  std::normal_distribution<double> g(0.0, 0.1);
  const double c[2] = {0.2, -0.1}, a[2][2] = {{0.5, 0.1}, {-0.2, 0.3}};
  std::vector<SimplexSeries> data;
  for (int s = 0; s < 50; ++s) {
    std::vector<double> z = {g(rng), g(rng)};
    std::vector<Dist> steps;
    for (int t = 0; t < 400; ++t) {
      steps.push_back(ilr_inverse(z, 3));
      const std::vector<double> prev = to_ilr(steps.back());
      for (int i = 0; i < 2; ++i) z[i] = c[i] + a[i][0] * prev[0] + a[i][1] * prev[1] + g(rng);
    }
    data.emplace_back("v" + std::to_string(s), false, std::move(steps));
  }
  const auto m = ilr_var_fit(data);
  ASSERT_FALSE(m.fallback);
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(m.coef(0, i), c[i], 0.02);
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(m.coef(1 + j, i), a[i][j], 0.03);
  }
}

TEST(IlrVar, FallsBackToPersistenceOnTooLittleData) {
  const auto data = fixture::random_walks(5, 1, 3, 6);
  const auto m = ilr_var_fit(data);
  EXPECT_TRUE(m.fallback);
  EXPECT_EQ(ilr_var_predict(data[0].steps(), m).vec(), data[0][2].vec());
}

TEST(IlrEts, ConstantSeriesAndSmoothingChoice) {
  const Dist p({0.2, 0.3, 0.5});
  std::vector<SimplexSeries> flat{SimplexSeries("c", false, std::vector<Dist>(20, p))};
  const auto m = ets_fit(flat);
  EXPECT_LT(l1(ets_predict(flat[0].steps(), m), p), 1e-5);  // ilr smoothing eps

  // A slow random walk wants heavy smoothing weight on the newest value; iid noise wants little.
  const auto walk = fixture::random_walks(6, 10, 100, 4, false, 0.05);
  const auto mw = ets_fit(walk);
  for (double x : mw.alpha) EXPECT_GE(x, 0.6);
  const auto iid = fixture::random_walks(7, 10, 100, 4, false, 1.0);
  const auto mi = ets_fit(iid);
  for (double x : mi.alpha) EXPECT_LE(x, 0.2);
}

TEST(IlrEts, PositionsMatchStepwisePrediction) {
  const auto data = fixture::random_walks(8, 3, 40, 5);
  const IlrEts f(ets_fit(data));
  const std::size_t pos[] = {0, 3, 4, 20, 38};
  const auto fast = f.predict_positions(data[1].steps(), pos);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto slow = f.predict_next(std::span<const Dist>(data[1].steps()).first(pos[i] + 1));
    EXPECT_LT(l1(fast[i], slow), 1e-12);
  }
}

TEST(Forecaster, NamesAndRolloutLength) {
  const auto data = fixture::random_walks(9, 4, 30, 4);
  const Analog an(build_analog_bank(data));
  const IlrVar var(ilr_var_fit(data));
  const IlrEts ets(ets_fit(data));
  EXPECT_EQ(an.name(), "analog_successor");
  EXPECT_EQ(var.name(), "ilr_var");
  EXPECT_EQ(ets.name(), "compositional_ets");
  for (const Forecaster* f : std::initializer_list<const Forecaster*>{&an, &var, &ets}) {
    const auto r = f->rollout(std::span<const Dist>(data[0].steps()).first(5), 7);
    ASSERT_EQ(r.size(), 7u);
    for (const auto& p : r) EXPECT_NEAR(p.sum(), 1.0, 1e-9);
    EXPECT_THROW(f->rollout(std::span<const Dist>(data[0].steps()).first(5), 0), Error);
  }
}
