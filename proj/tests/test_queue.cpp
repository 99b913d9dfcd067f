#include <gtest/gtest.h>

#include "cast/queue_sim.hpp"
#include "oracles.hpp"

using namespace cast;

namespace {

QueueConfig deterministic_2_1(std::size_t n) {
  QueueConfig c;
  c.arrival = TimeDist::fixed(2.0);
  c.service = TimeDist::fixed(1.0);
  c.n_arrivals = n;
  c.n_replications = 1;
  return c;
}

}  // namespace

TEST(Lindley, DeterministicExampleAlternates) {
  const auto c = deterministic_2_1(6);
  const auto ev = simulate_replication(c, 0);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_DOUBLE_EQ(ev.arrivals[i], 2.0 * static_cast<double>(i + 1));
    EXPECT_DOUBLE_EQ(ev.departures[i], ev.arrivals[i] + 1.0);
  }
  const auto sim = simulate_system(c);
  ASSERT_EQ(sim.histograms.size(), 14u);  // grid 0..13, last departure at 13
  for (std::size_t g = 0; g < sim.histograms.size(); ++g) {
    const std::size_t expect = (g >= 2 && g % 2 == 0) ? 1 : 0;
    EXPECT_EQ(sim.histograms[g][expect], 1.0) << "t=" << g;
  }
  EXPECT_EQ(oracle::event_calendar_occupancy(c, 0, 14), occupancy_on_grid(ev, 1.0, 14));
}

TEST(Lindley, MatchesEventCalendarOnRandomTinyInstances) {
  Philox rng(77, 0);
  const QueuePriors pr;
  for (int i = 0; i < 200; ++i) {
    const Section sec = i % 2 ? Section::nonhomogeneous : Section::homogeneous;
    auto c = sample_config(sec, rng, pr).config;
    c.n_arrivals = 1 + rng.below(20);
    c.dt = 0.25 + rng.uniform();
    c.seed = rng.next_u64();
    const auto ev = simulate_replication(c, 3);
    const auto n_grid = static_cast<std::size_t>(std::ceil(ev.departures.back() / c.dt)) + 2;
    ASSERT_EQ(occupancy_on_grid(ev, c.dt, n_grid), oracle::event_calendar_occupancy(c, 3, n_grid)) << "instance " << i;
  }
}

TEST(SimulateSystem, InstantServiceConcentratesOnZeroAndOne) {
  QueueConfig c;
  c.arrival = TimeDist::exponential(1.0);
  c.service = TimeDist::fixed(1e-9);
  c.n_arrivals = 200;
  c.n_replications = 50;
  c.seed = 4;
  const auto sim = simulate_system(c);
  EXPECT_EQ(sim.width, 2u);
  for (const auto& h : sim.histograms) {
    double s = 0.0;
    for (double x : h) s += x;
    ASSERT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SimulateSystem, MM1LateWindowMatchesGeometricLaw) {
  QueueConfig c;
  c.arrival = TimeDist::exponential(1.0);
  c.service = TimeDist::exponential(0.5);
  c.n_replications = 2000;
  c.seed = 5;
  const auto sim = simulate_system(c);
  std::vector<double> avg(sim.width, 0.0);
  std::size_t n = 0;
  for (std::size_t g = 200; g <= 400; ++g, ++n)
    for (std::size_t k = 0; k < sim.width; ++k) avg[k] += sim.histograms[g][k];
  double tv = 0.0, tail = 1.0;
  for (std::size_t k = 0; k < sim.width; ++k) {
    const double pk = 0.5 * std::pow(0.5, static_cast<double>(k));
    tail -= pk;
    tv += std::abs(avg[k] / static_cast<double>(n) - pk);
  }
  tv = 0.5 * (tv + tail);
  EXPECT_LT(tv, 0.02);
}

TEST(SampleConfig, UtilizationBandAndFamilies) {
  Philox rng(1, 0);
  const QueuePriors pr;
  std::size_t attempts = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto d = sample_config(Section::nonhomogeneous, rng, pr);
    attempts += d.attempts;
    ASSERT_GE(d.config.utilization(), 0.26);
    ASSERT_LE(d.config.utilization(), 0.6);
    ASSERT_NE(d.config.arrival.family, Family::weibull);
    ASSERT_NE(d.config.service.family, Family::weibull);
    ASSERT_TRUE(d.config.modulation.has_value());
  }
  EXPECT_LE(static_cast<double>(attempts) / 1000.0, 5.0);  // acceptance rate of at least 20%
  Philox a(3, 0), b(3, 0);
  for (int i = 0; i < 20; ++i) {
    const auto x = sample_config(Section::homogeneous, a).config;
    const auto y = sample_config(Section::homogeneous, b).config;
    ASSERT_EQ(x.arrival.mean, y.arrival.mean);
    ASSERT_EQ(x.service.shape, y.service.shape);
    ASSERT_FALSE(x.modulation.has_value());
  }
  QueuePriors impossible;
  impossible.util_lo = 0.99;
  impossible.util_hi = 1.0;
  impossible.service_ratio_hi = 0.5;
  impossible.max_attempts = 50;
  EXPECT_THROW(sample_config(Section::homogeneous, rng, impossible), Error);
}

TEST(SampleTime, StrictlyPositiveWithRequestedMean) {
  Philox rng(2, 0);
  const QueuePriors pr;
  for (auto f : {Family::gamma, Family::erlang, Family::lognormal, Family::two_normal_mixture,
                 Family::hyperexponential, Family::uniform, Family::weibull}) {
    const auto td = sample_time_dist(f, 1.3, rng, pr);
    double sum = 0.0;
    const int n = 40000;
    for (int i = 0; i < n; ++i) {
      const double x = sample(td, rng);
      ASSERT_GT(x, 0.0);
      sum += x;
    }
    EXPECT_NEAR(sum / n, 1.3, 0.05) << to_string(f);
  }
}

TEST(Modulation, ArrivalCountsShowConfiguredPeriod) {
  QueueConfig c;
  c.arrival = TimeDist::exponential(0.2);
  c.service = TimeDist::fixed(0.01);
  c.modulation = Modulation{0.6, 100.0, 0.0};
  c.n_arrivals = 20000;
  c.seed = 9;
  const auto ev = simulate_replication(c, 0);
  const double bin = 5.0;
  std::vector<double> counts(static_cast<std::size_t>(ev.arrivals.back() / bin) + 1, 0.0);
  for (double a : ev.arrivals) counts[static_cast<std::size_t>(a / bin)] += 1.0;
  counts.pop_back();
  double mean = 0.0;
  for (double x : counts) mean += x;
  mean /= static_cast<double>(counts.size());
  auto acf = [&](std::size_t lag) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      den += (counts[i] - mean) * (counts[i] - mean);
      if (i + lag < counts.size()) num += (counts[i] - mean) * (counts[i + lag] - mean);
    }
    return num / den;
  };
  EXPECT_GT(acf(20), 0.2);
  EXPECT_LT(acf(10), -0.2);
}

TEST(SimulateSection, ReproducibleAndPadded) {
  QueueSectionOptions o;
  o.n_systems = 12;
  o.n_arrivals = 60;
  o.n_replications = 20;
  o.seed = 3;
  o.workers = 3;
  const auto a = simulate_section(o);
  o.workers = 1;
  const auto b = simulate_section(o);
  ASSERT_EQ(a.systems.size(), 12u);
  for (std::size_t i = 0; i < a.systems.size(); ++i) {
    ASSERT_EQ(a.systems[i].series.dim(), a.dim);
    ASSERT_EQ(a.systems[i].series.length(), b.systems[i].series.length());
    for (std::size_t t = 0; t < a.systems[i].series.length(); ++t)
      ASSERT_EQ(a.systems[i].series[t].vec(), b.systems[i].series[t].vec());
  }
  EXPECT_EQ(a.systems[0].id, "nonhom-00000");
}

TEST(Split, TenThousandSystemsGiveExactCounts) {
  Philox rng(5, 0);
  std::vector<std::size_t> widths;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < 10000; ++i) {
    widths.push_back(2 + rng.below(60));
    ids.push_back(system_id(Section::homogeneous, i));
  }
  const auto m = split_systems(widths, ids);
  EXPECT_EQ(m.count(SplitLabel::train), 7000u);
  EXPECT_EQ(m.count(SplitLabel::val), 1000u);
  EXPECT_EQ(m.count(SplitLabel::test), 2000u);
}

TEST(Split, StratifiedWithinOneSystemPerDecile) {
  for (std::size_t n : {10u, 37u, 50u, 123u, 500u}) {
    std::vector<std::size_t> widths;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
      widths.push_back((i * 7919) % 41);
      ids.push_back(system_id(Section::nonhomogeneous, i));
    }
    const auto m = split_systems(widths, ids);
    ASSERT_EQ(m.labels.size(), n);
    for (std::size_t dec = 0; dec < 10; ++dec) {
      double size = 0.0, train = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (m.decile[i] == dec) {
          size += 1.0;
          train += m.labels[i] == SplitLabel::train;
        }
      EXPECT_LE(std::abs(train - 0.7 * size), 1.0) << "n=" << n << " decile " << dec;
    }
    EXPECT_EQ(m.count(SplitLabel::train), static_cast<std::size_t>(std::floor(0.7 * n + 0.5 + 1e-9)));
  }
  EXPECT_THROW(split_systems(std::vector<std::size_t>(9, 3), std::vector<std::string>(9, "x")), Error);
}
