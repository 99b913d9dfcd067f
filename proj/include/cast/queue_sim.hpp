#pragma once

#include <algorithm>
#include <array>
#include <numeric>
#include <span>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "cast/parallel.hpp"
#include "cast/rng.hpp"
#include "cast/simplex.hpp"

namespace cast {

enum class Family { gamma, erlang, lognormal, two_normal_mixture, hyperexponential, uniform, weibull, deterministic };

inline std::string_view to_string(Family f) {
  switch (f) {
    case Family::gamma: return "gamma";
    case Family::erlang: return "erlang";
    case Family::lognormal: return "lognormal";
    case Family::two_normal_mixture: return "two_normal_mixture";
    case Family::hyperexponential: return "hyperexponential";
    case Family::uniform: return "uniform";
    case Family::weibull: return "weibull";
    case Family::deterministic: return "deterministic";
  }
  return "gamma";
}

inline Family parse_family(std::string_view s) {
  for (int i = 0; i <= static_cast<int>(Family::deterministic); ++i)
    if (to_string(static_cast<Family>(i)) == s) return static_cast<Family>(i);
  fail(ErrorCode::InvalidArgument, "unknown distribution family '" + std::string(s) + "'");
}

/// A positive-valued distribution given by its mean and one shape parameter.
///   gamma: shape k | erlang: integer stages | lognormal: sigma | two_normal_mixture: packed (see sample)
///   hyperexponential: squared CV | uniform: half-width / mean | weibull: shape
struct TimeDist {
  Family family = Family::gamma;
  double mean = 1.0;
  double shape = 1.0;
  double weight = 0.5;  // two_normal_mixture: probability of the low component
  double low = 0.5;     // two_normal_mixture: low component mean as a fraction of `mean`
  double cv = 0.2;      // two_normal_mixture: per-component coefficient of variation

  static TimeDist exponential(double mean) { return {Family::erlang, mean, 1.0}; }
  static TimeDist fixed(double value) { return {Family::deterministic, value, 0.0}; }
};

/// Draws one strictly positive sample; `redraws` counts rejected nonpositive normal draws.
template <class Rng>
double sample(const TimeDist& t, Rng& rng, std::size_t* redraws = nullptr) {
  const double m = t.mean;
  switch (t.family) {
    case Family::deterministic: return m;
    case Family::gamma:
    case Family::erlang: {
      std::gamma_distribution<double> g(t.shape, m / t.shape);
      return g(rng);
    }
    case Family::lognormal: {
      std::lognormal_distribution<double> g(std::log(m) - 0.5 * t.shape * t.shape, t.shape);
      return g(rng);
    }
    case Family::two_normal_mixture: {
      const double m1 = t.low * m;
      const double m2 = (m - t.weight * m1) / (1.0 - t.weight);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const double mu = u(rng) < t.weight ? m1 : m2;
      std::normal_distribution<double> g(mu, t.cv * mu);
      for (;;) {
        const double x = g(rng);
        if (x > 0.0) return x;
        if (redraws) ++*redraws;
      }
    }
    case Family::hyperexponential: {
      const double c2 = t.shape;
      const double p = 0.5 * (1.0 + std::sqrt((c2 - 1.0) / (c2 + 1.0)));
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const double rate = u(rng) < p ? 2.0 * p / m : 2.0 * (1.0 - p) / m;
      std::exponential_distribution<double> e(rate);
      return e(rng);
    }
    case Family::uniform: {
      std::uniform_real_distribution<double> u(m * (1.0 - t.shape), m * (1.0 + t.shape));
      return u(rng);
    }
    case Family::weibull: {
      std::weibull_distribution<double> w(t.shape, m / std::tgamma(1.0 + 1.0 / t.shape));
      return w(rng);
    }
  }
  return m;
}

struct Modulation {
  double amplitude = 0.0;
  double period = 100.0;
  double phase = 0.0;
  /// Arrival-rate multiplier at time t; inter-arrival draws are divided by it.
  double rate_scale(double t) const { return 1.0 + amplitude * std::sin(2.0 * std::numbers::pi * t / period + phase); }
};

enum class Section { homogeneous, nonhomogeneous };

inline std::string_view to_string(Section s) { return s == Section::homogeneous ? "homogeneous" : "nonhomogeneous"; }
inline Section parse_section(std::string_view s) {
  if (s == "homogeneous") return Section::homogeneous;
  if (s == "nonhomogeneous") return Section::nonhomogeneous;
  fail(ErrorCode::InvalidArgument, "unknown section '" + std::string(s) + "'");
}

struct QueueConfig {
  TimeDist arrival;
  TimeDist service;
  std::optional<Modulation> modulation;
  std::size_t n_arrivals = 500;
  std::size_t n_replications = 200;
  double dt = 1.0;
  std::uint64_t seed = 0;

  double utilization() const { return service.mean / arrival.mean; }
};

/// Parameter priors used by sample_config; written into the manifest.
struct QueuePriors {
  double arrival_mean_lo = 0.8, arrival_mean_hi = 1.5;
  double service_ratio_lo = 0.1, service_ratio_hi = 1.0;  // service mean / arrival mean before rejection
  double util_lo = 0.26, util_hi = 0.6;
  double gamma_shape_lo = 0.5, gamma_shape_hi = 4.0;
  int erlang_max = 5;
  double lognormal_sigma_lo = 0.25, lognormal_sigma_hi = 1.0;
  double mix_weight_lo = 0.2, mix_weight_hi = 0.8;
  double mix_low_lo = 0.3, mix_low_hi = 0.8;
  double mix_cv_lo = 0.1, mix_cv_hi = 0.3;
  double hyper_c2_lo = 1.5, hyper_c2_hi = 4.0;
  double uniform_half_lo = 0.1, uniform_half_hi = 0.9;
  double weibull_shape_lo = 0.7, weibull_shape_hi = 3.0;
  double amplitude_lo = 0.2, amplitude_hi = 0.6;
  double period_lo = 50.0, period_hi = 200.0;
  std::size_t max_attempts = 10000;
};

inline std::vector<Family> section_families(Section s) {
  std::vector<Family> f = {Family::gamma,   Family::erlang,  Family::lognormal, Family::two_normal_mixture,
                           Family::hyperexponential, Family::uniform, Family::weibull};
  if (s == Section::nonhomogeneous) f.pop_back();
  return f;
}

inline TimeDist sample_time_dist(Family f, double mean, Philox& rng, const QueuePriors& pr) {
  auto u = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  TimeDist t;
  t.family = f;
  t.mean = mean;
  switch (f) {
    case Family::gamma: t.shape = u(pr.gamma_shape_lo, pr.gamma_shape_hi); break;
    case Family::erlang: t.shape = static_cast<double>(1 + rng.below(static_cast<std::uint64_t>(pr.erlang_max))); break;
    case Family::lognormal: t.shape = u(pr.lognormal_sigma_lo, pr.lognormal_sigma_hi); break;
    case Family::two_normal_mixture:
      t.weight = u(pr.mix_weight_lo, pr.mix_weight_hi);
      t.low = u(pr.mix_low_lo, pr.mix_low_hi);
      t.cv = u(pr.mix_cv_lo, pr.mix_cv_hi);
      t.shape = 0.0;
      break;
    case Family::hyperexponential: t.shape = u(pr.hyper_c2_lo, pr.hyper_c2_hi); break;
    case Family::uniform: t.shape = u(pr.uniform_half_lo, pr.uniform_half_hi); break;
    case Family::weibull: t.shape = u(pr.weibull_shape_lo, pr.weibull_shape_hi); break;
    case Family::deterministic: t.shape = 0.0; break;
  }
  return t;
}

struct ConfigDraw {
  QueueConfig config;
  std::size_t attempts = 0;
};

/// Family and parameter draw with rejection on the utilization band.
inline ConfigDraw sample_config(Section section, Philox& rng, const QueuePriors& pr = {}) {
  const auto fams = section_families(section);
  auto u = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  for (std::size_t attempt = 1; attempt <= pr.max_attempts; ++attempt) {
    const double am = u(pr.arrival_mean_lo, pr.arrival_mean_hi);
    const double sm = am * u(pr.service_ratio_lo, pr.service_ratio_hi);
    const Family fa = fams[rng.below(fams.size())];
    const Family fs = fams[rng.below(fams.size())];
    QueueConfig c;
    c.arrival = sample_time_dist(fa, am, rng, pr);
    c.service = sample_time_dist(fs, sm, rng, pr);
    if (section == Section::nonhomogeneous)
      c.modulation = Modulation{u(pr.amplitude_lo, pr.amplitude_hi), u(pr.period_lo, pr.period_hi),
                                u(0.0, 2.0 * std::numbers::pi)};
    const double util = c.utilization();
    if (util >= pr.util_lo && util <= pr.util_hi) return {c, attempt};
  }
  fail(ErrorCode::RejectionBudgetExceeded, "no configuration inside the utilization band");
}

struct ReplicationEvents {
  std::vector<double> arrivals;
  std::vector<double> departures;
};

/// FIFO single server: d_i = max(a_i, d_{i-1}) + s_i.
inline ReplicationEvents simulate_replication(const QueueConfig& c, std::uint64_t replication,
                                              std::size_t* redraws = nullptr) {
  Philox rng(c.seed, replication);
  ReplicationEvents ev;
  ev.arrivals.resize(c.n_arrivals);
  ev.departures.resize(c.n_arrivals);
  double t = 0.0, last = 0.0;
  for (std::size_t i = 0; i < c.n_arrivals; ++i) {
    double gap = sample(c.arrival, rng, redraws);
    if (c.modulation) gap /= c.modulation->rate_scale(t);
    t += gap;
    const double s = sample(c.service, rng, redraws);
    last = std::max(t, last) + s;
    ev.arrivals[i] = t;
    ev.departures[i] = last;
  }
  return ev;
}

/// L(g dt) = #{a_i <= g dt} - #{d_i <= g dt} for g = 0..n_grid-1.
inline std::vector<std::size_t> occupancy_on_grid(const ReplicationEvents& ev, double dt, std::size_t n_grid) {
  std::vector<std::size_t> out(n_grid);
  std::size_t ia = 0, id = 0;
  const std::size_t n = ev.arrivals.size();
  for (std::size_t g = 0; g < n_grid; ++g) {
    const double tau = static_cast<double>(g) * dt;
    while (ia < n && ev.arrivals[ia] <= tau) ++ia;
    while (id < n && ev.departures[id] <= tau) ++id;
    out[g] = ia - id;
  }
  return out;
}

struct SimulatedSystem {
  std::vector<std::vector<double>> histograms;  // per grid point, occupancy 0..width-1
  std::size_t width = 0;                        // max observed occupancy + 1
  std::size_t redraws = 0;
};

/// Across-replication occupancy distribution on the grid until the last departure.
inline SimulatedSystem simulate_system(const QueueConfig& c) {
  require(c.n_arrivals >= 1 && c.n_replications >= 1 && c.dt > 0.0, ErrorCode::InvalidArgument,
          "queue config needs arrivals, replications and dt > 0");
  std::vector<ReplicationEvents> reps(c.n_replications);
  SimulatedSystem out;
  double horizon = 0.0;
  for (std::size_t r = 0; r < c.n_replications; ++r) {
    reps[r] = simulate_replication(c, r, &out.redraws);
    horizon = std::max(horizon, reps[r].departures.back());
  }
  const auto n_grid = static_cast<std::size_t>(std::ceil(horizon / c.dt)) + 1;
  std::vector<std::vector<std::size_t>> occ(c.n_replications);
  for (std::size_t r = 0; r < c.n_replications; ++r) {
    occ[r] = occupancy_on_grid(reps[r], c.dt, n_grid);
    for (auto k : occ[r]) out.width = std::max(out.width, k + 1);
  }
  out.width = std::max<std::size_t>(out.width, 2);
  out.histograms.assign(n_grid, std::vector<double>(out.width, 0.0));
  const double inv = 1.0 / static_cast<double>(c.n_replications);
  for (std::size_t r = 0; r < c.n_replications; ++r)
    for (std::size_t g = 0; g < n_grid; ++g) out.histograms[g][occ[r][g]] += inv;
  return out;
}

struct QueueSystem {
  std::string id;
  QueueConfig config;
  std::size_t width = 0;
  std::size_t attempts = 0;
  std::size_t redraws = 0;
  SimplexSeries series;
};

struct QueueSectionOptions {
  Section section = Section::nonhomogeneous;
  std::size_t n_systems = 500;
  std::size_t n_arrivals = 500;
  std::size_t n_replications = 200;
  double dt = 1.0;
  std::uint64_t seed = 42;
  QueuePriors priors;
  std::size_t workers = default_workers();
};

struct QueueSection {
  Section section = Section::homogeneous;
  std::size_t dim = 0;  // section-wide D after padding
  std::vector<QueueSystem> systems;
};

inline std::string system_id(Section s, std::size_t i) {
  std::string n = std::to_string(i);
  if (n.size() < 5) n.insert(0, 5 - n.size(), '0');
  return std::string(s == Section::homogeneous ? "hom-" : "nonhom-") + n;
}

/// Configs drawn sequentially from one stream; systems simulated independently and padded to a shared D.
inline QueueSection simulate_section(const QueueSectionOptions& o) {
  Philox cfg_rng(derive_seed(o.seed, 0xC0F1), static_cast<std::uint64_t>(o.section));
  std::vector<ConfigDraw> draws;
  for (std::size_t i = 0; i < o.n_systems; ++i) {
    auto d = sample_config(o.section, cfg_rng, o.priors);
    d.config.n_arrivals = o.n_arrivals;
    d.config.n_replications = o.n_replications;
    d.config.dt = o.dt;
    d.config.seed = derive_seed(o.seed, (static_cast<std::uint64_t>(o.section) << 32) | i);
    draws.push_back(d);
  }
  std::vector<SimulatedSystem> sims(o.n_systems);
  parallel_for(o.n_systems, [&](std::size_t i) { sims[i] = simulate_system(draws[i].config); }, o.workers);
  QueueSection sec;
  sec.section = o.section;
  for (const auto& s : sims) sec.dim = std::max(sec.dim, s.width);
  for (std::size_t i = 0; i < o.n_systems; ++i) {
    auto& sim = sims[i];
    std::vector<Dist> steps;
    steps.reserve(sim.histograms.size());
    for (auto& h : sim.histograms) {
      h.resize(sec.dim, 0.0);
      steps.push_back(normalize(h));
    }
    const std::string id = system_id(o.section, i);
    sec.systems.push_back({id, draws[i].config, sim.width, draws[i].attempts, sim.redraws,
                           SimplexSeries(id, true, std::move(steps))});
    sim.histograms.clear();
    sim.histograms.shrink_to_fit();
  }
  return sec;
}

enum class SplitLabel { train, val, test };
inline std::string_view to_string(SplitLabel s) {
  return s == SplitLabel::train ? "train" : (s == SplitLabel::val ? "val" : "test");
}

struct SplitManifest {
  std::vector<SplitLabel> labels;  // per system, in input order
  std::vector<std::size_t> decile;
  std::size_t count(SplitLabel l) const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), l)); }
};

/// Whole-system split, proportional within each support-width decile (ties broken by id).
inline SplitManifest split_systems(std::span<const std::size_t> widths, std::span<const std::string> ids,
                                   std::array<double, 3> fractions = {0.7, 0.1, 0.2}, std::uint64_t seed = 42) {
  const std::size_t n = widths.size();
  require(n >= 10, ErrorCode::TooFewSystems, "need at least 10 systems to split");
  require(ids.size() == n, ErrorCode::DimensionMismatch, "one id per system");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return widths[a] != widths[b] ? widths[a] < widths[b] : ids[a] < ids[b];
  });
  SplitManifest m;
  m.labels.assign(n, SplitLabel::test);
  m.decile.assign(n, 0);
  Philox rng(seed, 0x5B17);
  // Cumulative rounding keeps every decile within one system of its share and the totals exact.
  auto upto = [&](double f, std::size_t cum) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(cum) + 0.5 + 1e-9));
  };
  for (std::size_t dec = 0; dec < 10; ++dec) {
    const std::size_t lo = dec * n / 10, hi = (dec + 1) * n / 10;
    std::vector<std::size_t> members(order.begin() + static_cast<long>(lo), order.begin() + static_cast<long>(hi));
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.below(i)]);
    const std::size_t k = members.size();
    const std::size_t n_train = upto(fractions[0], hi) - upto(fractions[0], lo);
    const std::size_t n_val = std::min(k - n_train, upto(fractions[1], hi) - upto(fractions[1], lo));
    for (std::size_t i = 0; i < k; ++i) {
      m.decile[members[i]] = dec;
      m.labels[members[i]] = i < n_train ? SplitLabel::train : (i < n_train + n_val ? SplitLabel::val : SplitLabel::test);
    }
  }
  return m;
}

/// Appends zero bins so a series lives on a wider support (used when sections are combined).
inline SimplexSeries pad_series(const SimplexSeries& s, std::size_t d) {
  require(d >= s.dim(), ErrorCode::DimensionMismatch, "cannot pad to a smaller support");
  if (d == s.dim()) return s;
  std::vector<Dist> steps;
  steps.reserve(s.length());
  for (const auto& p : s.steps()) {
    std::vector<double> v(p.begin(), p.end());
    v.resize(d, 0.0);
    steps.emplace_back(std::move(v));
  }
  return SimplexSeries(s.id(), s.ordered(), std::move(steps), s.loss_mask());
}

}  // namespace cast
