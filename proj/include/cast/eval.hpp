#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cast/baselines.hpp"
#include "cast/metrics.hpp"
#include "cast/rng.hpp"
#include "cast/stats.hpp"
#include "cast/train.hpp"

namespace cast {

struct MetricMeans {
  double kl = 0.0;
  double jsd = 0.0;
  double l1 = 0.0;
  double bray_curtis = 0.0;
  std::optional<double> w1;
  std::size_t count = 0;
};

class MetricAccumulator {
 public:
  explicit MetricAccumulator(bool ordered, double eps = kDefaultEps) : ordered_(ordered), eps_(eps) {}
  void add(const Dist& target, const Dist& pred) {
    const auto r = score(target, pred, ordered_, eps_);
    kl_ += r.kl;
    jsd_ += r.jsd;
    l1_ += r.l1;
    bc_ += r.bray_curtis;
    if (r.w1) w1_ += *r.w1;
    ++n_;
  }
  MetricMeans means() const {
    MetricMeans m;
    m.count = n_;
    if (n_ == 0) return m;
    const double inv = 1.0 / static_cast<double>(n_);
    m.kl = kl_ * inv;
    m.jsd = jsd_ * inv;
    m.l1 = l1_ * inv;
    m.bray_curtis = bc_ * inv;
    if (ordered_) m.w1 = w1_ * inv;
    return m;
  }

 private:
  bool ordered_;
  double eps_;
  double kl_ = 0.0, jsd_ = 0.0, l1_ = 0.0, bc_ = 0.0, w1_ = 0.0;
  std::size_t n_ = 0;
};

inline double metric_value(const MetricMeans& m, const std::string& name) {
  if (name == "kl") return m.kl;
  if (name == "jsd") return m.jsd;
  if (name == "l1") return m.l1;
  if (name == "bray_curtis") return m.bray_curtis;
  if (name == "w1") return m.w1.value_or(std::nan(""));
  fail(ErrorCode::InvalidArgument, "unknown metric '" + name + "'");
}

struct OfflineOptions {
  std::size_t max_sequences = 0;           // 0 = all, otherwise first by sorted id
  std::size_t max_positions_per_sequence = 0;  // 0 = all, otherwise evenly spaced
  double eps = kDefaultEps;
};

/// Sequences sorted by id, truncated to `cap` (0 = all).
inline std::vector<const SimplexSeries*> by_id(const std::vector<SimplexSeries>& data, std::size_t cap = 0) {
  std::vector<const SimplexSeries*> out;
  for (const auto& s : data) out.push_back(&s);
  std::stable_sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->id() < b->id(); });
  if (cap > 0 && out.size() > cap) out.resize(cap);
  return out;
}

/// Teacher-forced one-step scores at masked positions.
inline MetricMeans evaluate_offline(const Forecaster& f, const std::vector<SimplexSeries>& data,
                                    const OfflineOptions& o = {}) {
  require(!data.empty(), ErrorCode::NoScoredPositions, "no sequences");
  MetricAccumulator acc(data.front().ordered(), o.eps);
  for (const auto* s : by_id(data, o.max_sequences)) {
    const auto pos = scored_positions(*s, o.max_positions_per_sequence);
    if (pos.empty()) continue;
    const auto preds = f.predict_positions(s->steps(), pos);
    for (std::size_t i = 0; i < pos.size(); ++i) acc.add((*s)[pos[i] + 1], preds[i]);
  }
  require(acc.means().count > 0, ErrorCode::NoScoredPositions, "no scored positions");
  return acc.means();
}

struct RolloutConfig {
  std::size_t context_len = 128;
  std::size_t horizon = 64;
  std::size_t max_examples = 12;
  bool final_step_only = false;  // score only the last horizon step
  double eps = kDefaultEps;
};

struct RolloutResult {
  MetricMeans means;
  std::size_t examples = 0;
  std::size_t skipped = 0;
  std::vector<std::string> ids;
};

/// Context from the start of each eligible sequence, then horizon steps of self-fed predictions.
inline RolloutResult evaluate_rollout(const Forecaster& f, const std::vector<SimplexSeries>& data,
                                      const RolloutConfig& rc) {
  require(rc.context_len >= 1 && rc.horizon >= 1, ErrorCode::InvalidArgument, "context and horizon must be >= 1");
  RolloutResult res;
  std::vector<const SimplexSeries*> eligible;
  for (const auto* s : by_id(data)) {
    if (s->length() >= rc.context_len + rc.horizon)
      eligible.push_back(s);
    else
      ++res.skipped;
  }
  require(!eligible.empty(), ErrorCode::NoEligibleSequences, "no sequence is long enough for context + horizon");
  if (rc.max_examples > 0 && eligible.size() > rc.max_examples) eligible.resize(rc.max_examples);
  MetricAccumulator acc(eligible.front()->ordered(), rc.eps);
  for (const auto* s : eligible) {
    const auto ctx = std::span<const Dist>(s->steps()).first(rc.context_len);
    const auto preds = f.rollout(ctx, rc.horizon);
    for (std::size_t h = rc.final_step_only ? rc.horizon - 1 : 0; h < rc.horizon; ++h)
      acc.add((*s)[rc.context_len + h], preds[h]);
    res.ids.push_back(s->id());
  }
  res.examples = eligible.size();
  res.means = acc.means();
  return res;
}

struct RankMatrix {
  std::vector<std::string> methods;
  std::vector<std::string> sections;
  std::vector<std::vector<double>> ranks;  // methods x sections; NaN where the entry is missing
  std::vector<double> average;
  std::vector<std::size_t> top1;
};

/// Ascending ranks per section (ties share the average rank); missing (NaN) entries are excluded.
inline RankMatrix rank_aggregate(const std::vector<std::string>& methods, const std::vector<std::string>& sections,
                                 const std::vector<std::vector<double>>& values) {
  require(values.size() == methods.size(), ErrorCode::DimensionMismatch, "one row per method");
  RankMatrix rm{methods, sections, {}, {}, {}};
  const std::size_t m = methods.size(), s = sections.size();
  rm.ranks.assign(m, std::vector<double>(s, std::nan("")));
  rm.top1.assign(m, 0);
  for (std::size_t j = 0; j < s; ++j) {
    std::vector<std::size_t> present;
    for (std::size_t i = 0; i < m; ++i) {
      require(values[i].size() == s, ErrorCode::DimensionMismatch, "one column per section");
      if (!std::isnan(values[i][j])) present.push_back(i);
    }
    std::stable_sort(present.begin(), present.end(), [&](auto a, auto b) { return values[a][j] < values[b][j]; });
    for (std::size_t a = 0; a < present.size();) {
      std::size_t b = a;
      while (b + 1 < present.size() && values[present[b + 1]][j] == values[present[a]][j]) ++b;
      const double r = 0.5 * static_cast<double>(a + b) + 1.0;
      for (std::size_t q = a; q <= b; ++q) {
        rm.ranks[present[q]][j] = r;
        if (a == 0) ++rm.top1[present[q]];
      }
      a = b + 1;
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    double sum = 0.0;
    std::size_t n = 0;
    for (double r : rm.ranks[i])
      if (!std::isnan(r)) {
        sum += r;
        ++n;
      }
    rm.average.push_back(n ? sum / static_cast<double>(n) : std::nan(""));
  }
  return rm;
}

// ---------------------------------------------------------------- aliasing diagnostic

struct DiagnosticConfig {
  std::size_t n_samples = 500;
  std::size_t window = 4;        // history descriptor length
  std::size_t shortlist = 32;    // ordered supports: descriptor-proposed candidates re-scored by JSD
  std::size_t max_pool = 20000;  // candidate states kept (evenly thinned)
  double strong_ratio = 1.6;     // successor / neighbour JSD median
  double moderate_ratio = 1.2;
  std::uint64_t seed = 0;
};

struct DiagnosticReport {
  std::size_t samples = 0;
  double neighbor_jsd_median = 0.0, neighbor_jsd_q90 = 0.0;
  double successor_jsd_median = 0.0, successor_jsd_q90 = 0.0;
  std::optional<double> history_better_rate;  // empty: every comparison tied
  std::size_t ties = 0;
  double ratio = 0.0;
  std::string evidence;  // strong | moderate | weak
};

/// Mean, sd and 10/50/90% quantiles of an ordered-support distribution.
inline std::array<double, 5> ordered_descriptor(const Dist& p) {
  std::array<double, 5> out{mean_support(p), std_support(p), 0.0, 0.0, 0.0};
  const std::array<double, 3> qs = {0.1, 0.5, 0.9};
  double cum = 0.0;
  std::size_t qi = 0;
  for (std::size_t j = 0; j < p.size() && qi < 3; ++j) {
    cum += p[j];
    while (qi < 3 && cum >= qs[qi] - 1e-12) out[2 + qi++] = static_cast<double>(j + 1);
  }
  for (; qi < 3; ++qi) out[2 + qi] = static_cast<double>(p.size());
  return out;
}

inline DiagnosticReport aliasing_diagnostic(const std::vector<SimplexSeries>& data, const DiagnosticConfig& cfg = {}) {
  require(data.size() >= 2, ErrorCode::TooFewSequences, "diagnostic needs at least two sequences");
  const bool ordered = data.front().ordered();
  struct State {
    std::size_t seq, t;
  };
  std::vector<State> all;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t t = 0; t + 1 < data[i].length(); ++t) all.push_back({i, t});
  require(!all.empty(), ErrorCode::TooFewSequences, "no transitions");
  std::vector<State> pool;
  const std::size_t keep = std::min(all.size(), cfg.max_pool);
  for (std::size_t i = 0; i < keep; ++i) pool.push_back(all[i * all.size() / keep]);

  auto descriptor = [&](const State& s) {
    std::vector<double> d;
    if (ordered) {
      const auto a = ordered_descriptor(data[s.seq][s.t]);
      d.assign(a.begin(), a.end());
    } else {
      d.assign(data[s.seq][s.t].begin(), data[s.seq][s.t].end());
    }
    return d;
  };
  auto history = [&](const State& s) {
    std::vector<double> h;
    for (std::size_t k = 0; k < cfg.window; ++k) {
      const std::size_t t = s.t >= k ? s.t - k : 0;
      const State back{s.seq, t};
      const auto d = descriptor(back);
      h.insert(h.end(), d.begin(), d.end());
    }
    return h;
  };
  std::vector<std::vector<double>> pool_desc, pool_hist;
  for (const auto& s : pool) {
    pool_desc.push_back(descriptor(s));
    pool_hist.push_back(history(s));
  }
  auto dist2 = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
  };

  Philox rng(cfg.seed, 0xD1A6);
  std::vector<double> nbr, succ;
  std::size_t better = 0, decided = 0, ties = 0;
  for (std::size_t k = 0; k < cfg.n_samples; ++k) {
    const State q = all[rng.below(all.size())];
    const Dist& cur = data[q.seq][q.t];
    const Dist& next = data[q.seq][q.t + 1];
    const auto qd = descriptor(q), qh = history(q);
    std::vector<std::pair<double, std::size_t>> cand, hist;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (pool[i].seq == q.seq) continue;
      cand.emplace_back(dist2(pool_desc[i], qd), i);
      hist.emplace_back(dist2(pool_hist[i], qh), i);
    }
    if (cand.empty()) continue;
    // Current-state neighbour: shortlist by descriptor, pick by actual JSD.
    const std::size_t sl = ordered ? std::min(cfg.shortlist, cand.size()) : cand.size();
    std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(sl), cand.end());
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = cand.front().second;
    for (std::size_t i = 0; i < sl; ++i) {
      const auto& s = pool[cand[i].second];
      const double j = jsd(cur, data[s.seq][s.t]);
      if (j < best) {
        best = j;
        arg = cand[i].second;
      }
    }
    const auto hbest = std::min_element(hist.begin(), hist.end())->second;
    const double sj_cur = jsd(next, data[pool[arg].seq][pool[arg].t + 1]);
    const double sj_hist = jsd(next, data[pool[hbest].seq][pool[hbest].t + 1]);
    nbr.push_back(best);
    succ.push_back(sj_cur);
    if (sj_hist == sj_cur) {
      ++ties;
    } else {
      ++decided;
      if (sj_hist < sj_cur) ++better;
    }
  }
  DiagnosticReport r;
  r.samples = nbr.size();
  r.neighbor_jsd_median = quantile(nbr, 0.5);
  r.neighbor_jsd_q90 = quantile(nbr, 0.9);
  r.successor_jsd_median = quantile(succ, 0.5);
  r.successor_jsd_q90 = quantile(succ, 0.9);
  r.ties = ties;
  if (decided > 0) r.history_better_rate = static_cast<double>(better) / static_cast<double>(decided);
  if (r.neighbor_jsd_median > 0.0)
    r.ratio = r.successor_jsd_median / r.neighbor_jsd_median;
  else
    r.ratio = r.successor_jsd_median > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  r.evidence = r.ratio >= cfg.strong_ratio ? "strong" : (r.ratio >= cfg.moderate_ratio ? "moderate" : "weak");
  return r;
}

// ---------------------------------------------------------------- seeds and ablations

struct SeedStudyRow {
  std::string metric;
  MeanSd stats;
  std::vector<double> values;
};

/// run(seed) returns named metrics in a fixed order; reports mean and sample sd per metric.
template <class Runner>
std::vector<SeedStudyRow> seed_study(Runner&& run, std::span<const std::uint64_t> seeds) {
  require(seeds.size() >= 2, ErrorCode::InvalidArgument, "seed study needs at least two seeds");
  std::vector<SeedStudyRow> rows;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    const std::vector<std::pair<std::string, double>> out = run(seeds[k]);
    if (k == 0)
      for (const auto& [name, v] : out) rows.push_back({name, {}, {}});
    require(out.size() == rows.size(), ErrorCode::InvalidArgument, "runner returned a different metric set");
    for (std::size_t i = 0; i < out.size(); ++i) rows[i].values.push_back(out[i].second);
  }
  for (auto& r : rows) r.stats = mean_sd(r.values);
  return rows;
}

struct AblationRow {
  AblationVariant variant = AblationVariant::full;
  double offline_kl = 0.0;
  std::optional<double> rollout_jsd;
  double offline_delta = 0.0;  // relative to full, (variant - full) / full
  std::optional<double> rollout_delta;
};

struct AblationInputs {
  const std::vector<SimplexSeries>* train = nullptr;
  const std::vector<SimplexSeries>* val = nullptr;
  const std::vector<SimplexSeries>* test = nullptr;
  CastConfig base;
  TrainConfig train_config;
  OfflineOptions offline;
  std::optional<RolloutConfig> rollout;
  std::uint64_t seed = 0;
};

/// Trains every variant from the same seed and reports deltas against the full model.
inline std::vector<AblationRow> run_ablation(const AblationInputs& in) {
  std::vector<AblationRow> rows;
  for (auto v : kAllVariants) {
    CastConfig c = in.base;
    c.variant = v;
    const auto res = train(c, *in.train, *in.val, in.train_config, in.seed);
    const CastForecaster f(res.model, std::string(to_string(v)));
    AblationRow r;
    r.variant = v;
    r.offline_kl = evaluate_offline(f, *in.test, in.offline).kl;
    if (in.rollout) r.rollout_jsd = evaluate_rollout(f, *in.test, *in.rollout).means.jsd;
    rows.push_back(r);
  }
  const AblationRow& full = rows.front();
  for (auto& r : rows) {
    r.offline_delta = (r.offline_kl - full.offline_kl) / full.offline_kl;
    if (r.rollout_jsd && full.rollout_jsd) r.rollout_delta = (*r.rollout_jsd - *full.rollout_jsd) / *full.rollout_jsd;
  }
  return rows;
}

}  // namespace cast
