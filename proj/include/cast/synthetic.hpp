#pragma once

#include <string>
#include <vector>

#include "cast/stats.hpp"
#include "cast/theory.hpp"
#include "cast/train.hpp"

namespace cast {

struct SyntheticOptions {
  std::size_t n_train = 2048;
  std::size_t n_val = 1024;
  double noise = 0.0;
  double rho_max = 0.5;   // the default budget gates a unit shift to ~0.6 of rho, so 0.2 needs headroom
  double reg_scale = 0.0;  // multiplies every operator-prior weight
  TrainConfig train = [] {
    TrainConfig t;
    t.lr = 1e-2;
    t.steps = 2000;
    t.warmup = 50;
    t.weight_decay = 0.0;
    t.batch = 32;
    t.block_len = 0;
    t.eval_every = 50;
    return t;
  }();
};

struct MetricTriple {
  double kl = 0.0;
  double jsd = 0.0;
  double l1 = 0.0;
};

struct SyntheticRow {
  std::string method;
  MeanSd kl, jsd, l1;
  std::vector<MetricTriple> per_seed;
};

struct SyntheticReport {
  std::vector<SyntheticRow> rows;
  double js_weighted_value = 0.0;
  double numeric_fixed_summary = 0.0;
  std::vector<double> hull_delta;  // per regime, L1 distance of u_z to its no-transport hull
  double pinsker_bound = 0.0;

  const SyntheticRow& row(const std::string& name) const {
    for (const auto& r : rows)
      if (r.method == name) return r;
    fail(ErrorCode::InvalidArgument, "no row " + name);
  }
};

/// Regime-weighted population metrics of per-regime predictions against u_z.
inline MetricTriple population_metrics(const AliasingScenario& s, std::span<const Dist> preds) {
  MetricTriple m;
  const auto u = s.successors();
  for (std::size_t z = 0; z < s.regimes(); ++z) {
    m.kl += s.weights[z] * kl(u[z], preds[z]);
    m.jsd += s.weights[z] * jsd(u[z], preds[z]);
    m.l1 += s.weights[z] * l1(u[z], preds[z]);
  }
  return m;
}

inline std::vector<Dist> predict_regimes(const CastModel& model, const AliasingScenario& s) {
  std::vector<Dist> out;
  for (std::size_t z = 0; z < s.regimes(); ++z) {
    std::vector<Dist> prefix = s.preludes[z];
    prefix.push_back(s.p_star);
    out.push_back(model.predict_next(prefix));
  }
  return out;
}

inline SyntheticRow make_row(std::string name, std::vector<MetricTriple> per_seed) {
  SyntheticRow r;
  r.method = std::move(name);
  std::vector<double> k, j, l;
  for (const auto& m : per_seed) {
    k.push_back(m.kl);
    j.push_back(m.jsd);
    l.push_back(m.l1);
  }
  r.kl = mean_sd(k);
  r.jsd = mean_sd(j);
  r.l1 = mean_sd(l);
  r.per_seed = std::move(per_seed);
  return r;
}

/// Fixed-summary optimum, trained current-only, phase-aware anchor-only, oracle, trained CAST.
inline SyntheticReport run_synthetic_experiment(const AliasingScenario& s, std::span<const std::uint64_t> seeds,
                                                const SyntheticOptions& opt = {}) {
  SyntheticReport rep;
  const auto u = s.successors();
  const auto fs = fixed_summary_optimum(s);
  rep.js_weighted_value = fs.excess;
  rep.numeric_fixed_summary = fs.numeric_min;
  for (std::size_t z = 0; z < s.regimes(); ++z) {
    std::vector<Dist> hull = s.preludes[z];
    hull.erase(hull.begin());  // successors stored in memory at p*: later prelude steps and p* itself
    hull.push_back(s.p_star);
    AliasingScenario single = s;
    single.weights.assign(s.regimes(), 0.0);
    single.weights[z] = 1.0;
    const auto ao = anchor_only_optimum(single, hull);
    rep.hull_delta.push_back(ao.delta[z]);
    rep.pinsker_bound += 0.5 * s.weights[z] * ao.delta[z] * ao.delta[z];
  }

  std::vector<Dist> mix(s.regimes(), fs.q_star), oracle = cast_oracle(s);
  const std::size_t n_seeds = seeds.size();
  rep.rows.push_back(make_row("fixed_summary_optimum", std::vector<MetricTriple>(n_seeds, population_metrics(s, mix))));

  auto config = [&](bool current_only, AblationVariant v) {
    CastConfig c;
    c.rho_max = opt.rho_max;
    c.reg.strength *= opt.reg_scale;
    c.reg.off_identity *= opt.reg_scale;
    c.reg.smoothness *= opt.reg_scale;
    c.reg.mean_shift *= opt.reg_scale;
    c.variant = v;
    if (current_only) {
      c.features = FeatureConfig::current_only();
      c.use_retrieval = false;
    }
    return c;
  };
  std::vector<MetricTriple> cur, anc, full;
  for (std::uint64_t seed : seeds) {
    const auto tr = build_aliasing_dataset(s, opt.n_train, opt.noise, derive_seed(seed, 10), "train");
    const auto va = build_aliasing_dataset(s, opt.n_val, opt.noise, derive_seed(seed, 11), "val");
    auto fit = [&](bool current_only, AblationVariant v) {
      const auto res = train(config(current_only, v), tr.series, va.series, opt.train, seed);
      return population_metrics(s, predict_regimes(res.model, s));
    };
    cur.push_back(fit(true, AblationVariant::full));
    anc.push_back(fit(false, AblationVariant::anchor_only));
    full.push_back(fit(false, AblationVariant::full));
  }
  rep.rows.push_back(make_row("trained_current_only", cur));
  rep.rows.push_back(make_row("phase_aware_anchor_only", anc));
  rep.rows.push_back(make_row("cast_oracle", std::vector<MetricTriple>(n_seeds, population_metrics(s, oracle))));
  rep.rows.push_back(make_row("trained_cast", full));
  return rep;
}

}  // namespace cast
