#pragma once

#include <cstdlib>
#include <functional>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

#include "cast/baselines.hpp"
#include "cast/checks.hpp"
#include "cast/eval.hpp"
#include "cast/io.hpp"
#include "cast/queue_sim.hpp"
#include "cast/synthetic.hpp"

namespace cast {

/// Everything a subcommand may need; loaded from --config, then overridden by flags.
struct RunConfig {
  std::string train_path, val_path, test_path, data_path, checkpoint, in_dir;
  std::string out = "cast_out";
  std::uint64_t seed = 0;
  std::vector<std::string> methods = {"persistence", "analog_successor", "ilr_var", "compositional_ets", "cast"};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  CastConfig cast;
  TrainConfig training;
  OfflineOptions offline = [] {
    OfflineOptions o;
    o.max_sequences = 24;
    o.max_positions_per_sequence = 128;
    return o;
  }();
  RolloutConfig rollout;
  std::string section = "nonhomogeneous";
  QueueSectionOptions queue;
  SyntheticOptions synthetic;
  DiagnosticConfig diagnostic;
  std::size_t analog_window = 4, analog_k = 8, analog_max_windows = 20000;
  std::size_t var_order = 1;
  double var_ridge = 1e-6;
  std::size_t theory_scale = 1000;
  std::string metric = "jsd";
};

inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  detail::Reader r(j, "config");
  if (const Json* d = r.sub("dataset")) {
    detail::Reader dr(*d, "config.dataset");
    dr.opt("train", c.train_path).opt("val", c.val_path).opt("test", c.test_path).opt("data", c.data_path).done();
  }
  r.opt("checkpoint", c.checkpoint).opt("in", c.in_dir).opt("out", c.out).opt("seed", c.seed);
  r.opt("methods", c.methods).opt("seeds", c.seeds).opt("metric", c.metric);
  if (const Json* x = r.sub("cast")) c.cast = cast_config_from_json(*x, c.cast);
  if (const Json* x = r.sub("training")) c.training = train_config_from_json(*x, c.training);
  if (const Json* x = r.sub("offline")) {
    detail::Reader o(*x, "config.offline");
    o.opt("max_sequences", c.offline.max_sequences)
        .opt("max_positions_per_sequence", c.offline.max_positions_per_sequence)
        .opt("eps", c.offline.eps)
        .done();
  }
  if (const Json* x = r.sub("rollout")) {
    detail::Reader o(*x, "config.rollout");
    o.opt("context_len", c.rollout.context_len).opt("horizon", c.rollout.horizon);
    o.opt("max_examples", c.rollout.max_examples).opt("final_step_only", c.rollout.final_step_only).done();
  }
  if (const Json* x = r.sub("queue")) {
    detail::Reader o(*x, "config.queue");
    o.opt("section", c.section).opt("systems", c.queue.n_systems).opt("arrivals", c.queue.n_arrivals);
    o.opt("replications", c.queue.n_replications).opt("dt", c.queue.dt).opt("workers", c.queue.workers).done();
  }
  if (const Json* x = r.sub("synthetic")) {
    detail::Reader o(*x, "config.synthetic");
    o.opt("n_train", c.synthetic.n_train).opt("n_val", c.synthetic.n_val).opt("noise", c.synthetic.noise);
    o.opt("rho_max", c.synthetic.rho_max).opt("reg_scale", c.synthetic.reg_scale);
    if (const Json* t = o.sub("training")) c.synthetic.train = train_config_from_json(*t, c.synthetic.train);
    o.done();
  }
  if (const Json* x = r.sub("diagnostic")) {
    detail::Reader o(*x, "config.diagnostic");
    o.opt("samples", c.diagnostic.n_samples).opt("window", c.diagnostic.window);
    o.opt("shortlist", c.diagnostic.shortlist).opt("max_pool", c.diagnostic.max_pool);
    o.opt("strong_ratio", c.diagnostic.strong_ratio).opt("moderate_ratio", c.diagnostic.moderate_ratio).done();
  }
  if (const Json* x = r.sub("baselines")) {
    detail::Reader o(*x, "config.baselines");
    o.opt("analog_window", c.analog_window).opt("analog_k", c.analog_k);
    o.opt("analog_max_windows", c.analog_max_windows).opt("var_order", c.var_order).opt("var_ridge", c.var_ridge);
    o.done();
  }
  r.opt("theory_scale", c.theory_scale);
  r.done();
  return c;
}

namespace cli {

/// Flags that override RunConfig fields only when given on the command line.
class Overrides {
 public:
  template <class T, class F>
  CLI::Option* add(CLI::App* app, const std::string& flag, F apply, const std::string& help) {
    auto v = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *v, help);
    items_.push_back([opt, v, apply](RunConfig& c) {
      if (opt->count() > 0) apply(c, *v);
    });
    return opt;
  }
  CLI::Option* flag(CLI::App* app, const std::string& flag, std::function<void(RunConfig&)> apply,
                    const std::string& help) {
    CLI::Option* opt = app->add_flag(flag, help);
    items_.push_back([opt, apply](RunConfig& c) {
      if (opt->count() > 0) apply(c);
    });
    return opt;
  }
  void apply(RunConfig& c) const {
    for (const auto& f : items_) f(c);
  }

 private:
  std::vector<std::function<void(RunConfig&)>> items_;
};

struct Context {
  RunConfig cfg;
  bool json = false;
  std::ostream& out;
  std::ostream& err;
  std::filesystem::path out_dir() const { return cfg.out; }
};

inline std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

inline std::string csv_number(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

inline void emit(Context& ctx, const Json& report, const std::string& text) {
  if (ctx.json)
    ctx.out << report.dump(2) << "\n";
  else
    ctx.out << text;
}

inline void write_json(const std::filesystem::path& path, const Json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

inline Dataset load(const std::string& path, const char* what) {
  require(!path.empty(), ErrorCode::InvalidArgument, std::string("missing --") + what);
  require(std::filesystem::is_regular_file(path), ErrorCode::InvalidArgument, "no such file: " + path);
  auto ds = ingest(path);
  require(!ds.series.empty(), ErrorCode::InvalidArgument, path + " holds no sequences");
  return ds;
}

inline std::string section_of(const Dataset& ds, const std::string& path) {
  return ds.header.section_name.empty() ? std::filesystem::path(path).stem().string() : ds.header.section_name;
}

inline void warn_dropped(Context& ctx, const Dataset& ds, const std::string& path) {
  if (ds.dropped_rows > 0) ctx.err << "warning: " << path << ": dropped " << ds.dropped_rows << " all-zero rows\n";
}

inline Json metrics_json(const MetricMeans& m) {
  Json j;
  j["kl"] = m.kl;
  j["jsd"] = m.jsd;
  j["l1"] = m.l1;
  j["bray_curtis"] = m.bray_curtis;
  if (m.w1) j["w1"] = *m.w1;
  j["count"] = m.count;
  return j;
}

// ---------------------------------------------------------------- simulate-queues

inline int simulate_queues(Context& ctx) {
  const auto& c = ctx.cfg;
  std::vector<Section> parts;
  if (c.section == "combined")
    parts = {Section::homogeneous, Section::nonhomogeneous};
  else
    parts = {parse_section(c.section)};
  std::vector<QueueSection> sections;
  for (auto s : parts) {
    QueueSectionOptions o = c.queue;
    o.section = s;
    o.seed = c.seed;
    sections.push_back(simulate_section(o));
  }
  std::size_t dim = 0;
  for (const auto& s : sections) dim = std::max(dim, s.dim);

  std::map<SplitLabel, std::vector<SimplexSeries>> split;
  std::map<SplitLabel, std::vector<Json>> extras;
  Json systems = Json::array();
  std::vector<double> util;
  std::size_t attempts = 0, redraws = 0;
  for (const auto& sec : sections) {
    std::vector<std::size_t> widths;
    std::vector<std::string> ids;
    for (const auto& q : sec.systems) {
      widths.push_back(q.width);
      ids.push_back(q.id);
    }
    const auto man = split_systems(widths, ids, {0.7, 0.1, 0.2}, c.seed);
    for (std::size_t i = 0; i < sec.systems.size(); ++i) {
      const auto& q = sec.systems[i];
      const auto label = man.labels[i];
      split[label].push_back(pad_series(q.series, dim));
      extras[label].push_back(Json{{"system_id", q.id}, {"config", to_json(q.config)}});
      systems.push_back(Json{{"system_id", q.id},
                             {"section", std::string(to_string(sec.section))},
                             {"split", std::string(to_string(label))},
                             {"width_decile", man.decile[i]},
                             {"support_width", q.width},
                             {"length", q.series.length()},
                             {"config_attempts", q.attempts},
                             {"sample_redraws", q.redraws},
                             {"config", to_json(q.config)}});
      util.push_back(q.config.utilization());
      attempts += q.attempts;
      redraws += q.redraws;
    }
  }
  const std::filesystem::path dir = ctx.out_dir() / c.section;
  const DatasetHeader h{kDatasetFormatVersion, dim, true, c.section};
  Json counts;
  for (auto label : {SplitLabel::train, SplitLabel::val, SplitLabel::test}) {
    const std::string name(to_string(label));
    write_dataset(dir / (name + ".jsonl"), h, split[label], extras[label]);
    counts[name] = split[label].size();
  }
  const auto us = mean_sd(util);
  Json manifest;
  manifest["section"] = c.section;
  manifest["D"] = dim;
  manifest["seed"] = c.seed;
  manifest["systems_per_part"] = c.queue.n_systems;
  manifest["n_arrivals"] = c.queue.n_arrivals;
  manifest["n_replications"] = c.queue.n_replications;
  manifest["dt"] = c.queue.dt;
  manifest["split_fractions"] = {0.7, 0.1, 0.2};
  manifest["split_counts"] = counts;
  manifest["priors"] = to_json(c.queue.priors);
  manifest["utilization"] = {{"mean", us.mean}, {"sd", us.sd}, {"min", *std::min_element(util.begin(), util.end())},
                             {"max", *std::max_element(util.begin(), util.end())}};
  manifest["config_attempts_total"] = attempts;
  manifest["sample_redraws_total"] = redraws;
  manifest["systems"] = systems;
  write_json(dir / "manifest.json", manifest);

  Json report{{"section", c.section}, {"D", dim}, {"split_counts", counts}, {"dir", dir.string()}};
  std::ostringstream t;
  t << "section " << c.section << ": D=" << dim << " train=" << counts["train"] << " val=" << counts["val"]
    << " test=" << counts["test"] << " -> " << dir.string() << "\n";
  emit(ctx, report, t.str());
  return 0;
}

// ---------------------------------------------------------------- train

inline Json train_log_json(const TrainLog& log) {
  Json entries = Json::array();
  for (const auto& e : log.entries)
    entries.push_back(Json{{"step", e.step}, {"train_loss", e.train_loss}, {"val_kl", e.val_kl}});
  return Json{{"best_step", log.best_step}, {"best_val_kl", log.best_val_kl}, {"entries", entries}};
}

inline int train_cmd(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto tr = load(c.train_path, "train");
  const auto va = load(c.val_path, "val");
  warn_dropped(ctx, tr, c.train_path);
  warn_dropped(ctx, va, c.val_path);
  const auto res = train(c.cast, tr.series, va.series, c.training, c.seed);
  const auto dir = ctx.out_dir();
  save_checkpoint(dir / "model.ckpt", res.model,
                  Json{{"seed", c.seed}, {"training", to_json(c.training)}, {"best_step", res.log.best_step}});
  const Json log = train_log_json(res.log);
  write_json(dir / "train_log.json", log);
  Json report{{"checkpoint", (dir / "model.ckpt").string()},
              {"variant", std::string(to_string(c.cast.variant))},
              {"best_step", res.log.best_step},
              {"best_val_kl", res.log.best_val_kl}};
  emit(ctx, report,
       "trained " + std::string(to_string(c.cast.variant)) + ": best val KL " + fmt(res.log.best_val_kl) +
           " at step " + std::to_string(res.log.best_step) + " -> " + (dir / "model.ckpt").string() + "\n");
  return 0;
}

// ---------------------------------------------------------------- evaluate / rollout

inline std::vector<std::unique_ptr<Forecaster>> build_methods(Context& ctx) {
  const auto& c = ctx.cfg;
  std::vector<std::unique_ptr<Forecaster>> out;
  std::optional<Dataset> tr;
  auto train_data = [&]() -> const std::vector<SimplexSeries>& {
    if (!tr) {
      tr = load(c.train_path, "train (needed by fitted baselines)");
      warn_dropped(ctx, *tr, c.train_path);
    }
    return tr->series;
  };
  for (const auto& m : c.methods) {
    if (m == "persistence") {
      out.push_back(std::make_unique<Persistence>());
    } else if (m == "analog_successor") {
      out.push_back(
          std::make_unique<Analog>(build_analog_bank(train_data(), c.analog_window, c.analog_k, c.analog_max_windows)));
    } else if (m == "ilr_var") {
      auto v = ilr_var_fit(train_data(), c.var_order, c.var_ridge);
      if (v.fallback) ctx.err << "warning: ilr_var has insufficient data; falling back to persistence\n";
      out.push_back(std::make_unique<IlrVar>(std::move(v)));
    } else if (m == "compositional_ets") {
      out.push_back(std::make_unique<IlrEts>(ets_fit(train_data())));
    } else if (m == "cast") {
      require(!c.checkpoint.empty(), ErrorCode::InvalidArgument, "method cast needs --checkpoint");
      auto ck = load_checkpoint(c.checkpoint);
      out.push_back(std::make_unique<CastForecaster>(std::move(ck.model)));
    } else {
      fail(ErrorCode::InvalidArgument, "unknown method '" + m + "'");
    }
  }
  require(!out.empty(), ErrorCode::InvalidArgument, "no methods selected");
  return out;
}

inline std::vector<std::string> metric_names(bool ordered) {
  std::vector<std::string> n = {"kl", "jsd", "l1", "bray_curtis"};
  if (ordered) n.push_back("w1");
  return n;
}

/// Shared tail of evaluate and rollout: JSON result, per-section rank CSV, stdout table.
inline int write_results(Context& ctx, const std::string& kind, const std::string& section, bool ordered,
                         const std::vector<std::string>& names, const std::vector<MetricMeans>& means,
                         const Json& protocol) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < names.size(); ++i) {
    Json r{{"method", names[i]}};
    const Json m = metrics_json(means[i]);
    for (const auto& [k, v] : m.items()) r[k] = v;
    rows.push_back(r);
  }
  Json result{{"kind", kind}, {"section", section}, {"protocol", protocol}, {"methods", rows}};
  std::string csv = "method,section,metric,value,rank\n";
  for (const auto& metric : metric_names(ordered)) {
    std::vector<std::vector<double>> vals;
    for (const auto& m : means) vals.push_back({metric_value(m, metric)});
    const auto rm = rank_aggregate(names, {section}, vals);
    for (std::size_t i = 0; i < names.size(); ++i)
      csv += names[i] + "," + section + "," + metric + "," + csv_number(vals[i][0]) + "," +
             csv_number(rm.ranks[i][0]) + "\n";
  }
  const auto dir = ctx.out_dir();
  write_json(dir / (kind + ".json"), result);
  write_file_atomic(dir / (kind + ".csv"), csv);
  std::ostringstream t;
  t << kind << " on " << section << "\n";
  t << std::left << std::setw(22) << "method" << std::setw(14) << "kl" << std::setw(14) << "jsd" << std::setw(14)
    << "l1" << (ordered ? "w1" : "") << "\n";
  for (std::size_t i = 0; i < names.size(); ++i) {
    t << std::left << std::setw(22) << names[i] << std::setw(14) << fmt(means[i].kl) << std::setw(14)
      << fmt(means[i].jsd) << std::setw(14) << fmt(means[i].l1) << (means[i].w1 ? fmt(*means[i].w1) : "") << "\n";
  }
  emit(ctx, result, t.str());
  return 0;
}

inline int evaluate_cmd(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto te = load(c.test_path, "test");
  warn_dropped(ctx, te, c.test_path);
  const auto methods = build_methods(ctx);
  std::vector<std::string> names;
  std::vector<MetricMeans> means;
  for (const auto& m : methods) {
    names.push_back(m->name());
    means.push_back(evaluate_offline(*m, te.series, c.offline));
  }
  const Json protocol{{"max_sequences", c.offline.max_sequences},
                      {"max_positions_per_sequence", c.offline.max_positions_per_sequence}};
  return write_results(ctx, "offline", section_of(te, c.test_path), te.header.ordered, names, means, protocol);
}

inline int rollout_cmd(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto te = load(c.test_path, "test");
  warn_dropped(ctx, te, c.test_path);
  const auto methods = build_methods(ctx);
  std::vector<std::string> names;
  std::vector<MetricMeans> means;
  std::size_t examples = 0, skipped = 0;
  for (const auto& m : methods) {
    names.push_back(m->name());
    const auto r = evaluate_rollout(*m, te.series, c.rollout);
    means.push_back(r.means);
    examples = r.examples;
    skipped = r.skipped;
  }
  if (skipped > 0) ctx.err << "warning: " << skipped << " sequences too short for context + horizon\n";
  const Json protocol{{"context_len", c.rollout.context_len}, {"horizon", c.rollout.horizon},
                      {"max_examples", c.rollout.max_examples}, {"final_step_only", c.rollout.final_step_only},
                      {"examples", examples}, {"skipped", skipped}};
  return write_results(ctx, "rollout", section_of(te, c.test_path), te.header.ordered, names, means, protocol);
}

// ---------------------------------------------------------------- aliasing-synthetic

inline Json mean_sd_json(const MeanSd& m) { return Json{{"mean", m.mean}, {"sd", m.sd}}; }

inline int aliasing_synthetic(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto s = default_scenario();
  const auto rep = run_synthetic_experiment(s, c.seeds, c.synthetic);
  Json rows = Json::array();
  std::string csv = "method,kl_mean,kl_sd,jsd_mean,jsd_sd,l1_mean,l1_sd\n";
  std::ostringstream t;
  t << std::left << std::setw(26) << "method" << std::setw(30) << "KL" << std::setw(30) << "JSD"
    << "L1\n";
  for (const auto& r : rep.rows) {
    rows.push_back(Json{{"method", r.method}, {"kl", mean_sd_json(r.kl)}, {"jsd", mean_sd_json(r.jsd)},
                        {"l1", mean_sd_json(r.l1)}});
    csv += r.method + "," + csv_number(r.kl.mean) + "," + csv_number(r.kl.sd) + "," + csv_number(r.jsd.mean) + "," +
           csv_number(r.jsd.sd) + "," + csv_number(r.l1.mean) + "," + csv_number(r.l1.sd) + "\n";
    auto pm = [](const MeanSd& m) { return fmt(m.mean) + " +- " + fmt(m.sd); };
    t << std::left << std::setw(26) << r.method << std::setw(30) << pm(r.kl) << std::setw(30) << pm(r.jsd)
      << pm(r.l1) << "\n";
  }
  Json result{{"seeds", c.seeds},
              {"js_weighted", rep.js_weighted_value},
              {"numeric_fixed_summary_min", rep.numeric_fixed_summary},
              {"hull_delta", rep.hull_delta},
              {"pinsker_bound", rep.pinsker_bound},
              {"rows", rows}};
  write_json(ctx.out_dir() / "aliasing_synthetic.json", result);
  write_file_atomic(ctx.out_dir() / "aliasing_synthetic.csv", csv);
  t << "js_weighted " << fmt(rep.js_weighted_value) << ", numeric minimum " << fmt(rep.numeric_fixed_summary) << "\n";
  emit(ctx, result, t.str());
  return 0;
}

// ---------------------------------------------------------------- theory-check

inline int theory_check(Context& ctx) {
  const auto checks = run_theory_checks(ctx.cfg.seed, ctx.cfg.theory_scale);
  Json arr = Json::array();
  bool all = true;
  std::ostringstream t;
  for (const auto& ch : checks) {
    all = all && ch.passed;
    arr.push_back(Json{{"name", ch.name}, {"passed", ch.passed}, {"cases", ch.cases}, {"violations", ch.violations},
                       {"worst", ch.worst}, {"tolerance", ch.tolerance}});
    t << (ch.passed ? "PASS " : "FAIL ") << std::left << std::setw(36) << ch.name << " cases=" << ch.cases
      << " violations=" << ch.violations << " worst=" << fmt(ch.worst) << "\n";
  }
  const Json result{{"seed", ctx.cfg.seed}, {"passed", all}, {"checks", arr}};
  write_json(ctx.out_dir() / "theory_check.json", result);
  emit(ctx, result, t.str());
  return all ? 0 : 2;
}

// ---------------------------------------------------------------- diagnose-aliasing

inline int diagnose(Context& ctx) {
  auto c = ctx.cfg;
  const auto ds = load(c.data_path, "data");
  warn_dropped(ctx, ds, c.data_path);
  c.diagnostic.seed = c.seed;
  const auto r = aliasing_diagnostic(ds.series, c.diagnostic);
  Json result{{"section", section_of(ds, c.data_path)},
              {"samples", r.samples},
              {"neighbor_jsd", {{"median", r.neighbor_jsd_median}, {"q90", r.neighbor_jsd_q90}}},
              {"successor_jsd", {{"median", r.successor_jsd_median}, {"q90", r.successor_jsd_q90}}},
              {"history_better_rate", r.history_better_rate ? Json(*r.history_better_rate) : Json(nullptr)},
              {"degenerate", !r.history_better_rate.has_value()},
              {"ties", r.ties},
              {"ratio", std::isfinite(r.ratio) ? Json(r.ratio) : Json("inf")},
              {"evidence", r.evidence}};
  write_json(ctx.out_dir() / "diagnostic.json", result);
  std::ostringstream t;
  t << "neighbour JSD median " << fmt(r.neighbor_jsd_median) << ", successor JSD median "
    << fmt(r.successor_jsd_median) << ", history-better rate "
    << (r.history_better_rate ? fmt(*r.history_better_rate) : std::string("degenerate")) << ", evidence "
    << r.evidence << "\n";
  emit(ctx, result, t.str());
  return 0;
}

// ---------------------------------------------------------------- seed-study

inline int seed_study_cmd(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto tr = load(c.train_path, "train");
  const auto va = load(c.val_path, "val");
  const auto te = load(c.test_path, "test");
  const bool do_rollout = std::any_of(te.series.begin(), te.series.end(), [&](const SimplexSeries& s) {
    return s.length() >= c.rollout.context_len + c.rollout.horizon;
  });
  auto run = [&](std::uint64_t seed) {
    const auto res = train(c.cast, tr.series, va.series, c.training, seed);
    const CastForecaster f(res.model);
    const auto off = evaluate_offline(f, te.series, c.offline);
    std::vector<std::pair<std::string, double>> out = {
        {"offline_kl", off.kl}, {"offline_jsd", off.jsd}, {"offline_l1", off.l1}, {"best_val_kl", res.log.best_val_kl}};
    if (do_rollout) out.emplace_back("rollout_jsd", evaluate_rollout(f, te.series, c.rollout).means.jsd);
    return out;
  };
  const auto rows = seed_study(run, c.seeds);
  Json arr = Json::array();
  std::ostringstream t;
  for (const auto& r : rows) {
    arr.push_back(Json{{"metric", r.metric}, {"mean", r.stats.mean}, {"sd", r.stats.sd}, {"values", r.values}});
    t << std::left << std::setw(14) << r.metric << fmt(r.stats.mean) << " +- " << fmt(r.stats.sd) << "\n";
  }
  const Json result{{"section", section_of(te, c.test_path)},
                    {"variant", std::string(to_string(c.cast.variant))},
                    {"seeds", c.seeds},
                    {"rows", arr}};
  write_json(ctx.out_dir() / "seed_study.json", result);
  emit(ctx, result, t.str());
  return 0;
}

// ---------------------------------------------------------------- ablation

inline int ablation_cmd(Context& ctx) {
  const auto& c = ctx.cfg;
  std::vector<SimplexSeries> tr, va, te;
  std::string section;
  AblationInputs in;
  in.base = c.cast;
  in.seed = c.seed;
  in.offline = c.offline;
  if (c.train_path.empty()) {
    // No dataset given: the synthetic aliasing benchmark with its own training settings.
    const auto s = default_scenario();
    tr = build_aliasing_dataset(s, c.synthetic.n_train, c.synthetic.noise, derive_seed(c.seed, 10), "train").series;
    va = build_aliasing_dataset(s, c.synthetic.n_val, c.synthetic.noise, derive_seed(c.seed, 11), "val").series;
    te = build_aliasing_dataset(s, c.synthetic.n_val, c.synthetic.noise, derive_seed(c.seed, 12), "test").series;
    section = "synthetic_aliasing";
    in.base.rho_max = c.synthetic.rho_max;
    in.base.reg.strength *= c.synthetic.reg_scale;
    in.base.reg.off_identity *= c.synthetic.reg_scale;
    in.base.reg.smoothness *= c.synthetic.reg_scale;
    in.base.reg.mean_shift *= c.synthetic.reg_scale;
    in.train_config = c.synthetic.train;
    in.offline = OfflineOptions{};
  } else {
    const auto a = load(c.train_path, "train"), b = load(c.val_path, "val"), d = load(c.test_path, "test");
    tr = a.series;
    va = b.series;
    te = d.series;
    section = section_of(d, c.test_path);
    in.train_config = c.training;
    if (std::any_of(te.begin(), te.end(), [&](const SimplexSeries& s) {
          return s.length() >= c.rollout.context_len + c.rollout.horizon;
        }))
      in.rollout = c.rollout;
  }
  in.train = &tr;
  in.val = &va;
  in.test = &te;
  const auto rows = run_ablation(in);
  Json arr = Json::array();
  std::ostringstream t;
  t << "ablation on " << section << "\n";
  for (const auto& r : rows) {
    Json j{{"variant", std::string(to_string(r.variant))}, {"offline_kl", r.offline_kl}, {"offline_delta", r.offline_delta}};
    if (r.rollout_jsd) {
      j["rollout_jsd"] = *r.rollout_jsd;
      j["rollout_delta"] = *r.rollout_delta;
    }
    arr.push_back(j);
    t << std::left << std::setw(22) << to_string(r.variant) << "offline KL " << std::setw(12) << fmt(r.offline_kl)
      << "delta " << std::setw(12) << fmt(100.0 * r.offline_delta) + "%";
    if (r.rollout_jsd) t << " rollout JSD " << fmt(*r.rollout_jsd) << " delta " << fmt(100.0 * *r.rollout_delta) << "%";
    t << "\n";
  }
  const Json result{{"section", section}, {"seed", c.seed}, {"rows", arr}};
  write_json(ctx.out_dir() / ("ablation_" + section + ".json"), result);
  emit(ctx, result, t.str());
  return 0;
}

// ---------------------------------------------------------------- report

/// Rank table over every offline/rollout result file found in --in.
inline int report_cmd(Context& ctx) {
  const auto& c = ctx.cfg;
  require(!c.in_dir.empty(), ErrorCode::InvalidArgument, "missing --in");
  require(std::filesystem::is_directory(c.in_dir), ErrorCode::InvalidArgument, c.in_dir + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(c.in_dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<std::string> methods, columns;
  std::map<std::pair<std::string, std::string>, double> cell;
  for (const auto& f : files) {
    Json j;
    try {
      j = Json::parse(read_file(f));
    } catch (const Json::exception&) {
      continue;
    }
    if (!j.is_object() || !j.contains("kind") || !j.contains("methods")) continue;
    const std::string kind = j["kind"].get<std::string>();
    if (kind != "offline" && kind != "rollout") continue;
    const std::string col = j["section"].get<std::string>() + "/" + kind;
    if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
    for (const auto& m : j["methods"]) {
      const std::string name = m["method"].get<std::string>();
      if (std::find(methods.begin(), methods.end(), name) == methods.end()) methods.push_back(name);
      if (m.contains(c.metric) && m[c.metric].is_number()) cell[{name, col}] = m[c.metric].get<double>();
    }
  }
  require(!methods.empty(), ErrorCode::InvalidArgument, "no offline or rollout results under " + c.in_dir);
  std::vector<std::vector<double>> vals(methods.size(), std::vector<double>(columns.size(), std::nan("")));
  for (std::size_t i = 0; i < methods.size(); ++i)
    for (std::size_t k = 0; k < columns.size(); ++k) {
      const auto it = cell.find({methods[i], columns[k]});
      if (it != cell.end()) vals[i][k] = it->second;
    }
  const auto rm = rank_aggregate(methods, columns, vals);
  std::string csv = "method,section,metric,value,rank\n";
  Json rows = Json::array();
  std::ostringstream t;
  t << "ranks by " << c.metric << " over " << columns.size() << " sections\n";
  for (std::size_t i = 0; i < methods.size(); ++i) {
    Json ranks = Json::object();
    for (std::size_t k = 0; k < columns.size(); ++k) {
      csv += methods[i] + "," + columns[k] + "," + c.metric + "," + csv_number(vals[i][k]) + "," +
             csv_number(rm.ranks[i][k]) + "\n";
      ranks[columns[k]] = std::isnan(rm.ranks[i][k]) ? Json(nullptr) : Json(rm.ranks[i][k]);
    }
    csv += methods[i] + ",average," + c.metric + ",," + csv_number(rm.average[i]) + "\n";
    rows.push_back(Json{{"method", methods[i]}, {"ranks", ranks}, {"average_rank", rm.average[i]}, {"top1", rm.top1[i]}});
    t << std::left << std::setw(22) << methods[i] << "average rank " << std::setw(8) << fmt(rm.average[i]) << "top-1 "
      << rm.top1[i] << "\n";
  }
  const Json result{{"metric", c.metric}, {"sections", columns}, {"methods", rows}};
  write_file_atomic(ctx.out_dir() / "report.csv", csv);
  write_json(ctx.out_dir() / "report.json", result);
  emit(ctx, result, t.str());
  return 0;
}

inline bool is_validation_error(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::NegativeMass:
    case ErrorCode::AllZeroMass:
    case ErrorCode::ZeroComponent:
    case ErrorCode::WeightSumInvalid:
    case ErrorCode::ParseError:
    case ErrorCode::SchemaVersionMismatch:
    case ErrorCode::TooFewSystems:
    case ErrorCode::TooFewSequences:
    case ErrorCode::NoEligibleSequences:
    case ErrorCode::NoScoredPositions:
    case ErrorCode::EmptyPrefix:
    case ErrorCode::EmptyBatch:
    case ErrorCode::EmptyBank:
      return true;
    default:
      return false;
  }
}

}  // namespace cli

/// Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Causal simplex-transition forecasting toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  struct Command {
    CLI::App* app;
    std::function<int(cli::Context&)> run;
    cli::Overrides ov;
    std::string config_path;
    bool json = false;
  };
  std::vector<std::unique_ptr<Command>> cmds;
  auto add = [&](const std::string& name, const std::string& help, std::function<int(cli::Context&)> run) {
    auto c = std::make_unique<Command>();
    c->app = app.add_subcommand(name, help);
    c->run = std::move(run);
    c->app->add_option("--config", c->config_path, "JSON run configuration")->check(CLI::ExistingFile);
    c->app->add_flag("--json", c->json, "print the machine-readable report on stdout");
    c->ov.add<std::uint64_t>(c->app, "--seed", [](RunConfig& r, std::uint64_t v) { r.seed = v; }, "master seed");
    c->ov.add<std::string>(c->app, "--out", [](RunConfig& r, const std::string& v) { r.out = v; },
                           "output directory")
        ->envname("CAST_OUT_DIR");
    cmds.push_back(std::move(c));
    return cmds.back().get();
  };
  using R = RunConfig;
  auto data_flags = [](Command* c, bool train, bool val, bool test) {
    if (train) c->ov.add<std::string>(c->app, "--train", [](R& r, const std::string& v) { r.train_path = v; }, "training split");
    if (val) c->ov.add<std::string>(c->app, "--val", [](R& r, const std::string& v) { r.val_path = v; }, "validation split");
    if (test) c->ov.add<std::string>(c->app, "--test", [](R& r, const std::string& v) { r.test_path = v; }, "test split");
  };
  auto model_flags = [](Command* c) {
    c->ov.add<std::string>(c->app, "--variant", [](R& r, const std::string& v) { r.cast.variant = parse_variant(v); },
                           "full | no_structural_reg | anchor_only | single_head | fixed_local_kernel | no_persistence_mix");
    c->ov.add<std::size_t>(c->app, "--steps", [](R& r, std::size_t v) { r.training.steps = v; }, "optimizer steps");
    c->ov.add<double>(c->app, "--lr", [](R& r, double v) { r.training.lr = v; }, "peak learning rate");
    c->ov.add<std::size_t>(c->app, "--batch", [](R& r, std::size_t v) { r.training.batch = v; }, "blocks per step");
    c->ov.add<std::size_t>(c->app, "--block-len", [](R& r, std::size_t v) { r.training.block_len = v; },
                           "scored positions per block (0 = whole series)");
    c->ov.add<std::size_t>(c->app, "--window", [](R& r, std::size_t v) { r.cast.features.window = v; },
                           "feature window");
  };
  auto method_flags = [](Command* c) {
    c->ov.add<std::vector<std::string>>(c->app, "--methods", [](R& r, const std::vector<std::string>& v) { r.methods = v; },
                                        "comma-separated method list")
        ->delimiter(',');
    c->ov.add<std::string>(c->app, "--checkpoint", [](R& r, const std::string& v) { r.checkpoint = v; },
                           "trained CAST checkpoint");
  };
  auto seeds_flag = [](Command* c) {
    c->ov.add<std::vector<std::uint64_t>>(c->app, "--seeds", [](R& r, const std::vector<std::uint64_t>& v) { r.seeds = v; },
                                          "comma-separated seeds")
        ->delimiter(',');
  };

  auto* sim = add("simulate-queues", "simulate a queue-occupancy benchmark section", cli::simulate_queues);
  sim->ov.add<std::string>(sim->app, "--section", [](R& r, const std::string& v) { r.section = v; },
                           "homogeneous | nonhomogeneous | combined")
      ->check(CLI::IsMember({"homogeneous", "nonhomogeneous", "combined"}));
  sim->ov.add<std::size_t>(sim->app, "--systems", [](R& r, std::size_t v) { r.queue.n_systems = v; }, "systems per section");
  sim->ov.add<std::size_t>(sim->app, "--arrivals", [](R& r, std::size_t v) { r.queue.n_arrivals = v; }, "arrivals per replication");
  sim->ov.add<std::size_t>(sim->app, "--replications", [](R& r, std::size_t v) { r.queue.n_replications = v; }, "replications per system");
  sim->ov.add<double>(sim->app, "--dt", [](R& r, double v) { r.queue.dt = v; }, "sampling grid spacing");
  sim->ov.add<std::size_t>(sim->app, "--workers", [](R& r, std::size_t v) { r.queue.workers = v; }, "worker threads");

  auto* tr = add("train", "train a CAST model", cli::train_cmd);
  data_flags(tr, true, true, false);
  model_flags(tr);

  auto* ev = add("evaluate", "teacher-forced one-step evaluation", cli::evaluate_cmd);
  data_flags(ev, true, false, true);
  method_flags(ev);
  ev->ov.add<std::size_t>(ev->app, "--max-sequences", [](R& r, std::size_t v) { r.offline.max_sequences = v; }, "0 = all");
  ev->ov.add<std::size_t>(ev->app, "--max-positions", [](R& r, std::size_t v) { r.offline.max_positions_per_sequence = v; }, "0 = all");

  auto* ro = add("rollout", "autoregressive rollout evaluation", cli::rollout_cmd);
  data_flags(ro, true, false, true);
  method_flags(ro);
  ro->ov.add<std::size_t>(ro->app, "--context", [](R& r, std::size_t v) { r.rollout.context_len = v; }, "context length");
  ro->ov.add<std::size_t>(ro->app, "--horizon", [](R& r, std::size_t v) { r.rollout.horizon = v; }, "rollout horizon");
  ro->ov.add<std::size_t>(ro->app, "--max-examples", [](R& r, std::size_t v) { r.rollout.max_examples = v; }, "examples per section");
  ro->ov.flag(ro->app, "--final-step", [](R& r) { r.rollout.final_step_only = true; }, "score only the last horizon step");

  auto* syn = add("aliasing-synthetic", "synthetic latent-kernel aliasing experiment", cli::aliasing_synthetic);
  seeds_flag(syn);
  syn->ov.add<std::size_t>(syn->app, "--n-train", [](R& r, std::size_t v) { r.synthetic.n_train = v; }, "training sequences");
  syn->ov.add<std::size_t>(syn->app, "--n-val", [](R& r, std::size_t v) { r.synthetic.n_val = v; }, "validation sequences");
  syn->ov.add<double>(syn->app, "--noise", [](R& r, double v) { r.synthetic.noise = v; }, "Dirichlet mixing noise");
  syn->ov.add<std::size_t>(syn->app, "--steps", [](R& r, std::size_t v) { r.synthetic.train.steps = v; }, "optimizer steps");

  auto* th = add("theory-check", "numerical checks of the aliasing theory and operator invariants", cli::theory_check);
  th->ov.add<std::size_t>(th->app, "--scale", [](R& r, std::size_t v) { r.theory_scale = v; }, "random cases per check");

  auto* dg = add("diagnose-aliasing", "cross-sequence aliasing diagnostic", cli::diagnose);
  dg->ov.add<std::string>(dg->app, "--data", [](R& r, const std::string& v) { r.data_path = v; }, "dataset file");
  dg->ov.add<std::size_t>(dg->app, "--samples", [](R& r, std::size_t v) { r.diagnostic.n_samples = v; }, "sampled states");
  dg->ov.add<std::size_t>(dg->app, "--window", [](R& r, std::size_t v) { r.diagnostic.window = v; }, "history window");

  auto* ss = add("seed-study", "train and evaluate CAST over several seeds", cli::seed_study_cmd);
  data_flags(ss, true, true, true);
  model_flags(ss);
  seeds_flag(ss);

  auto* ab = add("ablation", "train every variant and report deltas against full", cli::ablation_cmd);
  data_flags(ab, true, true, true);
  model_flags(ab);

  auto* rp = add("report", "rank tables over result files", cli::report_cmd);
  rp->ov.add<std::string>(rp->app, "--in", [](R& r, const std::string& v) { r.in_dir = v; }, "directory of results");
  rp->ov.add<std::string>(rp->app, "--metric", [](R& r, const std::string& v) { r.metric = v; }, "metric to rank")
      ->check(CLI::IsMember({"kl", "jsd", "l1", "bray_curtis", "w1"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }
  for (const auto& c : cmds) {
    if (!c->app->parsed()) continue;
    try {
      RunConfig cfg;
      if (!c->config_path.empty()) {
        Json j;
        try {
          j = Json::parse(read_file(c->config_path));
        } catch (const Json::parse_error& e) {
          fail(ErrorCode::ParseError, c->config_path + ": " + e.what());
        }
        cfg = run_config_from_json(j);
      }
      c->ov.apply(cfg);
      cli::Context ctx{cfg, c->json, out, err};
      return c->run(ctx);
    } catch (const Error& e) {
      err << "error: " << e.what() << "\n";
      return cli::is_validation_error(e.code()) ? 1 : 2;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return 2;
    }
  }
  return 1;
}

}  // namespace cast
