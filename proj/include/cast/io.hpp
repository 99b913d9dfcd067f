#pragma once

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cast/model.hpp"
#include "cast/queue_sim.hpp"
#include "cast/simplex.hpp"
#include "cast/train.hpp"

namespace cast {

using Json = nlohmann::ordered_json;

inline constexpr int kDatasetFormatVersion = 1;

struct DatasetHeader {
  int format_version = kDatasetFormatVersion;
  std::size_t dim = 0;
  bool ordered = false;
  std::string section_name;
};

struct Dataset {
  DatasetHeader header;
  std::vector<SimplexSeries> series;
  std::size_t dropped_rows = 0;  // all-zero steps removed during ingest
};

/// Writes `contents` to a sibling temporary file, then renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::IoError, "cannot open " + tmp);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    require(static_cast<bool>(out), ErrorCode::IoError, "write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorCode::IoError, "rename to " + path.string() + " failed: " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// One JSON line; `extra` keys (e.g. system_id, config) precede the steps.
inline std::string series_line(const SimplexSeries& s, const Json& extra = Json::object()) {
  Json j;
  j["id"] = s.id();
  for (const auto& [k, v] : extra.items()) j[k] = v;
  Json steps = Json::array();
  for (const auto& p : s.steps()) steps.push_back(std::vector<double>(p.begin(), p.end()));
  j["steps"] = std::move(steps);
  const auto& mask = s.loss_mask();
  if (std::find(mask.begin(), mask.end(), false) != mask.end()) j["loss_mask"] = std::vector<bool>(mask.begin(), mask.end());
  return j.dump();
}

inline std::string header_line(const DatasetHeader& h) {
  Json j;
  j["format_version"] = h.format_version;
  j["D"] = h.dim;
  j["ordered"] = h.ordered;
  j["section_name"] = h.section_name;
  return j.dump();
}

inline std::string dataset_text(const DatasetHeader& h, const std::vector<SimplexSeries>& series,
                                const std::vector<Json>& extras = {}) {
  std::string out = header_line(h) + "\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    require_same_dim(series[i].dim(), h.dim);
    out += series_line(series[i], i < extras.size() ? extras[i] : Json::object());
    out += '\n';
  }
  return out;
}

inline void write_dataset(const std::filesystem::path& path, const DatasetHeader& h,
                          const std::vector<SimplexSeries>& series, const std::vector<Json>& extras = {}) {
  write_file_atomic(path, dataset_text(h, series, extras));
}

/// Parses a dataset from text; rows are normalized and all-zero rows dropped.
inline Dataset parse_dataset(std::istream& in) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(lineno, e.what());
    }
    try {
      if (!have_header) {
        if (!j.contains("format_version")) throw ParseError(lineno, "missing dataset header");
        ds.header.format_version = j.at("format_version").get<int>();
        if (ds.header.format_version != kDatasetFormatVersion)
          fail(ErrorCode::SchemaVersionMismatch, "format_version " + std::to_string(ds.header.format_version) +
                                                     ", expected " + std::to_string(kDatasetFormatVersion));
        ds.header.dim = j.at("D").get<std::size_t>();
        ds.header.ordered = j.at("ordered").get<bool>();
        ds.header.section_name = j.value("section_name", std::string());
        have_header = true;
        continue;
      }
      std::string id = j.contains("id") ? j.at("id").get<std::string>() : j.at("system_id").get<std::string>();
      const auto& rows = j.at("steps");
      if (!rows.is_array()) throw ParseError(lineno, "steps must be an array");
      std::vector<bool> mask_in;
      if (j.contains("loss_mask")) mask_in = j.at("loss_mask").get<std::vector<bool>>();
      if (!mask_in.empty() && mask_in.size() + 1 != rows.size())
        throw ParseError(lineno, "loss_mask length must be T-1");
      std::vector<Dist> steps;
      std::vector<std::size_t> kept;
      for (std::size_t t = 0; t < rows.size(); ++t) {
        const auto v = rows[t].get<std::vector<double>>();
        if (v.size() != ds.header.dim)
          throw ParseError(lineno, "step " + std::to_string(t) + " has " + std::to_string(v.size()) + " bins, D is " +
                                       std::to_string(ds.header.dim));
        double mass = 0.0;
        for (double x : v) {
          if (!(x >= 0.0)) throw ParseError(lineno, "negative or non-finite mass at step " + std::to_string(t));
          mass += x;
        }
        if (mass <= 0.0) {
          ++ds.dropped_rows;
          continue;
        }
        steps.push_back(normalize(v));
        kept.push_back(t);
      }
      if (steps.empty()) continue;
      std::vector<bool> mask;
      if (!mask_in.empty())
        for (std::size_t i = 1; i < kept.size(); ++i) mask.push_back(mask_in[kept[i] - 1]);
      else
        mask.assign(steps.size() - 1, true);
      ds.series.emplace_back(std::move(id), ds.header.ordered, std::move(steps), std::move(mask));
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::SchemaVersionMismatch) throw;
      throw ParseError(lineno, e.what());
    } catch (const Json::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
  if (!have_header) throw ParseError(lineno == 0 ? 1 : lineno, "missing dataset header");
  return ds;
}

inline Dataset ingest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot open " + path.string());
  return parse_dataset(in);
}

// ---------------------------------------------------------------- queue artifacts

inline Json to_json(const TimeDist& d) {
  Json j;
  j["family"] = std::string(to_string(d.family));
  j["mean"] = d.mean;
  switch (d.family) {
    case Family::two_normal_mixture:
      j["weight"] = d.weight;
      j["low"] = d.low;
      j["cv"] = d.cv;
      break;
    case Family::deterministic:
      break;
    default:
      j["shape"] = d.shape;
  }
  return j;
}

inline Json to_json(const QueueConfig& c) {
  Json j;
  j["arrival"] = to_json(c.arrival);
  j["service"] = to_json(c.service);
  if (c.modulation) j["modulation"] = {{"amplitude", c.modulation->amplitude}, {"period", c.modulation->period},
                                        {"phase", c.modulation->phase}};
  j["utilization"] = c.utilization();
  j["n_arrivals"] = c.n_arrivals;
  j["n_replications"] = c.n_replications;
  j["dt"] = c.dt;
  j["seed"] = c.seed;
  return j;
}

inline Json to_json(const QueuePriors& p) {
  return Json{{"arrival_mean", {p.arrival_mean_lo, p.arrival_mean_hi}},
              {"service_ratio", {p.service_ratio_lo, p.service_ratio_hi}},
              {"utilization_band", {p.util_lo, p.util_hi}},
              {"gamma_shape", {p.gamma_shape_lo, p.gamma_shape_hi}},
              {"erlang_max", p.erlang_max},
              {"lognormal_sigma", {p.lognormal_sigma_lo, p.lognormal_sigma_hi}},
              {"mix_weight", {p.mix_weight_lo, p.mix_weight_hi}},
              {"mix_low", {p.mix_low_lo, p.mix_low_hi}},
              {"mix_cv", {p.mix_cv_lo, p.mix_cv_hi}},
              {"hyperexp_c2", {p.hyper_c2_lo, p.hyper_c2_hi}},
              {"uniform_half_width", {p.uniform_half_lo, p.uniform_half_hi}},
              {"weibull_shape", {p.weibull_shape_lo, p.weibull_shape_hi}},
              {"amplitude", {p.amplitude_lo, p.amplitude_hi}},
              {"period", {p.period_lo, p.period_hi}},
              {"max_attempts", p.max_attempts}};
}

// ---------------------------------------------------------------- checkpoints

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'S', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline Json to_json(const CastConfig& c) {
  Json j;
  j["features"] = {{"window", c.features.window}, {"beta", c.features.beta}, {"ew_mean", c.features.ew_mean},
                   {"delta", c.features.delta}, {"moments", c.features.moments}};
  j["heads"] = c.heads;
  j["head_dim"] = c.head_dim;
  j["temperature"] = c.temperature;
  j["lambda_min"] = c.lambda_min;
  j["lambda_max"] = c.lambda_max;
  j["rho_max"] = c.rho_max;
  j["lambda_init"] = c.lambda_init;
  j["rho_init"] = c.rho_init;
  j["budget"] = {{"delta_mu", c.budget.delta_mu}, {"delta_sigma", c.budget.delta_sigma}, {"epsilon", c.budget.epsilon}};
  j["reg"] = {{"strength", c.reg.strength}, {"off_identity", c.reg.off_identity}, {"smoothness", c.reg.smoothness},
              {"mean_shift", c.reg.mean_shift}};
  j["kl_eps"] = c.kl_eps;
  j["memory_cap"] = c.memory_cap;
  j["use_retrieval"] = c.use_retrieval;
  j["variant"] = std::string(to_string(c.variant));
  return j;
}

namespace detail {

/// Copies known keys from `j` into `target`; any other key is a schema error.
class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    require(j.is_object(), ErrorCode::InvalidArgument, where_ + " must be an object");
  }
  template <class T>
  Reader& opt(const char* key, T& target) {
    seen_.push_back(key);
    if (!j_.contains(key)) return *this;
    try {
      target = j_.at(key).get<T>();
    } catch (const Json::exception&) {
      fail(ErrorCode::InvalidArgument, where_ + "." + key + " has the wrong type");
    }
    return *this;
  }
  const Json* sub(const char* key) {
    seen_.push_back(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  void done() const {
    for (const auto& [k, v] : j_.items())
      require(std::find(seen_.begin(), seen_.end(), k) != seen_.end(), ErrorCode::InvalidArgument,
              "unknown key " + where_ + "." + k);
  }

 private:
  const Json& j_;
  std::string where_;
  std::vector<std::string> seen_;
};

}  // namespace detail

inline CastConfig cast_config_from_json(const Json& j, CastConfig c = {}) {
  detail::Reader r(j, "cast");
  if (const Json* f = r.sub("features")) {
    detail::Reader fr(*f, "cast.features");
    fr.opt("window", c.features.window).opt("beta", c.features.beta).opt("ew_mean", c.features.ew_mean);
    fr.opt("delta", c.features.delta).opt("moments", c.features.moments).done();
  }
  r.opt("heads", c.heads).opt("head_dim", c.head_dim).opt("temperature", c.temperature);
  r.opt("lambda_min", c.lambda_min).opt("lambda_max", c.lambda_max).opt("rho_max", c.rho_max);
  r.opt("lambda_init", c.lambda_init).opt("rho_init", c.rho_init);
  if (const Json* b = r.sub("budget")) {
    detail::Reader br(*b, "cast.budget");
    br.opt("delta_mu", c.budget.delta_mu).opt("delta_sigma", c.budget.delta_sigma).opt("epsilon", c.budget.epsilon).done();
  }
  if (const Json* g = r.sub("reg")) {
    detail::Reader gr(*g, "cast.reg");
    gr.opt("strength", c.reg.strength).opt("off_identity", c.reg.off_identity).opt("smoothness", c.reg.smoothness);
    gr.opt("mean_shift", c.reg.mean_shift).done();
  }
  r.opt("kl_eps", c.kl_eps).opt("memory_cap", c.memory_cap).opt("use_retrieval", c.use_retrieval);
  std::string variant(to_string(c.variant));
  r.opt("variant", variant);
  c.variant = parse_variant(variant);
  r.done();
  require(c.features.window >= 1 && c.heads >= 1 && c.head_dim >= 1, ErrorCode::InvalidArgument,
          "window, heads and head_dim must be >= 1");
  require(c.lambda_min >= 0.0 && c.lambda_min < c.lambda_max && c.lambda_max <= 1.0, ErrorCode::InvalidArgument,
          "need 0 <= lambda_min < lambda_max <= 1");
  require(c.rho_max >= 0.0 && c.rho_max <= 1.0, ErrorCode::InvalidArgument, "rho_max must lie in [0, 1]");
  return c;
}

inline Json to_json(const TrainConfig& t) {
  return Json{{"steps", t.steps},         {"lr", t.lr},
              {"warmup", t.warmup},       {"weight_decay", t.weight_decay},
              {"clip_norm", t.clip_norm}, {"beta1", t.beta1},
              {"beta2", t.beta2},         {"adam_eps", t.adam_eps},
              {"block_len", t.block_len}, {"batch", t.batch},
              {"eval_every", t.eval_every}, {"val_max_positions", t.val_max_positions}};
}

inline TrainConfig train_config_from_json(const Json& j, TrainConfig t = {}) {
  detail::Reader r(j, "train");
  r.opt("steps", t.steps).opt("lr", t.lr).opt("warmup", t.warmup).opt("weight_decay", t.weight_decay);
  r.opt("clip_norm", t.clip_norm).opt("beta1", t.beta1).opt("beta2", t.beta2).opt("adam_eps", t.adam_eps);
  r.opt("block_len", t.block_len).opt("batch", t.batch).opt("eval_every", t.eval_every);
  r.opt("val_max_positions", t.val_max_positions).done();
  require(t.lr > 0.0 && t.batch >= 1, ErrorCode::InvalidArgument, "lr must be > 0 and batch >= 1");
  return t;
}

namespace detail {
inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::string& s, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, sizeof v);
  put_u64(s, v);
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& s) : s_(s) {}
  std::uint64_t u(int bytes) {
    require(pos_ + static_cast<std::size_t>(bytes) <= s_.size(), ErrorCode::ParseError, "checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s_[pos_++])) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t v = u(8);
    double d;
    std::memcpy(&d, &v, sizeof d);
    return d;
  }
  std::string bytes(std::size_t n) {
    require(pos_ + n <= s_.size(), ErrorCode::ParseError, "checkpoint truncated");
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool at_end() const { return pos_ == s_.size(); }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
};
}  // namespace detail

/// Magic, version, JSON header, then for every tensor: name, shape, row-major little-endian f64 values.
inline std::string checkpoint_bytes(const CastModel& m, const Json& extra = Json::object()) {
  Json header;
  header["config"] = to_json(m.config());
  header["dim"] = m.dim();
  header["ordered"] = m.ordered();
  header["variant"] = std::string(to_string(m.config().variant));
  for (const auto& [k, v] : extra.items()) header[k] = v;
  const std::string hs = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, hs.size());
  out += hs;
  const auto& blocks = m.layout().blocks();
  detail::put_u32(out, static_cast<std::uint32_t>(blocks.size()));
  const auto theta = m.params();
  for (const auto& b : blocks) {
    detail::put_u32(out, static_cast<std::uint32_t>(b.name.size()));
    out += b.name;
    detail::put_u32(out, 2);
    detail::put_u64(out, b.rows);
    detail::put_u64(out, b.cols);
    for (std::size_t i = 0; i < b.rows * b.cols; ++i) detail::put_f64(out, theta[b.offset + i]);
  }
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const CastModel& m, const Json& extra = Json::object()) {
  write_file_atomic(path, checkpoint_bytes(m, extra));
}

struct LoadedCheckpoint {
  CastModel model;
  Json header;
};

inline LoadedCheckpoint parse_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes);
  require(r.bytes(8) == std::string(kCheckpointMagic, 8), ErrorCode::ParseError, "not a checkpoint (bad magic)");
  const auto version = static_cast<std::uint32_t>(r.u(4));
  require(version == kCheckpointVersion, ErrorCode::SchemaVersionMismatch,
          "checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  Json header;
  try {
    header = Json::parse(r.bytes(r.u(8)));
  } catch (const Json::exception& e) {
    fail(ErrorCode::ParseError, std::string("checkpoint header: ") + e.what());
  }
  const CastConfig cfg = cast_config_from_json(header.at("config"));
  const auto d = header.at("dim").get<std::size_t>();
  const bool ordered = header.at("ordered").get<bool>();
  CastModel probe(cfg, d, ordered, std::uint64_t{0});
  std::vector<double> theta(probe.layout().total(), 0.0);
  const auto n = r.u(4);
  require(n == probe.layout().blocks().size(), ErrorCode::ParseError, "checkpoint tensor count does not match config");
  std::vector<std::string> seen;
  for (std::uint64_t k = 0; k < n; ++k) {
    const std::string name = r.bytes(r.u(4));
    const auto rank = r.u(4);
    std::vector<std::uint64_t> shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(r.u(8));
    const ParamBlock* b = probe.layout().find(name);
    require(b != nullptr, ErrorCode::ParseError, "unknown tensor " + name);
    require(std::find(seen.begin(), seen.end(), name) == seen.end(), ErrorCode::ParseError, "duplicate tensor " + name);
    seen.push_back(name);
    std::uint64_t size = 1;
    for (auto s : shape) size *= s;
    require(size == b->rows * b->cols, ErrorCode::ParseError, "tensor " + name + " has the wrong shape");
    for (std::uint64_t i = 0; i < size; ++i) theta[b->offset + i] = r.f64();
  }
  require(r.at_end(), ErrorCode::ParseError, "trailing bytes after checkpoint tensors");
  return {CastModel(cfg, d, ordered, std::move(theta)), header};
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace cast
