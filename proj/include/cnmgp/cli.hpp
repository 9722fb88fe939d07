#pragma once

// Run configuration, the command implementations behind the cnmgp tool, and
// the seeded train/evaluate trial shared by `experiment`.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cnmgp/baseline.hpp"
#include "cnmgp/data.hpp"
#include "cnmgp/diff.hpp"
#include "cnmgp/predict.hpp"
#include "cnmgp/random.hpp"
#include "cnmgp/trainer.hpp"

namespace cnmgp::cli {

inline constexpr const char* kVersion = "0.1.0";

using nlohmann::json;
namespace fs = std::filesystem;

/// Every accepted key with its default. A null default accepts a string or null.
inline json default_config() {
  return {
      {"seed", 0},
      {"data",
       {{"kind", "LF"},
        {"n_per_dim", 100},
        {"noise_sd", 1.0},
        {"train_csv", nullptr},
        {"test_csv", nullptr},
        {"input_cols", {"t"}},
        {"output_cols", {"y1", "y2"}},
        {"test_fraction", 0.0},
        {"target_output", nullptr},
        {"standardize", true}}},
      {"model",
       {{"num_inducing", 20},
        {"sigma2_err", 1.0},
        {"theta_l", {{"variance", 1.0}, {"lengthscale", std::exp(2.0)}}},
        {"theta_ell", {{"variance", 1.0}, {"lengthscale", 1.0}}},
        {"trainable",
         {{"sigma2_err", true},
          {"l_variance", true},
          {"l_lengthscale", false},
          {"ell_variance", true},
          {"ell_lengthscale", false},
          {"inducing", false}}},
        {"nugget", 1e-6},
        {"base_jitter", 1e-6}}},
      {"train",
       {{"epochs", 2000},
        {"batch_size", 256},
        {"learning_rate", 0.005},
        {"n_samples", 1},
        {"method", "marginalized"},
        {"coordinates", "whitened"},
        {"checkpoint_every", 0},
        {"max_steps", 0},
        {"adam", {{"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}}}}},
      {"predict",
       {{"model", nullptr}, {"draws", 500}, {"include_noise", true}, {"grid", {{"lo", 0.0}, {"hi", 1.0}, {"points", 201}}}}},
      {"eval", {{"predictions", nullptr}}},
      {"baseline", {{"restarts", 5}, {"max_iterations", 200}, {"gradient_tolerance", 1e-6}}},
      {"experiment", {{"trials", 10}}},
      {"output", {{"dir", "out"}}},
  };
}

namespace detail {

inline bool same_kind(const json& def, const json& v) {
  if (def.is_null()) return v.is_null() || v.is_string() || v.is_number_integer();
  if (def.is_number()) return v.is_number();
  return def.type() == v.type();
}

/// Overlays `over` on `base`, checking keys and leaf types against `schema`.
inline void merge_into(json& base, const json& over, const json& schema, const std::string& where) {
  if (!over.is_object()) throw ConfigError("config: " + (where.empty() ? std::string("top level") : where) + " must be an object");
  for (const auto& [key, value] : over.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!schema.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    const json& def = schema.at(key);
    if (def.is_object()) {
      merge_into(base[key], value, def, path);
      continue;
    }
    if (!same_kind(def, value)) throw ConfigError("config: wrong type for '" + path + "'");
    if (def.is_array() && !std::all_of(value.begin(), value.end(), [](const json& e) { return e.is_string(); }))
      throw ConfigError("config: '" + path + "' must be a list of strings");
    base[key] = value;
  }
}

inline json at_path(const json& j, const std::string& path) {
  const json* cur = &j;
  std::stringstream ss(path);
  for (std::string part; std::getline(ss, part, '.');) cur = &cur->at(part);
  return *cur;
}

}  // namespace detail

/// Defaults overlaid with `user`; unknown keys and type changes are rejected.
inline json resolve_config(const json& user) {
  json cfg = default_config();
  detail::merge_into(cfg, user, default_config(), "");
  return cfg;
}

/// Applies one `dotted.key=value` override. The value is parsed as JSON and
/// taken as a plain string when that fails.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects KEY=VALUE, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  detail::merge_into(cfg, patch, default_config(), "");
}

inline json load_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Typed views of a resolved config

struct DataSpec {
  std::string kind;
  std::size_t n_per_dim = 100;
  double noise_sd = 1.0;
  std::optional<fs::path> train_csv, test_csv;
  std::vector<std::string> input_cols, output_cols;
  double test_fraction = 0.0;
  std::optional<std::size_t> target_output;
  bool standardize = true;
};

struct ModelSpec {
  std::size_t num_inducing = 20;
  HyperParams hypers;
};

struct PredictSpec {
  std::optional<fs::path> model;
  std::size_t draws = 500;
  bool include_noise = true;
  double grid_lo = 0.0, grid_hi = 1.0;
  std::size_t grid_points = 201;
};

struct RunConfig {
  json raw;
  std::uint64_t seed = 0;
  DataSpec data;
  ModelSpec model;
  TrainConfig train;
  PredictSpec predict;
  std::optional<fs::path> eval_predictions;
  IgprConfig baseline;
  std::size_t trials = 10;
  fs::path out;
};

namespace detail {

inline std::size_t count(const json& j, const std::string& path) {
  const json v = at_path(j, path);
  if (v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0)) return v.get<std::size_t>();
  if (v.is_number_float() && v.get<double>() >= 0.0 && std::floor(v.get<double>()) == v.get<double>())
    return static_cast<std::size_t>(v.get<double>());
  throw ConfigError("config: '" + path + "' must be a non-negative integer");
}

inline double real(const json& j, const std::string& path) { return at_path(j, path).get<double>(); }

inline std::optional<fs::path> maybe_path(const json& j, const std::string& path) {
  const json v = at_path(j, path);
  if (v.is_null()) return std::nullopt;
  if (!v.is_string()) throw ConfigError("config: '" + path + "' must be a path");
  return fs::path(v.get<std::string>());
}

inline RbfKernel rbf(const json& j, const std::string& path) {
  return {real(j, path + ".variance"), real(j, path + ".lengthscale")};
}

}  // namespace detail

/// Typed, validated view of a resolved config. Sub-seeds derive from "seed".
inline RunConfig parse_run_config(const json& cfg) try {
  using detail::count;
  using detail::real;
  RunConfig rc;
  rc.raw = cfg;
  const json& s = cfg.at("seed");
  if (!s.is_number_integer() && !s.is_number_unsigned()) throw ConfigError("config: 'seed' must be an integer");
  rc.seed = s.is_number_unsigned() ? s.get<std::uint64_t>() : static_cast<std::uint64_t>(s.get<long long>());

  auto& d = rc.data;
  d.kind = cfg.at("data").at("kind").get<std::string>();
  if (d.kind != "csv") parse_synthetic_kind(d.kind);
  d.n_per_dim = count(cfg, "data.n_per_dim");
  d.noise_sd = real(cfg, "data.noise_sd");
  d.train_csv = detail::maybe_path(cfg, "data.train_csv");
  d.test_csv = detail::maybe_path(cfg, "data.test_csv");
  d.input_cols = cfg.at("data").at("input_cols").get<std::vector<std::string>>();
  d.output_cols = cfg.at("data").at("output_cols").get<std::vector<std::string>>();
  d.test_fraction = real(cfg, "data.test_fraction");
  if (!cfg.at("data").at("target_output").is_null()) d.target_output = count(cfg, "data.target_output");
  d.standardize = cfg.at("data").at("standardize").get<bool>();
  if (d.kind == "csv" && !d.train_csv) throw ConfigError("config: data.kind = csv needs data.train_csv");
  if (d.kind != "csv" && d.test_fraction != 0.0) throw ConfigError("config: data.test_fraction applies to csv data only");

  auto& m = rc.model;
  m.num_inducing = count(cfg, "model.num_inducing");
  m.hypers = HyperParams::make(real(cfg, "model.sigma2_err"), detail::rbf(cfg, "model.theta_l"),
                               detail::rbf(cfg, "model.theta_ell"));
  const json& t = cfg.at("model").at("trainable");
  m.hypers.trainable = {t.at("sigma2_err").get<bool>(),    t.at("l_variance").get<bool>(),
                        t.at("l_lengthscale").get<bool>(), t.at("ell_variance").get<bool>(),
                        t.at("ell_lengthscale").get<bool>(), t.at("inducing").get<bool>()};
  m.hypers.kernel.nugget = real(cfg, "model.nugget");
  m.hypers.kernel.base_jitter = real(cfg, "model.base_jitter");
  if (!(m.hypers.kernel.nugget >= 0.0) || !(m.hypers.kernel.base_jitter > 0.0))
    throw ConfigError("config: model.nugget must be >= 0 and model.base_jitter > 0");

  auto& tr = rc.train;
  tr.epochs = count(cfg, "train.epochs");
  tr.batch_size = count(cfg, "train.batch_size");
  tr.learning_rate = real(cfg, "train.learning_rate");
  tr.n_samples = count(cfg, "train.n_samples");
  tr.method = parse_estimator(cfg.at("train").at("method").get<std::string>());
  tr.coordinates = parse_coordinates(cfg.at("train").at("coordinates").get<std::string>());
  tr.checkpoint_every = count(cfg, "train.checkpoint_every");
  tr.max_steps = count(cfg, "train.max_steps");
  tr.adam = {real(cfg, "train.adam.beta1"), real(cfg, "train.adam.beta2"), real(cfg, "train.adam.eps")};
  tr.seed = derive_seed(rc.seed, 3);
  tr.validate();

  auto& p = rc.predict;
  p.model = detail::maybe_path(cfg, "predict.model");
  p.draws = count(cfg, "predict.draws");
  p.include_noise = cfg.at("predict").at("include_noise").get<bool>();
  p.grid_lo = real(cfg, "predict.grid.lo");
  p.grid_hi = real(cfg, "predict.grid.hi");
  p.grid_points = count(cfg, "predict.grid.points");
  if (p.draws < 1) throw ConfigError("config: predict.draws must be at least 1");

  rc.eval_predictions = detail::maybe_path(cfg, "eval.predictions");
  rc.baseline = {count(cfg, "baseline.restarts"), count(cfg, "baseline.max_iterations"),
                 real(cfg, "baseline.gradient_tolerance")};
  rc.trials = count(cfg, "experiment.trials");
  rc.out = cfg.at("output").at("dir").get<std::string>();
  return rc;
} catch (const json::exception& e) {
  throw ConfigError(std::string("config: ") + e.what());
}

/// Sub-seed streams of a run.
struct Seeds {
  std::uint64_t data, split, predict, baseline;
};

inline Seeds seeds_of(std::uint64_t seed) {
  return {derive_seed(seed, 1), derive_seed(seed, 2), derive_seed(seed, 4), derive_seed(seed, 5)};
}

/// Thread count from CNMGP_THREADS; 1 when unset or invalid.
inline std::size_t env_threads() {
  const char* v = std::getenv("CNMGP_THREADS");
  if (!v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  return end != v && *end == '\0' && n > 0 ? static_cast<std::size_t>(n) : 1;
}

// ---------------------------------------------------------------------------
// Data and trials

struct DataPair {
  Dataset train;
  Dataset test;
};

inline DataPair load_data(const DataSpec& d, std::uint64_t seed) {
  const Seeds sd = seeds_of(seed);
  if (d.kind != "csv") {
    auto sp = generate_synthetic(parse_synthetic_kind(d.kind), d.n_per_dim, d.noise_sd, sd.data);
    return {std::move(sp.train), std::move(sp.test)};
  }
  Dataset train = load_csv(*d.train_csv, d.input_cols, d.output_cols);
  if (d.test_csv) return {std::move(train), load_csv(*d.test_csv, d.input_cols, d.output_cols)};
  if (d.test_fraction > 0.0) {
    auto s = split(train, d.test_fraction, sd.split, d.target_output);
    return {std::move(s.train), std::move(s.test)};
  }
  return {std::move(train), Dataset()};
}

/// The dataset the model is fitted to: standardized by training moments when enabled.
inline Dataset fitting_data(const Dataset& train, bool standardize_outputs) {
  return standardize_outputs ? standardize_with(train, output_moments(train)) : train;
}

struct TrialResult {
  std::uint64_t seed = 0;
  TrainResult fit;
  std::vector<OutputScaling> scaling;
  Metrics cnmgp;
  Metrics igpr;
  double train_seconds = 0.0;
};

/// Trains CNMGP and IGPR on the dataset of rc.seed and scores both on the test
/// entries in original units. `seed` drives training, prediction and restarts
/// only, so trials of one run share their data.
inline TrialResult run_trial(const RunConfig& rc, std::uint64_t seed, std::size_t threads = 1) {
  const Seeds sd = seeds_of(seed);
  const DataPair data = load_data(rc.data, rc.seed);
  const Dataset fit = fitting_data(data.train, rc.data.standardize);
  TrainConfig tc = rc.train;
  tc.seed = derive_seed(seed, 3);
  TrialResult out;
  out.seed = seed;
  out.scaling = fit.scaling;
  const auto t0 = std::chrono::steady_clock::now();
  out.fit = train(fit, default_init(fit, rc.model.num_inducing, rc.model.hypers), rc.model.hypers, tc);
  out.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto entries = test_entries(data.test);
  const auto samples =
      predictive_samples(out.fit.state, out.fit.hypers, data.test.X(), rc.predict.draws, sd.predict, true, threads);
  out.cnmgp = metrics(entries, destandardize(samples.summary, fit.scaling));
  const IgprModel ig = igpr_fit(fit, sd.baseline, rc.baseline);
  out.igpr = metrics(entries, destandardize(igpr_summary(igpr_predict(ig, data.test.X())), fit.scaling));
  return out;
}

// ---------------------------------------------------------------------------
// Commands

struct CommandResult {
  std::vector<std::string> files;
};

namespace detail {

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline json metrics_json(const Metrics& m) {
  return {{"rmse", m.rmse}, {"alci", m.alci}, {"cr", m.cr}, {"count", m.count}};
}

inline Metrics metrics_from_json(const json& j) {
  return {j.at("rmse").get<double>(), j.at("alci").get<double>(), j.at("cr").get<double>(),
          j.at("count").get<std::size_t>()};
}

/// Overall metrics plus one block per output.
inline json metrics_report(const std::vector<TestEntry>& entries, const PredictiveSummary& s,
                           const std::vector<std::string>& output_names) {
  json j = metrics_json(metrics(entries, s));
  json per = json::array();
  for (std::size_t d = 0; d < s.mean.cols(); ++d) {
    std::vector<TestEntry> sub;
    for (const auto& e : entries)
      if (e.output == d) sub.push_back(e);
    json block = sub.empty() ? json{{"count", 0}} : metrics_json(metrics(sub, s));
    block["output"] = d < output_names.size() ? output_names[d] : "y" + std::to_string(d + 1);
    per.push_back(std::move(block));
  }
  j["per_output"] = std::move(per);
  return j;
}

inline Matrix grid_inputs(const PredictSpec& p, std::size_t p_in) {
  if (p_in != 1) throw ConfigError("predict.grid is defined for one input dimension; set predict.grid.points = 0");
  Matrix g(p.grid_points, 1);
  for (std::size_t i = 0; i < p.grid_points; ++i)
    g(i, 0) = p.grid_points == 1 ? p.grid_lo
                                 : p.grid_lo + (p.grid_hi - p.grid_lo) * static_cast<double>(i) /
                                                   static_cast<double>(p.grid_points - 1);
  return g;
}

struct SavedModel {
  ModelState model;
  std::vector<OutputScaling> scaling;
  std::vector<std::string> input_names, output_names;
};

inline json saved_model_json(const TrainResult& r, const Dataset& fit) {
  json j = state_to_json(r.state, r.hypers);
  json sc = json::array();
  for (const auto& s : fit.scaling) sc.push_back({{"mean", s.mean}, {"sd", s.sd}});
  j["scaling"] = std::move(sc);
  j["input_names"] = fit.input_names;
  j["output_names"] = fit.output_names;
  return j;
}

inline SavedModel load_model(const fs::path& path) {
  const json j = read_json(path);
  SavedModel out{state_from_json(j), {}, {}, {}};
  try {
    for (const auto& s : j.at("scaling")) out.scaling.push_back({s.at("mean").get<double>(), s.at("sd").get<double>()});
    out.input_names = j.at("input_names").get<std::vector<std::string>>();
    out.output_names = j.at("output_names").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw LayoutMismatch(path.string() + ": " + e.what());
  }
  if (out.scaling.size() != out.model.state.num_outputs()) throw LayoutMismatch(path.string() + ": scaling per output");
  return out;
}

inline fs::path model_path(const RunConfig& rc) { return rc.predict.model.value_or(rc.out / "model.json"); }

/// Reads a predictions CSV written for `test` back into a summary, checking
/// that its rows follow the test points in order.
inline PredictiveSummary read_predictions(const fs::path& path, const Dataset& test) {
  std::vector<std::string> inputs = test.input_names;
  const Dataset p = load_csv(path, inputs, {"output", "mean", "lower95", "upper95"});
  const std::size_t d_out = test.num_outputs();
  if (p.num_rows() != test.num_rows() * d_out)
    throw DataError(path.string() + ": expected " + std::to_string(test.num_rows() * d_out) + " prediction rows");
  PredictiveSummary s{Matrix(test.num_rows(), d_out), Matrix(test.num_rows(), d_out), Matrix(test.num_rows(), d_out)};
  for (std::size_t r = 0; r < p.num_rows(); ++r) {
    const std::size_t i = r / d_out, d = r % d_out;
    for (std::size_t c = 0; c < 4; ++c)
      if (!p.observed(r, c)) throw ParseError("empty prediction cell", r + 2, inputs.size() + c + 1);
    if (p.y(r, 0) != static_cast<double>(d + 1)) throw ParseError("output index out of order", r + 2, inputs.size() + 1);
    for (std::size_t k = 0; k < inputs.size(); ++k)
      if (p.X()(r, k) != test.X()(i, k)) throw ParseError("input does not match the test point", r + 2, k + 1);
    s.mean(i, d) = p.y(r, 1);
    s.lower(i, d) = p.y(r, 2);
    s.upper(i, d) = p.y(r, 3);
  }
  return s;
}

inline double sample_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// n − 1 denominator; 0 for a single value.
inline double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = sample_mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace detail

inline CommandResult cmd_generate(const RunConfig& rc) {
  if (rc.data.kind == "csv") throw ConfigError("generate: data.kind must be a synthetic system");
  const DataPair data = load_data(rc.data, rc.seed);
  save_csv(data.train, rc.out / "train.csv");
  save_csv(data.test, rc.out / "test.csv");
  detail::write_json(rc.out / "dataset.json", {{"kind", rc.data.kind},
                                               {"n_per_dim", rc.data.n_per_dim},
                                               {"noise_sd", rc.data.noise_sd},
                                               {"seed", rc.seed},
                                               {"data_seed", seeds_of(rc.seed).data},
                                               {"train_rows", data.train.num_rows()},
                                               {"test_rows", data.test.num_rows()}});
  return {{"train.csv", "test.csv", "dataset.json"}};
}

inline CommandResult cmd_train(const RunConfig& rc) {
  const DataPair data = load_data(rc.data, rc.seed);
  const Dataset fit = fitting_data(data.train, rc.data.standardize);
  TrainConfig tc = rc.train;
  CommandResult res{{"model.json", "trace.csv"}};
  if (tc.checkpoint_every > 0) {
    tc.checkpoint_path = rc.out / "checkpoint.json";
    res.files.push_back("checkpoint.json");
  }
  const TrainResult r = train(fit, default_init(fit, rc.model.num_inducing, rc.model.hypers), rc.model.hypers, tc);
  detail::write_json(rc.out / "model.json", detail::saved_model_json(r, fit));
  write_trace_csv(r.trace, rc.out / "trace.csv");
  return res;
}

inline CommandResult cmd_predict(const RunConfig& rc, std::size_t threads) {
  const auto saved = detail::load_model(detail::model_path(rc));
  const auto& [state, hypers] = saved.model;
  const DataPair data = load_data(rc.data, rc.seed);
  const std::uint64_t seed = seeds_of(rc.seed).predict;
  CommandResult res;
  if (data.test.num_rows() > 0) {
    const auto s = predictive_samples(state, hypers, data.test.X(), rc.predict.draws, seed, rc.predict.include_noise, threads);
    write_predictions_csv(rc.out / "predictions_test.csv", data.test.X(), data.test.input_names,
                          destandardize(s.summary, saved.scaling));
    res.files.push_back("predictions_test.csv");
  }
  if (rc.predict.grid_points > 0) {
    const Matrix g = detail::grid_inputs(rc.predict, state.inducing.Z.cols());
    const auto s = predictive_samples(state, hypers, g, rc.predict.draws, seed, rc.predict.include_noise, threads);
    write_predictions_csv(rc.out / "predictions_grid.csv", g, saved.input_names, destandardize(s.summary, saved.scaling));
    res.files.push_back("predictions_grid.csv");
  }
  return res;
}

inline CommandResult cmd_eval(const RunConfig& rc) {
  const DataPair data = load_data(rc.data, rc.seed);
  const fs::path pred = rc.eval_predictions.value_or(rc.out / "predictions_test.csv");
  const auto s = detail::read_predictions(pred, data.test);
  json report = detail::metrics_report(test_entries(data.test), s, data.test.output_names);
  report["predictions"] = pred.string();
  detail::write_json(rc.out / "metrics.json", report);
  return {{"metrics.json"}};
}

inline CommandResult cmd_correlations(const RunConfig& rc, std::size_t threads) {
  const auto saved = detail::load_model(detail::model_path(rc));
  if (rc.predict.grid_points < 1) throw ConfigError("correlations: predict.grid.points must be positive");
  const Matrix g = detail::grid_inputs(rc.predict, saved.model.state.inducing.Z.cols());
  const auto track =
      correlation_track(saved.model.state, saved.model.hypers, g, rc.predict.draws, seeds_of(rc.seed).predict, threads);
  write_correlations_csv(rc.out / "correlations.csv", track, saved.input_names);
  return {{"correlations.csv"}};
}

inline CommandResult cmd_baseline(const RunConfig& rc) {
  const DataPair data = load_data(rc.data, rc.seed);
  const Dataset fit = fitting_data(data.train, rc.data.standardize);
  const IgprModel model = igpr_fit(fit, seeds_of(rc.seed).baseline, rc.baseline);
  json params = json::array();
  for (const auto& o : model.outputs)
    params.push_back({{"variance", o.kernel.variance},
                      {"lengthscale", o.kernel.lengthscale},
                      {"noise", o.noise},
                      {"log_marginal", o.log_marginal}});
  CommandResult res{{"baseline_metrics.json"}};
  json report = {{"parameters", params}, {"standardized", rc.data.standardize}};
  if (data.test.num_rows() > 0) {
    const auto s = destandardize(igpr_summary(igpr_predict(model, data.test.X())), fit.scaling);
    write_predictions_csv(rc.out / "predictions_igpr.csv", data.test.X(), data.test.input_names, s);
    report["metrics"] = detail::metrics_report(test_entries(data.test), s, data.test.output_names);
    res.files.push_back("predictions_igpr.csv");
  }
  detail::write_json(rc.out / "baseline_metrics.json", report);
  return res;
}

/// Trials at seeds seed, seed + 1, ... on the dataset of the top-level seed;
/// writes seeds/seed_<s>.json and a summary computed from those files as written.
inline CommandResult cmd_experiment(const RunConfig& rc, std::size_t threads) {
  if (rc.trials < 1) throw ConfigError("experiment: experiment.trials must be at least 1");
  fs::create_directories(rc.out / "seeds");
  CommandResult res;
  std::vector<std::string> names(rc.trials);
  cnmgp::detail::parallel_draws(rc.trials, threads, [&](std::size_t k) {
    const std::uint64_t seed = rc.seed + k;
    const TrialResult t = run_trial(rc, seed, 1);
    names[k] = "seeds/seed_" + std::to_string(seed) + ".json";
    detail::write_json(rc.out / names[k], {{"seed", seed},
                                           {"cnmgp", detail::metrics_json(t.cnmgp)},
                                           {"igpr", detail::metrics_json(t.igpr)},
                                           {"sigma2_err", t.fit.hypers.sigma2_err()},
                                           {"final_elbo", t.fit.trace.records.empty() ? 0.0 : t.fit.trace.records.back().elbo},
                                           {"train_seconds", t.train_seconds}});
  });
  res.files = names;

  std::vector<Metrics> cn, ig;
  for (const auto& n : names) {
    const json j = detail::read_json(rc.out / n);
    cn.push_back(detail::metrics_from_json(j.at("cnmgp")));
    ig.push_back(detail::metrics_from_json(j.at("igpr")));
  }
  json summary = {{"trials", rc.trials}, {"kind", rc.data.kind}};
  std::ofstream csv(rc.out / "summary.csv", std::ios::binary);
  if (!csv) throw DataError("cannot write summary.csv");
  csv << "method,metric,mean,sd\n";
  for (const auto& [method, ms] : {std::pair{"cnmgp", &cn}, std::pair{"igpr", &ig}}) {
    const std::array<std::pair<const char*, double Metrics::*>, 3> fields{
        {{"rmse", &Metrics::rmse}, {"alci", &Metrics::alci}, {"cr", &Metrics::cr}}};
    for (const auto& [metric, get] : fields) {
      std::vector<double> v;
      for (const auto& m : *ms) v.push_back(m.*get);
      const double mean = detail::sample_mean(v), sd = detail::sample_sd(v);
      summary[method][metric] = {{"mean", mean}, {"sd", sd}};
      csv << method << ',' << metric << ',' << format_double(mean) << ',' << format_double(sd) << '\n';
    }
  }
  std::size_t wins = 0;
  for (std::size_t k = 0; k < cn.size(); ++k) wins += cn[k].rmse < ig[k].rmse;
  summary["cnmgp_rmse_wins"] = wins;
  detail::write_json(rc.out / "summary.json", summary);
  res.files.push_back("summary.json");
  res.files.push_back("summary.csv");
  return res;
}

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"generate", "train", "predict", "eval", "correlations", "baseline", "experiment"};
  return names;
}

/// Runs one command into rc.out and writes manifest.<command>.json next to its outputs.
inline CommandResult run_command(const std::string& command, const RunConfig& rc, std::size_t threads) {
  fs::create_directories(rc.out);
  const auto t0 = std::chrono::steady_clock::now();
  CommandResult res;
  if (command == "generate") res = cmd_generate(rc);
  else if (command == "train") res = cmd_train(rc);
  else if (command == "predict") res = cmd_predict(rc, threads);
  else if (command == "eval") res = cmd_eval(rc);
  else if (command == "correlations") res = cmd_correlations(rc, threads);
  else if (command == "baseline") res = cmd_baseline(rc);
  else if (command == "experiment") res = cmd_experiment(rc, threads);
  else throw ConfigError("unknown command '" + command + "'");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string canonical = rc.raw.dump();
  detail::write_json(rc.out / ("manifest." + command + ".json"), {{"command", command},
                                                {"config", rc.raw},
                                                {"config_hash", hex(fnv1a(canonical))},
                                                {"seed", rc.seed},
                                                {"versions",
                                                 {{"cnmgp", kVersion},
                                                  {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                                        std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                                        std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                                                  {"compiler", __VERSION__}}},
                                                {"threads", threads},
                                                {"wall_seconds", secs},
                                                {"files", res.files}});
  return res;
}

/// 1 configuration, 2 data, 3 numerical failure.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  if (dynamic_cast<const DataError*>(&e)) return 2;
  return 1;
}

}  // namespace cnmgp::cli
