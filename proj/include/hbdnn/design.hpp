#pragma once

// A trained design: every network plus the configuration it was trained
// under, serialised to one JSON document and locked by a SHA-256 fingerprint
// of its canonical content.

#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>

#include <openssl/evp.h>

#include "hbdnn/calibration.hpp"

namespace hbdnn {

struct DesignConfig {
  EndpointConfig endpoint;
  ParameterSpaces spaces = default_parameter_spaces();
  bool reject_infeasible = false;
  HistoricalDataset history = example_history_j6();
  int n_control = 150;
  int n_treatment = 150;
  HierPriorConfig prior = HierPriorConfig::defaults(2);
  McmcConfig mcmc;
  int training_size = 2000;    // B
  int null_grid_size = 2000;   // B_1 = B_2 = B_12
  int null_replicates = 20000; // B'
  NetworkFitConfig networks = default_network_fit_config();
  std::vector<std::array<double, 2>> baseline_scenarios{{0.3, 0.2}, {0.4, 0.3}, {0.5, 0.4}};
  CutoffGrid cutoff_grid;
  std::uint64_t seed = 20240601;

  /// Full-scale sizes: B = 8000, B' = 100000.
  void apply_full_scale() {
    training_size = 8000;
    null_replicates = 100000;
  }

  CalibrationConfig calibration() const {
    CalibrationConfig c;
    c.b_h1 = c.b_h2 = c.b_h12 = null_grid_size;
    c.b_prime = null_replicates;
    c.alpha = endpoint.alpha;
    c.n_control = n_control;
    c.n_treatment = n_treatment;
    c.reject_infeasible = reject_infeasible;
    return c;
  }

  LabelingContext labeling() const {
    return {history, n_control, n_treatment, prior, mcmc, endpoint};
  }
};

inline ValidationReport validate(const DesignConfig& c) {
  ValidationReport rep = validate(c.endpoint);
  if (c.endpoint.endpoint_count != 2) rep.fail("design: exactly two endpoints are supported");
  rep.merge(validate(c.history, c.endpoint.endpoint_count));
  rep.merge(validate(c.spaces, c.endpoint.endpoint_count));
  rep.merge(validate(c.prior, c.endpoint.endpoint_count));
  rep.merge(validate(c.mcmc));
  if (c.n_control < 1 || c.n_treatment < 1) rep.fail("design: sample sizes must be positive");
  if (c.training_size < 500 || c.training_size % 4 != 0)
    rep.fail("design: training_size must be a multiple of 4 and at least 500");
  if (c.null_grid_size < 10) rep.fail("design: null_grid_size must be at least 10");
  if (c.null_replicates < min_null_replicates)
    rep.fail("design: null_replicates must be at least 10000");
  if (c.networks.candidates.empty()) rep.fail("design: no candidate architectures");
  for (const auto& s : c.networks.candidates) rep.merge(validate(s));
  rep.merge(validate(c.networks.cv));
  rep.merge(validate(c.networks.final_fit));
  if (c.baseline_scenarios.empty()) rep.fail("design: no baseline scenarios");
  for (const auto& s : c.baseline_scenarios)
    if (!(s[0] > 0 && s[0] < 1 && s[1] > 0 && s[1] < 1))
      rep.fail("design: baseline scenario rates must lie in (0, 1)");
  return rep;
}

struct TrainingReport {
  int requested = 0;
  int excluded = 0;
  double fs_train_mse = std::numeric_limits<double>::quiet_NaN();
  double fs_holdout_mse = std::numeric_limits<double>::quiet_NaN();
  double fp_train_mse = std::numeric_limits<double>::quiet_NaN();
  double fp_holdout_mse = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> fs_cv_mse;
  std::vector<double> fp_cv_mse;
};

struct TrainedDesign {
  DesignConfig config;
  MlpModel f_s;
  MlpModel f_p;
  CriticalSurrogates critical;
  ConstantBaseline baseline;
  TrainingReport report;
  std::string created_utc;
  std::string fingerprint;
};

// ---------------------------------------------------------------------------
// JSON

inline json candidate_to_json(const MlpSpec& s) {
  return {{"hidden_widths", s.hidden_widths}, {"dropout_rate", s.dropout_rate}};
}

inline json to_json(const NetworkFitConfig& n) {
  json c = json::array();
  for (const auto& s : n.candidates) c.push_back(candidate_to_json(s));
  return {{"candidates", std::move(c)}, {"cv", to_json(n.cv)}, {"final", to_json(n.final_fit)}};
}

inline NetworkFitConfig network_fit_config_from_json(const json& j,
                                                     NetworkFitConfig n = default_network_fit_config()) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "candidates" && it.key() != "cv" && it.key() != "final")
      throw SchemaError("NetworkFitConfig: unknown field '" + it.key() + "'");
  if (j.contains("candidates")) {
    n.candidates.clear();
    for (const auto& c : j.at("candidates")) {
      MlpSpec s;
      s.hidden_widths = c.at("hidden_widths").get<std::vector<int>>();
      s.dropout_rate = c.value("dropout_rate", 0.0);
      n.candidates.push_back(s);
    }
  }
  if (j.contains("cv")) n.cv = train_config_from_json(j.at("cv"), n.cv);
  if (j.contains("final")) n.final_fit = train_config_from_json(j.at("final"), n.final_fit);
  return n;
}

inline json to_json(const DesignConfig& c) {
  json scen = json::array();
  for (const auto& s : c.baseline_scenarios) scen.push_back({s[0], s[1]});
  return versioned({{"endpoint", to_json(c.endpoint)},
                    {"spaces", to_json(c.spaces)},
                    {"reject_infeasible", c.reject_infeasible},
                    {"history", to_json(c.history)},
                    {"n_control", c.n_control},
                    {"n_treatment", c.n_treatment},
                    {"prior", to_json(c.prior)},
                    {"mcmc", to_json(c.mcmc)},
                    {"training_size", c.training_size},
                    {"null_grid_size", c.null_grid_size},
                    {"null_replicates", c.null_replicates},
                    {"networks", to_json(c.networks)},
                    {"baseline_scenarios", std::move(scen)},
                    {"cutoff_grid", to_json(c.cutoff_grid)},
                    {"seed", c.seed}});
}

/// Every field optional except what cannot be defaulted; `history` may be
/// supplied by the caller instead (see the CLI's history_file).
inline DesignConfig design_config_from_json(const json& j, DesignConfig c = {}) {
  constexpr const char* T = "DesignConfig";
  check_object(j, T,
               {"endpoint", "spaces", "reject_infeasible", "history", "n_control", "n_treatment",
                "prior", "mcmc", "training_size", "null_grid_size", "null_replicates", "networks",
                "baseline_scenarios", "cutoff_grid", "seed"});
  if (j.contains("endpoint")) c.endpoint = endpoint_config_from_json(j.at("endpoint"));
  if (j.contains("spaces")) c.spaces = parameter_spaces_from_json(j.at("spaces"));
  c.reject_infeasible = optional_field(j, "reject_infeasible", c.reject_infeasible);
  if (j.contains("history")) c.history = historical_dataset_from_json(j.at("history"));
  c.n_control = optional_field(j, "n_control", c.n_control);
  c.n_treatment = optional_field(j, "n_treatment", c.n_treatment);
  if (j.contains("prior")) c.prior = hier_prior_from_json(j.at("prior"));
  if (j.contains("mcmc")) c.mcmc = mcmc_config_from_json(j.at("mcmc"));
  c.training_size = optional_field(j, "training_size", c.training_size);
  c.null_grid_size = optional_field(j, "null_grid_size", c.null_grid_size);
  c.null_replicates = optional_field(j, "null_replicates", c.null_replicates);
  if (j.contains("networks")) c.networks = network_fit_config_from_json(j.at("networks"));
  if (j.contains("baseline_scenarios"))
    c.baseline_scenarios = j.at("baseline_scenarios").get<std::vector<std::array<double, 2>>>();
  if (j.contains("cutoff_grid")) c.cutoff_grid = cutoff_grid_from_json(j.at("cutoff_grid"));
  c.seed = optional_field<std::uint64_t>(j, "seed", c.seed);
  return c;
}

inline json to_json(const TrainingReport& r) {
  auto arr = [](const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(detail::nan_as_null(x));
    return a;
  };
  return {{"requested", r.requested},
          {"excluded", r.excluded},
          {"fs_train_mse", detail::nan_as_null(r.fs_train_mse)},
          {"fs_holdout_mse", detail::nan_as_null(r.fs_holdout_mse)},
          {"fp_train_mse", detail::nan_as_null(r.fp_train_mse)},
          {"fp_holdout_mse", detail::nan_as_null(r.fp_holdout_mse)},
          {"fs_cv_mse", arr(r.fs_cv_mse)},
          {"fp_cv_mse", arr(r.fp_cv_mse)}};
}

inline TrainingReport training_report_from_json(const json& j) {
  TrainingReport r;
  r.requested = j.at("requested").get<int>();
  r.excluded = j.at("excluded").get<int>();
  r.fs_train_mse = detail::null_as_nan(j.at("fs_train_mse"));
  r.fs_holdout_mse = detail::null_as_nan(j.at("fs_holdout_mse"));
  r.fp_train_mse = detail::null_as_nan(j.at("fp_train_mse"));
  r.fp_holdout_mse = detail::null_as_nan(j.at("fp_holdout_mse"));
  for (const auto& x : j.at("fs_cv_mse")) r.fs_cv_mse.push_back(detail::null_as_nan(x));
  for (const auto& x : j.at("fp_cv_mse")) r.fp_cv_mse.push_back(detail::null_as_nan(x));
  return r;
}

/// The hashed part of a design file. The creation timestamp sits outside it
/// so retraining the same config reproduces the fingerprint.
inline json design_content(const TrainedDesign& d) {
  return {{"config", to_json(d.config)},
          {"f_s", to_json(d.f_s)},
          {"f_p", to_json(d.f_p)},
          {"critical", to_json(d.critical)},
          {"baseline", to_json(d.baseline)},
          {"report", to_json(d.report)}};
}

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw NumericalFailure("sha256: digest failed");
  std::ostringstream os;
  for (unsigned int k = 0; k < len; ++k)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[k]);
  return os.str();
}

inline std::string content_fingerprint(const json& content) { return sha256_hex(content.dump()); }

inline json to_json(const TrainedDesign& d) {
  json content = design_content(d);
  const std::string fp = content_fingerprint(content);
  return versioned({{"content", std::move(content)},
                    {"created_utc", d.created_utc},
                    {"fingerprint", fp}});
}

/// Throws FingerprintMismatch when the stored hash disagrees with the
/// content, SchemaError for structural problems.
inline TrainedDesign trained_design_from_json(const json& j) {
  constexpr const char* T = "TrainedDesign";
  check_object(j, T, {"content", "created_utc", "fingerprint"});
  const json& content = required<json>(j, T, "content");
  const auto stored = required<std::string>(j, T, "fingerprint");
  const auto actual = content_fingerprint(content);
  if (stored != actual)
    throw FingerprintMismatch("design fingerprint " + stored + " does not match content hash " +
                              actual);
  TrainedDesign d;
  try {
    d.config = design_config_from_json(content.at("config"));
    d.f_s = mlp_model_from_json(content.at("f_s"));
    d.f_p = mlp_model_from_json(content.at("f_p"));
    d.critical = critical_surrogates_from_json(content.at("critical"));
    d.baseline = constant_baseline_from_json(content.at("baseline"));
    d.report = training_report_from_json(content.at("report"));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("TrainedDesign: ") + e.what());
  }
  if (d.f_s.spec.input_dim != 4 || d.f_s.spec.output_dim != 2 || d.f_p.spec.input_dim != 2 ||
      d.f_p.spec.output_dim != 2)
    throw SchemaError("TrainedDesign: posterior network shapes are wrong");
  d.created_utc = required<std::string>(j, T, "created_utc");
  d.fingerprint = stored;
  return d;
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Refuses to overwrite an existing file.
inline void save_design(const TrainedDesign& d, const std::string& path) {
  if (std::ifstream(path).good()) throw ValidationError("refusing to overwrite " + path);
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot open " + path + " for writing");
  os << to_json(d).dump(1) << '\n';
  if (!os) throw ValidationError("failed writing " + path);
}

inline TrainedDesign load_design(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open design file " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw SchemaError("design file " + path + ": " + e.what());
  }
  return trained_design_from_json(j);
}

/// Refresh the fingerprint after building or modifying a design in memory.
inline void seal(TrainedDesign& d) { d.fingerprint = content_fingerprint(design_content(d)); }

using ProgressLog = std::function<void(const std::string&)>;

/// Full offline pipeline: scenario draws, MCMC labels, F_S / F_P, critical
/// value networks and the constant-cutoff comparator. A precomputed
/// training set (same config) may be passed to skip labelling.
inline TrainedDesign train_design(const DesignConfig& cfg, int threads = 1,
                                  const ProgressLog& log = {},
                                  const TrainingSet* precomputed = nullptr) {
  const auto rep = validate(cfg);
  if (!rep.passed()) throw ValidationError(rep.summary());
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };

  TrainedDesign d;
  d.config = cfg;
  TrainingSet generated;
  const TrainingSet* set = precomputed;
  if (!set) {
    const auto patterns = standard_training_patterns(cfg.spaces, cfg.reject_infeasible);
    const auto scenarios = draw_scenarios(patterns, cfg.training_size, derive_key(cfg.seed, "scenario-draws"));
    say("labelling " + std::to_string(scenarios.size()) + " training examples by MCMC");
    generated = generate_training_set(cfg.labeling(), scenarios, derive_key(cfg.seed, "labels"),
                                      threads);
    set = &generated;
  }
  d.report.requested = set->requested;
  d.report.excluded = static_cast<int>(set->excluded_ids.size());

  say("fitting posterior surrogates");
  auto post = fit_posterior_surrogates(*set, cfg.networks, derive_key(cfg.seed, "posterior"),
                                       threads);
  d.f_s = std::move(post.f_s);
  d.f_p = std::move(post.f_p);
  d.report.fs_train_mse = d.f_s.training_summary.train_mse;
  d.report.fs_holdout_mse = d.f_s.training_summary.holdout_mse;
  d.report.fp_train_mse = d.f_p.training_summary.train_mse;
  d.report.fp_holdout_mse = d.f_p.training_summary.holdout_mse;
  d.report.fs_cv_mse = post.selection_s.validation_mse;
  d.report.fp_cv_mse = post.selection_p.validation_mse;
  say("F_S " + d.f_s.spec.describe() + " train MSE " + std::to_string(d.report.fs_train_mse));

  say("calibrating critical values");
  const ModelFn fs{&d.f_s};
  d.critical = fit_critical_networks(fs, cfg.spaces, cfg.calibration(), cfg.networks,
                                     derive_key(cfg.seed, "critical"), threads);
  say("constant-cutoff baseline");
  d.baseline = constant_cutoff_baseline(fs, cfg.baseline_scenarios, cfg.n_control,
                                        cfg.n_treatment, cfg.null_replicates, cfg.endpoint.alpha,
                                        cfg.cutoff_grid, derive_key(cfg.seed, "baseline"));
  d.created_utc = utc_now();
  seal(d);
  return d;
}

}  // namespace hbdnn
