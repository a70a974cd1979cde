#pragma once

// Simulation-based training data for the posterior surrogates: scenario
// patterns over (control rate, effect), binomial current-trial counts,
// MCMC labels, and the fitted networks F_S (promise probabilities) and F_P
// (control-rate posterior means).

#include <ostream>
#include <string>
#include <vector>

#include "hbdnn/mcmc.hpp"
#include "hbdnn/mlp.hpp"

namespace hbdnn {

/// Uniform ranges for control rates and effects. An effect interval with
/// lower == upper is a constant (typically 0).
struct ScenarioPattern {
  std::vector<Interval> control_ranges;
  std::vector<Interval> effect_ranges;
  /// When set, draws whose treatment rate leaves (0, 1) are redrawn instead
  /// of the whole pattern being rejected with InvalidRange.
  bool reject_infeasible = false;
  bool operator==(const ScenarioPattern&) const = default;
};

inline void check_pattern(const ScenarioPattern& p) {
  if (p.control_ranges.size() != p.effect_ranges.size() || p.control_ranges.empty())
    throw InvalidRange("scenario pattern: control and effect ranges must have equal length");
  for (std::size_t i = 0; i < p.control_ranges.size(); ++i) {
    const auto& c = p.control_ranges[i];
    const auto& e = p.effect_ranges[i];
    if (!(c.lower > 0.0 && c.upper < 1.0 && c.lower <= c.upper))
      throw InvalidRange("scenario pattern: control range must lie inside (0, 1)");
    if (!(e.lower > -1.0 && e.upper < 1.0 && e.lower <= e.upper))
      throw InvalidRange("scenario pattern: effect range must lie inside (-1, 1)");
    const double lo = c.lower + e.lower, hi = c.upper + e.upper;
    if (p.reject_infeasible) {
      if (!(c.upper + e.upper > 0.0 && c.lower + e.lower < 1.0))
        throw InvalidRange("scenario pattern: no feasible treatment rate for endpoint " +
                           std::to_string(i + 1));
    } else if (!(lo >= 0.0 && hi <= 1.0)) {
      // open uniform ranges: a sum range touching 0 or 1 is still feasible
      throw InvalidRange("scenario pattern: treatment rate range (" + std::to_string(lo) + ", " +
                         std::to_string(hi) + ") leaves (0, 1) for endpoint " +
                         std::to_string(i + 1));
    }
  }
}

/// The four equal-size patterns over given spaces: effects (0,0), (T1,0),
/// (0,T2), (T1,T2).
inline std::vector<ScenarioPattern> standard_training_patterns(const ParameterSpaces& spaces,
                                                               bool reject_infeasible = false) {
  const auto& c = spaces.control_space;
  const auto& e = spaces.effect_space;
  if (c.size() != 2 || e.size() != 2)
    throw ValidationError("standard_training_patterns: two endpoints required");
  const Interval zero{0.0, 0.0};
  return {{c, {zero, zero}, reject_infeasible},
          {c, {e[0], zero}, reject_infeasible},
          {c, {zero, e[1]}, reject_infeasible},
          {c, {e[0], e[1]}, reject_infeasible}};
}

/// Control (0.2,0.7) x (0.1,0.6), effects (-0.1,0.2).
inline ParameterSpaces default_parameter_spaces() {
  return {{{0.2, 0.7}, {0.1, 0.6}}, {{-0.1, 0.2}, {-0.1, 0.2}}};
}

struct ScenarioDraw {
  int pattern_id = 0;
  std::vector<double> control;
  std::vector<double> treatment;
};

namespace detail {

inline ScenarioDraw draw_from_pattern(const ScenarioPattern& p, int pattern_id, CounterRng& rng) {
  const std::size_t I = p.control_ranges.size();
  ScenarioDraw d{pattern_id, std::vector<double>(I), std::vector<double>(I)};
  for (std::size_t i = 0; i < I; ++i) {
    for (int attempt = 0;; ++attempt) {
      const auto& c = p.control_ranges[i];
      const auto& e = p.effect_ranges[i];
      d.control[i] = c.lower == c.upper ? c.lower : rng.uniform(c.lower, c.upper);
      const double delta = e.lower == e.upper ? e.lower : rng.uniform(e.lower, e.upper);
      d.treatment[i] = d.control[i] + delta;
      if (d.treatment[i] > 0.0 && d.treatment[i] < 1.0) break;
      if (attempt > 10000) throw InvalidRange("scenario pattern: rejection sampling stalled");
    }
  }
  return d;
}

}  // namespace detail

/// B/P draws per pattern in pattern order; draw b uses its own stream, so
/// the list is a pure function of (patterns, B, seed).
inline std::vector<ScenarioDraw> draw_scenarios(std::span<const ScenarioPattern> patterns, int B,
                                                std::uint64_t seed) {
  if (patterns.empty()) throw ValidationError("draw_scenarios: no patterns");
  const int P = static_cast<int>(patterns.size());
  if (B < P || B % P != 0)
    throw ValidationError("draw_scenarios: B must be a positive multiple of the pattern count");
  for (const auto& p : patterns) check_pattern(p);
  const int per = B / P;
  std::vector<ScenarioDraw> out;
  out.reserve(B);
  for (int b = 0; b < B; ++b) {
    CounterRng rng(derive_key(seed, "scenario", {static_cast<std::uint64_t>(b)}));
    out.push_back(detail::draw_from_pattern(patterns[b / per], b / per, rng));
  }
  return out;
}

/// Normalised counts (r_c1/n_c, ..., r_cI/n_c, r_t1/n_t, ..., r_tI/n_t).
inline std::vector<double> posterior_features(const CurrentTrialObservation& cur) {
  std::vector<double> f;
  for (int r : cur.r_control) f.push_back(static_cast<double>(r) / cur.n_control);
  for (int r : cur.r_treatment) f.push_back(static_cast<double>(r) / cur.n_treatment);
  return f;
}

struct TrainingExample {
  int example_id = 0;
  int pattern_id = 0;
  std::vector<double> true_control;
  std::vector<double> true_treatment;
  CurrentTrialObservation counts;
  std::vector<double> features;
  std::vector<double> label_s;
  std::vector<double> label_p;
};

struct TrainingSet {
  std::vector<TrainingExample> examples;
  std::vector<int> excluded_ids;  // examples dropped for MCMC failure
  std::vector<std::string> exclusion_reasons;
  int requested = 0;
};

struct LabelingContext {
  HistoricalDataset history;
  int n_control = 150;
  int n_treatment = 150;
  HierPriorConfig prior = HierPriorConfig::defaults(2);
  McmcConfig mcmc;
  EndpointConfig endpoint;
};

/// Recompute the labels of one set of counts with an MCMC stream keyed by
/// `seed`.
inline PosteriorSummary label_counts(const LabelingContext& ctx,
                                     const CurrentTrialObservation& counts, std::uint64_t seed) {
  McmcConfig cfg = ctx.mcmc;
  cfg.seed = seed;
  cfg.threads = 1;
  return posterior_summary(ctx.history, counts, ctx.endpoint, ctx.prior, cfg);
}

/// Binomial counts at each scenario's rates, labelled by MCMC (S with the
/// endpoint margins, posterior means of the control rates). Examples whose
/// sampler fails are dropped and reported; more than 1% failures fail the
/// batch.
inline TrainingSet generate_training_set(const LabelingContext& ctx,
                                         std::span<const ScenarioDraw> scenarios,
                                         std::uint64_t seed, int threads = 1,
                                         double max_exclusion_fraction = 0.01) {
  ValidationReport rep = validate(ctx.endpoint);
  rep.merge(validate(ctx.history, ctx.endpoint.endpoint_count));
  rep.merge(validate(ctx.prior, ctx.endpoint.endpoint_count));
  rep.merge(validate(ctx.mcmc));
  if (ctx.n_control < 1 || ctx.n_treatment < 1) rep.fail("sample sizes must be positive");
  if (!rep.passed()) throw ValidationError("generate_training_set: " + rep.summary());

  const std::size_t B = scenarios.size();
  std::vector<TrainingExample> slots(B);
  std::vector<std::string> failure(B);
  parallel_for(B, threads, [&](std::size_t b) {
    const auto& sc = scenarios[b];
    CounterRng rng(derive_key(seed, "counts", {b}));
    TrainingExample ex;
    ex.example_id = static_cast<int>(b);
    ex.pattern_id = sc.pattern_id;
    ex.true_control = sc.control;
    ex.true_treatment = sc.treatment;
    ex.counts.n_control = ctx.n_control;
    ex.counts.n_treatment = ctx.n_treatment;
    for (double p : sc.control) ex.counts.r_control.push_back(rng.binomial(ctx.n_control, p));
    for (double p : sc.treatment) ex.counts.r_treatment.push_back(rng.binomial(ctx.n_treatment, p));
    ex.features = posterior_features(ex.counts);
    try {
      const auto summary = label_counts(ctx, ex.counts, derive_key(seed, "mcmc", {b}));
      ex.label_s = summary.s;
      ex.label_p = summary.posterior_mean;
    } catch (const NonConvergence& e) {
      failure[b] = e.what();
    } catch (const NumericalFailure& e) {
      failure[b] = e.what();
    }
    slots[b] = std::move(ex);
  });

  TrainingSet out;
  out.requested = static_cast<int>(B);
  for (std::size_t b = 0; b < B; ++b) {
    if (failure[b].empty()) {
      out.examples.push_back(std::move(slots[b]));
    } else {
      out.excluded_ids.push_back(static_cast<int>(b));
      out.exclusion_reasons.push_back(failure[b]);
    }
  }
  if (static_cast<double>(out.excluded_ids.size()) > max_exclusion_fraction * B)
    throw TrainingFailure("generate_training_set: " + std::to_string(out.excluded_ids.size()) +
                          " of " + std::to_string(B) + " examples failed MCMC convergence");
  return out;
}

inline Dataset s_dataset(const TrainingSet& set) {
  const auto n = static_cast<Eigen::Index>(set.examples.size());
  if (n == 0) return {};
  const auto in = static_cast<Eigen::Index>(set.examples.front().features.size());
  const auto out = static_cast<Eigen::Index>(set.examples.front().label_s.size());
  Dataset d{MatrixXd(n, in), MatrixXd(n, out)};
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& ex = set.examples[k];
    for (Eigen::Index c = 0; c < in; ++c) d.inputs(k, c) = ex.features[c];
    for (Eigen::Index c = 0; c < out; ++c) d.targets(k, c) = ex.label_s[c];
  }
  return d;
}

/// Control-rate features only.
inline Dataset p_dataset(const TrainingSet& set) {
  const auto n = static_cast<Eigen::Index>(set.examples.size());
  if (n == 0) return {};
  const auto I = static_cast<Eigen::Index>(set.examples.front().label_p.size());
  Dataset d{MatrixXd(n, I), MatrixXd(n, I)};
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& ex = set.examples[k];
    for (Eigen::Index c = 0; c < I; ++c) {
      d.inputs(k, c) = ex.features[c];
      d.targets(k, c) = ex.label_p[c];
    }
  }
  return d;
}

/// Same hidden structures, re-dimensioned for a given input/output width.
inline std::vector<MlpSpec> with_dims(std::span<const MlpSpec> candidates, int in, int out) {
  std::vector<MlpSpec> v(candidates.begin(), candidates.end());
  for (auto& s : v) {
    s.input_dim = in;
    s.output_dim = out;
    s.output_activation = Activation::sigmoid;
  }
  return v;
}

struct NetworkFitConfig {
  std::vector<MlpSpec> candidates;  // dims are overwritten per network
  TrainConfig cv;                   // used for cross-validation runs
  TrainConfig final_fit;            // used for the selected architecture
};

inline NetworkFitConfig default_network_fit_config() {
  NetworkFitConfig c;
  c.candidates = default_candidate_grid(1, 1);
  c.cv.epochs = 200;  // ranking only; the winner gets the full budget
  c.final_fit.holdout_fraction = 0.2;
  return c;
}

struct PosteriorSurrogates {
  MlpModel f_s;
  MlpModel f_p;
  CvResult selection_s;
  CvResult selection_p;
};

inline FittedNetwork fit_one(const Dataset& data, const NetworkFitConfig& cfg, std::uint64_t seed,
                             int threads, const std::string& tag) {
  TrainConfig cv = cfg.cv, fin = cfg.final_fit;
  cv.seed = derive_key(seed, tag + ":cv");
  fin.seed = derive_key(seed, tag + ":final");
  cv.threads = threads;
  const auto cands = with_dims(cfg.candidates, static_cast<int>(data.inputs.cols()),
                               static_cast<int>(data.targets.cols()));
  return fit_network(cands, data, cv, fin);
}

/// F_S: all features -> S; F_P: control features -> posterior means. Both
/// chosen by cross-validation over `cfg.candidates`.
inline PosteriorSurrogates fit_posterior_surrogates(const TrainingSet& set,
                                                    const NetworkFitConfig& cfg,
                                                    std::uint64_t seed, int threads = 1) {
  if (set.examples.size() < 500)
    throw ValidationError("fit_posterior_surrogates: at least 500 examples are required");
  PosteriorSurrogates out;
  auto s = fit_one(s_dataset(set), cfg, seed, threads, "F_S");
  auto p = fit_one(p_dataset(set), cfg, seed, threads, "F_P");
  out.f_s = std::move(s.model);
  out.selection_s = std::move(s.selection);
  out.f_p = std::move(p.model);
  out.selection_p = std::move(p.selection);
  return out;
}

/// CSV: example_id, pattern_id, true rates, features, labels.
inline void write_training_csv(std::ostream& os, const TrainingSet& set) {
  os << "example_id,pattern_id,psi_c1,psi_c2,psi_t1,psi_t2,f_rc1,f_rc2,f_rt1,f_rt2,"
        "label_S1,label_S2,label_P1,label_P2\n";
  os.precision(17);
  for (const auto& ex : set.examples) {
    os << ex.example_id << ',' << ex.pattern_id;
    for (double v : ex.true_control) os << ',' << v;
    for (double v : ex.true_treatment) os << ',' << v;
    for (double v : ex.features) os << ',' << v;
    for (double v : ex.label_s) os << ',' << v;
    for (double v : ex.label_p) os << ',' << v;
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// JSON (training sets are cached between pipeline stages)

inline json to_json(const TrainingExample& ex) {
  return {{"example_id", ex.example_id},   {"pattern_id", ex.pattern_id},
          {"true_control", ex.true_control}, {"true_treatment", ex.true_treatment},
          {"r_control", ex.counts.r_control}, {"r_treatment", ex.counts.r_treatment},
          {"label_s", ex.label_s},           {"label_p", ex.label_p}};
}

inline json to_json(const TrainingSet& s, const LabelingContext& ctx) {
  json ex = json::array();
  for (const auto& e : s.examples) ex.push_back(to_json(e));
  return versioned({{"n_control", ctx.n_control},
                    {"n_treatment", ctx.n_treatment},
                    {"requested", s.requested},
                    {"excluded_ids", s.excluded_ids},
                    {"exclusion_reasons", s.exclusion_reasons},
                    {"examples", std::move(ex)}});
}

inline TrainingSet training_set_from_json(const json& j) {
  constexpr const char* T = "TrainingSet";
  check_object(j, T,
               {"n_control", "n_treatment", "requested", "excluded_ids", "exclusion_reasons",
                "examples"});
  TrainingSet s;
  const int nc = required<int>(j, T, "n_control"), nt = required<int>(j, T, "n_treatment");
  s.requested = required<int>(j, T, "requested");
  s.excluded_ids = required<std::vector<int>>(j, T, "excluded_ids");
  s.exclusion_reasons = required<std::vector<std::string>>(j, T, "exclusion_reasons");
  for (const auto& e : required<json>(j, T, "examples")) {
    TrainingExample ex;
    ex.example_id = e.at("example_id").get<int>();
    ex.pattern_id = e.at("pattern_id").get<int>();
    ex.true_control = e.at("true_control").get<std::vector<double>>();
    ex.true_treatment = e.at("true_treatment").get<std::vector<double>>();
    ex.counts = {nc, nt, e.at("r_control").get<std::vector<int>>(),
                 e.at("r_treatment").get<std::vector<int>>()};
    ex.features = posterior_features(ex.counts);
    ex.label_s = e.at("label_s").get<std::vector<double>>();
    ex.label_p = e.at("label_p").get<std::vector<double>>();
    s.examples.push_back(std::move(ex));
  }
  return s;
}

}  // namespace hbdnn
