#pragma once

// Critical values that hold the family-wise error rate at alpha: empirical
// upper quantiles of the surrogate promise probabilities on simulated null
// data, networks F_1, F_2, F_12 mapping null features to those quantiles,
// and the constant-cutoff comparator.

#include <algorithm>
#include <array>
#include <concepts>
#include <ostream>
#include <string>
#include <vector>

#include "hbdnn/surrogate.hpp"

namespace hbdnn {

/// H1: endpoint 1 has no effect; H2: endpoint 2 has none; H12: neither.
enum class NullKind { H1, H2, H12 };

inline constexpr std::array<NullKind, 3> all_null_kinds{NullKind::H1, NullKind::H2, NullKind::H12};

inline std::string to_string(NullKind k) {
  switch (k) {
    case NullKind::H1: return "H1";
    case NullKind::H2: return "H2";
    case NullKind::H12: return "H12";
  }
  return "?";
}

inline NullKind null_kind_from_string(const std::string& s) {
  if (s == "H1") return NullKind::H1;
  if (s == "H2") return NullKind::H2;
  if (s == "H12") return NullKind::H12;
  throw SchemaError("unknown null hypothesis kind '" + s + "'");
}

inline int null_feature_dim(NullKind k) { return k == NullKind::H12 ? 2 : 3; }

inline std::size_t kind_index(NullKind k) { return static_cast<std::size_t>(k); }

/// A batch surrogate for S: rows of posterior features -> rows of (S1, S2).
template <class F>
concept SurrogateFn = requires(const F& f, const MatrixXd& x) {
  { f(x) } -> std::convertible_to<MatrixXd>;
};

/// Feature layout per kind:
///   H1  (psi_1 common, psi_c2, delta_2)
///   H2  (psi_c1, delta_1, psi_2 common)
///   H12 (psi_1 common, psi_2 common)
inline ScenarioPattern null_pattern(NullKind kind, const ParameterSpaces& spaces,
                                    bool reject_infeasible = false) {
  const auto rep = validate(spaces, 2);
  if (!rep.passed()) throw ValidationError("null grid: " + rep.summary());
  const Interval zero{0.0, 0.0};
  const auto& c = spaces.control_space;
  const auto& e = spaces.effect_space;
  switch (kind) {
    case NullKind::H1: return {c, {zero, e[1]}, reject_infeasible};
    case NullKind::H2: return {c, {e[0], zero}, reject_infeasible};
    case NullKind::H12: return {c, {zero, zero}, reject_infeasible};
  }
  throw ValidationError("null grid: bad kind");
}

/// Axis-aligned training box of each null feature.
inline std::vector<Interval> null_box(NullKind kind, const ParameterSpaces& spaces) {
  const auto& c = spaces.control_space;
  const auto& e = spaces.effect_space;
  switch (kind) {
    case NullKind::H1: return {c[0], c[1], e[1]};
    case NullKind::H2: return {c[0], e[0], c[1]};
    case NullKind::H12: return {c[0], c[1]};
  }
  return {};
}

inline std::vector<double> null_features_from_draw(NullKind kind, const ScenarioDraw& d) {
  switch (kind) {
    case NullKind::H1: return {d.control[0], d.control[1], d.treatment[1] - d.control[1]};
    case NullKind::H2: return {d.control[0], d.treatment[0] - d.control[0], d.control[1]};
    case NullKind::H12: return {d.control[0], d.control[1]};
  }
  return {};
}

/// Control and treatment rates implied by a null feature vector.
inline ScenarioDraw null_rates(NullKind kind, std::span<const double> f) {
  if (static_cast<int>(f.size()) != null_feature_dim(kind))
    throw ShapeMismatch("null_rates: feature length does not match " + to_string(kind));
  switch (kind) {
    case NullKind::H1: return {0, {f[0], f[1]}, {f[0], f[1] + f[2]}};
    case NullKind::H2: return {0, {f[0], f[2]}, {f[0] + f[1], f[2]}};
    case NullKind::H12: return {0, {f[0], f[1]}, {f[0], f[1]}};
  }
  return {};
}

/// B uniform draws over the kind's ranges, one row per draw.
inline MatrixXd draw_null_grid(NullKind kind, const ParameterSpaces& spaces, int B,
                               std::uint64_t seed, bool reject_infeasible = false) {
  if (B < 1) throw ValidationError("draw_null_grid: B must be positive");
  const auto pattern = null_pattern(kind, spaces, reject_infeasible);
  check_pattern(pattern);
  MatrixXd out(B, null_feature_dim(kind));
  for (int b = 0; b < B; ++b) {
    CounterRng rng(derive_key(seed, "null:" + to_string(kind), {static_cast<std::uint64_t>(b)}));
    const auto f = null_features_from_draw(kind, detail::draw_from_pattern(pattern, 0, rng));
    for (int c = 0; c < out.cols(); ++c) out(b, c) = f[c];
  }
  return out;
}

/// Upper-alpha order statistic: the k-th smallest value with
/// k = ceil((1 - alpha)(n + 1)), clamped to [1, n]. At most a fraction alpha
/// of the values exceed it.
inline double upper_quantile(std::vector<double> values, double alpha) {
  if (values.empty()) throw ValidationError("upper_quantile: no values");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("upper_quantile: alpha outside (0,1)");
  const auto n = values.size();
  // the small offset keeps exact products such as 0.95 * 20 from rounding up
  auto k = static_cast<std::size_t>(std::ceil((1.0 - alpha) * (n + 1.0) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, n);
  std::nth_element(values.begin(), values.begin() + (k - 1), values.end());
  return values[k - 1];
}

/// Posterior features of `replicates` simulated current trials at the given
/// rates (probabilities clamped into [0, 1]).
inline MatrixXd simulate_features(const ScenarioDraw& rates, int n_control, int n_treatment,
                                  int replicates, CounterRng& rng) {
  const std::size_t I = rates.control.size();
  std::vector<std::binomial_distribution<int>> dc, dt;
  for (std::size_t i = 0; i < I; ++i) {
    dc.emplace_back(n_control, std::clamp(rates.control[i], 0.0, 1.0));
    dt.emplace_back(n_treatment, std::clamp(rates.treatment[i], 0.0, 1.0));
  }
  MatrixXd x(replicates, 2 * static_cast<Eigen::Index>(I));
  for (int b = 0; b < replicates; ++b) {
    for (std::size_t i = 0; i < I; ++i) x(b, i) = static_cast<double>(dc[i](rng)) / n_control;
    for (std::size_t i = 0; i < I; ++i)
      x(b, I + i) = static_cast<double>(dt[i](rng)) / n_treatment;
  }
  return x;
}

/// The statistic whose upper quantile is the critical value: S_1 under H1,
/// S_2 under H2, max(S_1, S_2) under H12. Since
/// P(S_1 > c or S_2 > c) = P(max(S_1, S_2) > c), the H12 quantile solves the
/// global-null constraint exactly.
inline std::vector<double> null_statistic(NullKind kind, const MatrixXd& s_hat) {
  std::vector<double> stat(s_hat.rows());
  for (Eigen::Index b = 0; b < s_hat.rows(); ++b) {
    switch (kind) {
      case NullKind::H1: stat[b] = s_hat(b, 0); break;
      case NullKind::H2: stat[b] = s_hat(b, 1); break;
      case NullKind::H12: stat[b] = std::max(s_hat(b, 0), s_hat(b, 1)); break;
    }
  }
  return stat;
}

inline constexpr int min_null_replicates = 10000;

/// Simulate B' trials under the null described by `features`, evaluate the
/// surrogate, and return the upper-alpha quantile of the kind's statistic.
template <SurrogateFn F>
double empirical_critical_value(NullKind kind, std::span<const double> features, const F& f_s,
                                int n_control, int n_treatment, int b_prime, double alpha,
                                std::uint64_t seed) {
  if (b_prime < min_null_replicates)
    throw ValidationError("empirical_critical_value: B' must be at least 10000");
  if (n_control < 1 || n_treatment < 1)
    throw ValidationError("empirical_critical_value: sample sizes must be positive");
  CounterRng rng(seed);
  const MatrixXd x = simulate_features(null_rates(kind, features), n_control, n_treatment,
                                      b_prime, rng);
  const MatrixXd s = f_s(x);
  if (s.rows() != x.rows() || s.cols() != 2)
    throw ShapeMismatch("empirical_critical_value: surrogate must return one (S1, S2) row per trial");
  return upper_quantile(null_statistic(kind, s), alpha);
}

struct CalibrationConfig {
  int b_h1 = 2000;
  int b_h2 = 2000;
  int b_h12 = 2000;
  int b_prime = 20000;
  double alpha = 0.05;
  int n_control = 150;
  int n_treatment = 150;
  bool reject_infeasible = false;

  int grid_size(NullKind k) const {
    return k == NullKind::H1 ? b_h1 : (k == NullKind::H2 ? b_h2 : b_h12);
  }
  bool operator==(const CalibrationConfig&) const = default;
};

struct CalibrationAudit {
  NullKind kind = NullKind::H12;
  MatrixXd features;
  std::vector<double> empirical_c;
  std::vector<Interval> box;
  double train_mse = std::numeric_limits<double>::quiet_NaN();
  double holdout_mse = std::numeric_limits<double>::quiet_NaN();
};

struct CriticalSurrogates {
  std::array<MlpModel, 3> networks;  // indexed by kind: f1, f2, f12
  std::array<CalibrationAudit, 3> audits;
  std::array<CvResult, 3> selections;

  const MlpModel& network(NullKind k) const { return networks[kind_index(k)]; }
  const CalibrationAudit& audit(NullKind k) const { return audits[kind_index(k)]; }
};

/// Empirical labels for every row of a null grid; point b uses the stream
/// (seed, kind, b).
template <SurrogateFn F>
std::vector<double> label_null_grid(NullKind kind, const MatrixXd& grid, const F& f_s,
                                    const CalibrationConfig& cfg, std::uint64_t seed,
                                    int threads = 1) {
  std::vector<double> labels(grid.rows());
  parallel_for(labels.size(), threads, [&](std::size_t b) {
    std::vector<double> f(grid.cols());
    for (Eigen::Index c = 0; c < grid.cols(); ++c) f[c] = grid(b, c);
    labels[b] = empirical_critical_value(
        kind, f, f_s, cfg.n_control, cfg.n_treatment, cfg.b_prime, cfg.alpha,
        derive_key(seed, "crit:" + to_string(kind), {b}));
  });
  return labels;
}

/// Label each kind's null grid with empirical critical values and fit one
/// network per kind.
template <SurrogateFn F>
CriticalSurrogates fit_critical_networks(const F& f_s, const ParameterSpaces& spaces,
                                         const CalibrationConfig& cfg,
                                         const NetworkFitConfig& net_cfg, std::uint64_t seed,
                                         int threads = 1) {
  CriticalSurrogates out;
  for (NullKind kind : all_null_kinds) {
    auto& audit = out.audits[kind_index(kind)];
    audit.kind = kind;
    audit.box = null_box(kind, spaces);
    audit.features =
        draw_null_grid(kind, spaces, cfg.grid_size(kind), derive_key(seed, "grid"),
                       cfg.reject_infeasible);
    audit.empirical_c = label_null_grid(kind, audit.features, f_s, cfg, seed, threads);
    Dataset data{audit.features, MatrixXd(audit.features.rows(), 1)};
    for (Eigen::Index b = 0; b < data.targets.rows(); ++b) data.targets(b, 0) = audit.empirical_c[b];
    auto fit = fit_one(data, net_cfg, seed, threads, "F_" + to_string(kind));
    audit.train_mse = fit.model.training_summary.train_mse;
    audit.holdout_mse = fit.model.training_summary.holdout_mse;
    out.networks[kind_index(kind)] = std::move(fit.model);
    out.selections[kind_index(kind)] = std::move(fit.selection);
  }
  return out;
}

struct CutoffGrid {
  double lower = 0.5;
  double upper = 1.0;
  double step = 5e-4;
  bool operator==(const CutoffGrid&) const = default;
};

struct ConstantBaseline {
  double c_const = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::array<double, 2>> scenarios;  // global-null control rates
  std::vector<double> scenario_c;                // empirical H12 critical values
};

/// Smallest grid point >= c.
inline double round_up_to_grid(double c, const CutoffGrid& grid) {
  if (!(grid.step > 0.0) || !(grid.lower <= grid.upper))
    throw ValidationError("cutoff grid: need step > 0 and lower <= upper");
  double idx = c <= grid.lower ? 0.0 : std::ceil((c - grid.lower) / grid.step - 1e-9);
  double v = grid.lower + idx * grid.step;
  if (v < c) v = grid.lower + (idx + 1.0) * grid.step;
  if (v > grid.upper + 1e-12)
    throw GridExhausted("cutoff grid: no grid point at or above " + std::to_string(c));
  return std::min(v, grid.upper);
}

/// One cutoff for all endpoints: the largest per-scenario empirical H12
/// critical value, rounded up to the grid. FWER <= alpha at every listed
/// global-null scenario by construction.
template <SurrogateFn F>
ConstantBaseline constant_cutoff_baseline(const F& f_s,
                                          std::span<const std::array<double, 2>> scenarios,
                                          int n_control, int n_treatment, int b_prime,
                                          double alpha, const CutoffGrid& grid,
                                          std::uint64_t seed) {
  if (scenarios.empty()) throw ValidationError("constant_cutoff_baseline: no scenarios");
  ConstantBaseline out;
  out.scenarios.assign(scenarios.begin(), scenarios.end());
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < scenarios.size(); ++k) {
    const std::array<double, 2>& s = scenarios[k];
    const double c = empirical_critical_value(NullKind::H12, s, f_s, n_control, n_treatment,
                                              b_prime, alpha, derive_key(seed, "const", {k}));
    out.scenario_c.push_back(c);
    worst = std::max(worst, c);
  }
  out.c_const = round_up_to_grid(worst, grid);
  return out;
}

/// Adapter so a trained MlpModel satisfies SurrogateFn.
struct ModelFn {
  const MlpModel* model;
  MatrixXd operator()(const MatrixXd& x) const { return model->predict(x); }
};

/// CSV: kind, x1, x2, x3 (empty for H12), empirical_c, surrogate_c.
inline void write_calibration_audit_csv(std::ostream& os, const CriticalSurrogates& cs) {
  os << "kind,x1,x2,x3,empirical_c,surrogate_c\n";
  os.precision(17);
  for (NullKind kind : all_null_kinds) {
    const auto& a = cs.audit(kind);
    if (a.features.rows() == 0) continue;
    const MatrixXd pred = cs.network(kind).predict(a.features);
    for (Eigen::Index b = 0; b < a.features.rows(); ++b) {
      os << to_string(kind);
      for (int c = 0; c < 3; ++c) {
        os << ',';
        if (c < a.features.cols()) os << a.features(b, c);
      }
      os << ',' << a.empirical_c[b] << ',' << pred(b, 0) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const CalibrationConfig& c) {
  return versioned({{"b_h1", c.b_h1},
                    {"b_h2", c.b_h2},
                    {"b_h12", c.b_h12},
                    {"b_prime", c.b_prime},
                    {"alpha", c.alpha},
                    {"n_control", c.n_control},
                    {"n_treatment", c.n_treatment},
                    {"reject_infeasible", c.reject_infeasible}});
}

inline CalibrationConfig calibration_config_from_json(const json& j, CalibrationConfig c = {}) {
  check_object(j, "CalibrationConfig",
               {"b_h1", "b_h2", "b_h12", "b_prime", "alpha", "n_control", "n_treatment",
                "reject_infeasible"});
  c.b_h1 = optional_field(j, "b_h1", c.b_h1);
  c.b_h2 = optional_field(j, "b_h2", c.b_h2);
  c.b_h12 = optional_field(j, "b_h12", c.b_h12);
  c.b_prime = optional_field(j, "b_prime", c.b_prime);
  c.alpha = optional_field(j, "alpha", c.alpha);
  c.n_control = optional_field(j, "n_control", c.n_control);
  c.n_treatment = optional_field(j, "n_treatment", c.n_treatment);
  c.reject_infeasible = optional_field(j, "reject_infeasible", c.reject_infeasible);
  return c;
}

inline json to_json(const CalibrationAudit& a) {
  return {{"kind", to_string(a.kind)},
          {"features", matrix_to_json(a.features)},
          {"empirical_c", a.empirical_c},
          {"box", [&] {
             json b = json::array();
             for (const auto& iv : a.box) b.push_back(to_json(iv));
             return b;
           }()},
          {"train_mse", detail::nan_as_null(a.train_mse)},
          {"holdout_mse", detail::nan_as_null(a.holdout_mse)}};
}

inline CalibrationAudit calibration_audit_from_json(const json& j) {
  CalibrationAudit a;
  a.kind = null_kind_from_string(j.at("kind").get<std::string>());
  a.features = matrix_from_json(j.at("features"));
  a.empirical_c = j.at("empirical_c").get<std::vector<double>>();
  for (const auto& iv : j.at("box")) a.box.push_back(interval_from_json(iv));
  a.train_mse = detail::null_as_nan(j.at("train_mse"));
  a.holdout_mse = detail::null_as_nan(j.at("holdout_mse"));
  if (static_cast<std::size_t>(a.features.rows()) != a.empirical_c.size() ||
      static_cast<int>(a.box.size()) != null_feature_dim(a.kind))
    throw SchemaError("CalibrationAudit: inconsistent sizes");
  return a;
}

inline json to_json(const CriticalSurrogates& cs) {
  json nets = json::object(), audits = json::object();
  for (NullKind k : all_null_kinds) {
    nets[to_string(k)] = to_json(cs.network(k));
    audits[to_string(k)] = to_json(cs.audit(k));
  }
  return versioned({{"networks", std::move(nets)}, {"audits", std::move(audits)}});
}

inline CriticalSurrogates critical_surrogates_from_json(const json& j) {
  check_object(j, "CriticalSurrogates", {"networks", "audits"});
  CriticalSurrogates cs;
  for (NullKind k : all_null_kinds) {
    cs.networks[kind_index(k)] = mlp_model_from_json(j.at("networks").at(to_string(k)));
    cs.audits[kind_index(k)] = calibration_audit_from_json(j.at("audits").at(to_string(k)));
    if (cs.network(k).spec.input_dim != null_feature_dim(k) || cs.network(k).spec.output_dim != 1)
      throw SchemaError("CriticalSurrogates: network shape does not match " + to_string(k));
  }
  return cs;
}

inline json to_json(const CutoffGrid& g) {
  return {{"lower", g.lower}, {"upper", g.upper}, {"step", g.step}};
}

inline CutoffGrid cutoff_grid_from_json(const json& j) {
  return {j.at("lower").get<double>(), j.at("upper").get<double>(), j.at("step").get<double>()};
}

inline json to_json(const ConstantBaseline& b) {
  return {{"c_const", b.c_const}, {"scenarios", b.scenarios}, {"scenario_c", b.scenario_c}};
}

inline ConstantBaseline constant_baseline_from_json(const json& j) {
  ConstantBaseline b;
  b.c_const = j.at("c_const").get<double>();
  b.scenarios = j.at("scenarios").get<std::vector<std::array<double, 2>>>();
  b.scenario_c = j.at("scenario_c").get<std::vector<double>>();
  return b;
}

}  // namespace hbdnn
