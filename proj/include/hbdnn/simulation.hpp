#pragma once

// Operating characteristics of a trained design: rejection rates with Monte
// Carlo standard errors, and bias / RMSE of the control-rate posterior-mean
// surrogate, over simulated current trials.

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "hbdnn/decision.hpp"

namespace hbdnn {

struct Scenario {
  std::array<double, 2> control{};
  std::array<double, 2> effects{};
  int replicates = 10000;
  std::string label;
  bool operator==(const Scenario&) const = default;
};

inline constexpr int min_scenario_replicates = 1000;

inline ValidationReport validate(const Scenario& s) {
  ValidationReport rep;
  for (int i = 0; i < 2; ++i) {
    if (!(s.control[i] > 0.0 && s.control[i] < 1.0))
      rep.fail("scenario: control rates must lie in (0, 1)");
    const double t = s.control[i] + s.effects[i];
    if (!(t > 0.0 && t < 1.0)) rep.fail("scenario: treatment rates must lie in (0, 1)");
  }
  if (s.replicates < min_scenario_replicates)
    rep.fail("scenario: at least " + std::to_string(min_scenario_replicates) + " replicates required");
  return rep;
}

struct RateEstimate {
  double rate = 0.0;
  double mcse = 0.0;
};

inline RateEstimate rate_estimate(long hits, long n) {
  const double p = static_cast<double>(hits) / static_cast<double>(n);
  return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(n))};
}

struct ScenarioResult {
  Scenario scenario;
  DecisionMode mode = DecisionMode::surrogate;
  RateEstimate reject_h12;  // at least one rejection
  RateEstimate reject_h1;
  RateEstimate reject_h2;
  std::array<double, 2> bias{};
  std::array<double, 2> rmse{};
  std::array<double, 2> pooled_bias{};  // naive historical + current pooling
  std::array<double, 2> pooled_rmse{};
  double clamped_fraction = 0.0;
};

/// Replicate r of scenario k uses the stream (seed, k, r).
inline std::vector<CurrentTrialObservation> simulate_observations(const Scenario& s,
                                                                  int n_control, int n_treatment,
                                                                  std::uint64_t seed,
                                                                  std::uint64_t scenario_index) {
  std::vector<CurrentTrialObservation> obs(s.replicates);
  for (int r = 0; r < s.replicates; ++r) {
    CounterRng rng(derive_key(seed, {scenario_index, static_cast<std::uint64_t>(r)}));
    auto& o = obs[r];
    o.n_control = n_control;
    o.n_treatment = n_treatment;
    for (int i = 0; i < 2; ++i) o.r_control.push_back(rng.binomial(n_control, s.control[i]));
    for (int i = 0; i < 2; ++i)
      o.r_treatment.push_back(rng.binomial(n_treatment, s.control[i] + s.effects[i]));
  }
  return obs;
}

/// Responder-weighted pooling of history and current control: an estimator
/// with full borrowing and no hierarchy.
inline std::array<double, 2> pooled_estimate(const HistoricalDataset& hist,
                                             const CurrentTrialObservation& cur) {
  std::array<double, 2> out{};
  for (int i = 0; i < 2; ++i) {
    double r = cur.r_control[i], n = cur.n_control;
    for (const auto& s : hist.studies) {
      r += s.responders[i];
      n += s.n;
    }
    out[i] = r / n;
  }
  return out;
}

inline ScenarioResult summarise(const Scenario& s, DecisionMode mode,
                                std::span<const CurrentTrialObservation> obs,
                                std::span<const DecisionOutcome> outcomes,
                                const HistoricalDataset& hist) {
  ScenarioResult res;
  res.scenario = s;
  res.mode = mode;
  long any = 0, h1 = 0, h2 = 0, clamped = 0;
  std::array<CompensatedSum, 2> err, sq, perr, psq;
  for (std::size_t r = 0; r < outcomes.size(); ++r) {
    const auto& o = outcomes[r];
    any += o.any_rejected();
    h1 += o.rejected[0];
    h2 += o.rejected[1];
    clamped += o.clamped[0] || o.clamped[1] || o.clamped[2];
    const auto pooled = pooled_estimate(hist, obs[r]);
    for (int i = 0; i < 2; ++i) {
      const double e = o.posterior_mean_hat[i] - s.control[i];
      err[i].add(e);
      sq[i].add(e * e);
      const double pe = pooled[i] - s.control[i];
      perr[i].add(pe);
      psq[i].add(pe * pe);
    }
  }
  const long n = static_cast<long>(outcomes.size());
  res.reject_h12 = rate_estimate(any, n);
  res.reject_h1 = rate_estimate(h1, n);
  res.reject_h2 = rate_estimate(h2, n);
  for (int i = 0; i < 2; ++i) {
    res.bias[i] = err[i].value() / n;
    res.rmse[i] = std::sqrt(sq[i].value() / n);
    res.pooled_bias[i] = perr[i].value() / n;
    res.pooled_rmse[i] = std::sqrt(psq[i].value() / n);
  }
  res.clamped_fraction = static_cast<double>(clamped) / n;
  return res;
}

/// Rejection rates ("H12" = at least one endpoint rejected) and bias / RMSE
/// of the F_P outputs against the true control rates, per scenario.
/// fresh_mcmc mode runs the sampler once per replicate and is slow.
inline std::vector<ScenarioResult> run_operating_characteristics(
    const TrainedDesign& design, std::span<const Scenario> scenarios, std::uint64_t seed,
    DecisionMode mode = DecisionMode::surrogate, int threads = 1) {
  for (const auto& s : scenarios) {
    const auto rep = validate(s);
    if (!rep.passed()) throw ValidationError(rep.summary());
  }
  const auto models = models_from_design(design);
  const auto& c = design.config;
  std::vector<ScenarioResult> out;
  for (std::size_t k = 0; k < scenarios.size(); ++k) {
    const auto obs = simulate_observations(scenarios[k], c.n_control, c.n_treatment, seed, k);
    std::vector<DecisionOutcome> outcomes;
    if (mode == DecisionMode::fresh_mcmc) {
      MatrixXd s(obs.size(), 2), p(obs.size(), 2);
      parallel_for(obs.size(), threads, [&](std::size_t r) {
        McmcConfig m = c.mcmc;
        m.seed = derive_key(seed, "oc-mcmc", {k, r});
        m.threads = 1;
        const auto sum = posterior_summary(c.history, obs[r], c.endpoint, c.prior, m);
        s.row(r) << sum.s[0], sum.s[1];
        p.row(r) << sum.posterior_mean[0], sum.posterior_mean[1];
      });
      outcomes = decide_batch(models, obs, mode, &s, &p);
    } else {
      outcomes = decide_batch(models, obs, mode);
    }
    out.push_back(summarise(scenarios[k], mode, obs, outcomes, c.history));
  }
  return out;
}

struct PowerComparison {
  Scenario scenario;
  ScenarioResult surrogate;
  ScenarioResult constant;
};

/// Surrogate vs constant critical values on identical simulated trials.
inline std::vector<PowerComparison> compare_power_preservation(const TrainedDesign& design,
                                                               double c_const,
                                                               std::span<const Scenario> scenarios,
                                                               std::uint64_t seed) {
  TrainedDesign d = design;
  d.baseline.c_const = c_const;
  const auto a = run_operating_characteristics(d, scenarios, seed, DecisionMode::surrogate);
  const auto b = run_operating_characteristics(d, scenarios, seed, DecisionMode::constant_baseline);
  std::vector<PowerComparison> out;
  for (std::size_t k = 0; k < scenarios.size(); ++k) out.push_back({scenarios[k], a[k], b[k]});
  return out;
}

/// side x side observations: expected counts at control rates spread evenly
/// over the interior of each control range (trimmed by a tenth at each end),
/// treatment rates shifted by the midpoint of each effect range.
inline std::vector<CurrentTrialObservation> probe_grid(const DesignConfig& c, int side = 5) {
  if (side < 2) throw ValidationError("probe_grid: side must be at least 2");
  const auto& sp = c.spaces;
  auto level = [&](int i, int k) {
    const auto& r = sp.control_space[i];
    const double lo = r.lower + 0.1 * (r.upper - r.lower), hi = r.upper - 0.1 * (r.upper - r.lower);
    return lo + (hi - lo) * k / (side - 1);
  };
  auto count = [](double p, int n) {
    return static_cast<int>(std::lround(std::clamp(p, 0.0, 1.0) * n));
  };
  std::vector<CurrentTrialObservation> out;
  for (int a = 0; a < side; ++a)
    for (int b = 0; b < side; ++b) {
      const double pc[2] = {level(0, a), level(1, b)};
      CurrentTrialObservation o{c.n_control, c.n_treatment, {0, 0}, {0, 0}};
      for (int i = 0; i < 2; ++i) {
        const double shift = 0.5 * (sp.effect_space[i].lower + sp.effect_space[i].upper);
        o.r_control[i] = count(pc[i], c.n_control);
        o.r_treatment[i] = count(pc[i] + shift, c.n_treatment);
      }
      out.push_back(std::move(o));
    }
  return out;
}

/// Linear-interpolation sample quantile.
inline double sample_quantile(std::vector<double> v, double q) {
  if (v.empty()) throw ValidationError("sample_quantile: no values");
  std::sort(v.begin(), v.end());
  const double h = q * (v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - lo) * (v[hi] - v[lo]);
}

struct ProbeAudit {
  std::vector<CurrentTrialObservation> observations;
  std::vector<DivergenceRecord> records;
  std::array<double, 3> quantile_levels{0.5, 0.9, 1.0};
  std::array<double, 3> s_divergence{};  // over both endpoints pooled
  std::array<double, 3> p_divergence{};
  double speedup = 0.0;  // total MCMC seconds / total surrogate seconds
};

/// surrogate_vs_mcmc_report over the probe grid, one sampler stream per point.
inline ProbeAudit probe_audit(const TrainedDesign& design, std::uint64_t seed, int threads = 1,
                              int side = 5) {
  ProbeAudit a;
  a.observations = probe_grid(design.config, side);
  a.records.resize(a.observations.size());
  parallel_for(a.observations.size(), threads, [&](std::size_t k) {
    McmcConfig m = design.config.mcmc;
    m.seed = derive_key(seed, "probe", {k});
    m.threads = 1;
    a.records[k] = surrogate_vs_mcmc_report(design, a.observations[k], m);
  });
  std::vector<double> ds, dp;
  double ts = 0.0, tm = 0.0;
  for (const auto& r : a.records) {
    for (int i = 0; i < 2; ++i) {
      ds.push_back(r.divergence[i]);
      dp.push_back(std::abs(r.p_surrogate[i] - r.p_mcmc[i]));
    }
    ts += r.surrogate_seconds;
    tm += r.mcmc_seconds;
  }
  for (int q = 0; q < 3; ++q) {
    a.s_divergence[q] = sample_quantile(ds, a.quantile_levels[q]);
    a.p_divergence[q] = sample_quantile(dp, a.quantile_levels[q]);
  }
  a.speedup = ts > 0 ? tm / ts : 0.0;
  return a;
}

inline json to_json(const ProbeAudit& a) {
  json pts = json::array();
  for (std::size_t k = 0; k < a.records.size(); ++k) {
    json r = to_json(a.records[k]);
    r["observation"] = to_json(a.observations[k]);
    pts.push_back(std::move(r));
  }
  json qs = json::object();
  for (int q = 0; q < 3; ++q) {
    const auto key = "q" + std::to_string(static_cast<int>(std::lround(a.quantile_levels[q] * 100)));
    qs[key] = {{"s", a.s_divergence[q]}, {"posterior_mean", a.p_divergence[q]}};
  }
  return versioned({{"points", pts}, {"divergence_quantiles", qs}, {"speedup", a.speedup}});
}

/// The eleven validation rows: global nulls at control rates (0.3,0.2),
/// (0.4,0.3), (0.5,0.4); single nulls at (0.4,0.3); alternatives with both
/// effects 0.1 or 0.12 at each control pair.
inline std::vector<Scenario> standard_validation_scenarios(int replicates = 10000) {
  std::vector<Scenario> v;
  const std::array<std::array<double, 2>, 3> ctrl{{{0.3, 0.2}, {0.4, 0.3}, {0.5, 0.4}}};
  for (const auto& c : ctrl) v.push_back({c, {0.0, 0.0}, replicates, "global null"});
  v.push_back({ctrl[1], {0.1, 0.0}, replicates, "single null H2"});
  v.push_back({ctrl[1], {0.0, 0.1}, replicates, "single null H1"});
  for (const auto& c : ctrl)
    for (double d : {0.1, 0.12}) v.push_back({c, {d, d}, replicates, "alternative"});
  return v;
}

struct CaseStudyConfig {
  std::vector<std::array<double, 2>> control_scenarios{{0.7, 0.55}, {0.9, 0.75}, {0.8, 0.65}};
  std::vector<std::string> labels{"S1", "S2", "S3"};
  std::vector<std::array<double, 2>> effect_grid{{0.0, 0.0}, {0.03, 0.03}, {0.06, 0.06}, {0.09, 0.09}};
  int replicates = 10000;
};

/// Historical studies, sample sizes and ranges of the psoriasis case
/// study: control (0.65,0.95) x (0.5,0.8), effects (-0.1,0.1), n = 200 per
/// arm. Treatment draws above 1 are rejected.
inline DesignConfig case_study_design_config() {
  DesignConfig c;
  c.history = secukinumab_history();
  c.n_control = c.n_treatment = 200;
  c.spaces = {{{0.65, 0.95}, {0.5, 0.8}}, {{-0.1, 0.1}, {-0.1, 0.1}}};
  c.reject_infeasible = true;
  c.baseline_scenarios = {{0.7, 0.55}, {0.9, 0.75}, {0.8, 0.65}};
  return c;
}

/// Every (control scenario, effect) combination whose treatment rates stay
/// inside (0, 1).
inline std::vector<Scenario> case_study_scenarios(const CaseStudyConfig& cfg) {
  std::vector<Scenario> out;
  for (std::size_t k = 0; k < cfg.control_scenarios.size(); ++k)
    for (const auto& e : cfg.effect_grid) {
      Scenario s{cfg.control_scenarios[k], e, cfg.replicates,
                 k < cfg.labels.size() ? cfg.labels[k] : "S" + std::to_string(k + 1)};
      if (validate(s).passed()) out.push_back(s);
    }
  return out;
}

inline std::vector<ScenarioResult> run_case_study(const TrainedDesign& design,
                                                  const CaseStudyConfig& cfg, std::uint64_t seed,
                                                  DecisionMode mode = DecisionMode::surrogate) {
  const auto rep = validate(design.config.history, 2);
  if (!rep.passed()) throw ValidationError(rep.summary());
  return run_operating_characteristics(design, case_study_scenarios(cfg), seed, mode);
}

// ---------------------------------------------------------------------------
// Output

inline void write_results_header(std::ostream& os) {
  os << "label,psi_c1,psi_c2,delta1,delta2,replicates,mode,"
        "reject_h12,mcse_h12,reject_h1,mcse_h1,reject_h2,mcse_h2,"
        "bias1,bias2,rmse1,rmse2,pooled_bias1,pooled_bias2,pooled_rmse1,pooled_rmse2,"
        "clamped_fraction\n";
}

inline void write_results_csv(std::ostream& os, std::span<const ScenarioResult> results) {
  write_results_header(os);
  os.precision(10);
  for (const auto& r : results) {
    const auto& s = r.scenario;
    os << '"' << s.label << "\"," << s.control[0] << ',' << s.control[1] << ',' << s.effects[0]
       << ',' << s.effects[1] << ',' << s.replicates << ',' << to_string(r.mode) << ','
       << r.reject_h12.rate << ',' << r.reject_h12.mcse << ',' << r.reject_h1.rate << ','
       << r.reject_h1.mcse << ',' << r.reject_h2.rate << ',' << r.reject_h2.mcse << ','
       << r.bias[0] << ',' << r.bias[1] << ',' << r.rmse[0] << ',' << r.rmse[1] << ','
       << r.pooled_bias[0] << ',' << r.pooled_bias[1] << ',' << r.pooled_rmse[0] << ','
       << r.pooled_rmse[1] << ',' << r.clamped_fraction << '\n';
  }
}

inline json to_json(const Scenario& s) {
  return versioned({{"control", s.control},
                    {"effects", s.effects},
                    {"replicates", s.replicates},
                    {"label", s.label}});
}

inline Scenario scenario_from_json(const json& j, int default_replicates = 10000) {
  constexpr const char* T = "Scenario";
  check_object(j, T, {"control", "effects", "replicates", "label"});
  Scenario s;
  s.control = required<std::array<double, 2>>(j, T, "control");
  s.effects = optional_field(j, "effects", s.effects);
  s.replicates = optional_field(j, "replicates", default_replicates);
  s.label = optional_field<std::string>(j, "label", "");
  return s;
}

/// {"schema_version": 1, "scenarios": [...]}
inline std::vector<Scenario> scenario_list_from_json(const json& j, int default_replicates = 10000) {
  check_object(j, "ScenarioList", {"scenarios"});
  std::vector<Scenario> v;
  for (const auto& s : required<json>(j, "ScenarioList", "scenarios"))
    v.push_back(scenario_from_json(s, default_replicates));
  return v;
}

/// Run manifest: seed, config hash and design fingerprint.
inline json run_manifest(std::uint64_t seed, const json& config, const std::string& fingerprint,
                         const std::string& mode, std::size_t rows) {
  return versioned({{"seed", seed},
                    {"config_sha256", sha256_hex(config.dump())},
                    {"config", config},
                    {"design_fingerprint", fingerprint},
                    {"mode", mode},
                    {"rows", rows}});
}

}  // namespace hbdnn
