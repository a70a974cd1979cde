#pragma once

// Terminal decision for an observed trial: surrogate promise probabilities,
// critical values at the plug-in null features, the max rule, and the
// per-endpoint reject/fail outcome.

#include <array>
#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "hbdnn/design.hpp"

namespace hbdnn {

/// Null features estimated from the observed counts:
///   m1  = (pooled rate 1, control rate 2, treatment - control rate 2)
///   m2  = (control rate 1, treatment - control rate 1, pooled rate 2)
///   m12 = (pooled rate 1, pooled rate 2)
struct PlugInFeatures {
  std::array<double, 3> m1{};
  std::array<double, 3> m2{};
  std::array<double, 2> m12{};
};

inline PlugInFeatures plug_in_null_features(const CurrentTrialObservation& cur) {
  if (cur.r_control.size() != 2 || cur.r_treatment.size() != 2)
    throw ShapeMismatch("plug_in_null_features: two endpoints required");
  const double nc = cur.n_control, nt = cur.n_treatment;
  std::array<double, 2> pooled{}, ctrl{}, diff{};
  for (int i = 0; i < 2; ++i) {
    pooled[i] = (cur.r_control[i] + cur.r_treatment[i]) / (nc + nt);
    ctrl[i] = cur.r_control[i] / nc;
    diff[i] = cur.r_treatment[i] / nt - ctrl[i];
  }
  return {{pooled[0], ctrl[1], diff[1]}, {ctrl[0], diff[0], pooled[1]}, {pooled[0], pooled[1]}};
}

enum class DecisionMode { surrogate, constant_baseline, fresh_mcmc };

inline std::string to_string(DecisionMode m) {
  switch (m) {
    case DecisionMode::surrogate: return "surrogate";
    case DecisionMode::constant_baseline: return "constant_baseline";
    case DecisionMode::fresh_mcmc: return "fresh_mcmc";
  }
  return "?";
}

inline DecisionMode decision_mode_from_string(const std::string& s) {
  if (s == "surrogate") return DecisionMode::surrogate;
  if (s == "constant_baseline") return DecisionMode::constant_baseline;
  if (s == "fresh_mcmc") return DecisionMode::fresh_mcmc;
  throw ValidationError("unknown decision mode '" + s + "'");
}

struct DecisionOutcome {
  std::array<double, 2> s_hat{};
  std::array<double, 3> c_hat{};  // c_1, c_2, c_12
  std::array<double, 2> c_tilde{};
  std::array<bool, 2> rejected{};
  std::array<double, 2> posterior_mean_hat{};
  std::array<bool, 3> clamped{};  // plug-in features of m1, m2, m12 left the training box
  DecisionMode mode = DecisionMode::surrogate;

  bool any_rejected() const { return rejected[0] || rejected[1]; }
};

/// Batch callables behind a decision. Production code builds them from a
/// TrainedDesign; tests can substitute stubs.
struct DecisionModels {
  using BatchFn = std::function<MatrixXd(const MatrixXd&)>;
  BatchFn f_s, f_p, f1, f2, f12;
  std::array<std::vector<Interval>, 3> boxes;  // training box per null kind
  double c_const = std::numeric_limits<double>::quiet_NaN();
};

inline DecisionModels models_from_design(const TrainedDesign& d) {
  DecisionModels m;
  auto wrap = [](const MlpModel& net) {
    return [&net](const MatrixXd& x) { return net.predict(x); };
  };
  m.f_s = wrap(d.f_s);
  m.f_p = wrap(d.f_p);
  m.f1 = wrap(d.critical.network(NullKind::H1));
  m.f2 = wrap(d.critical.network(NullKind::H2));
  m.f12 = wrap(d.critical.network(NullKind::H12));
  for (NullKind k : all_null_kinds) m.boxes[kind_index(k)] = d.critical.audit(k).box;
  m.c_const = d.baseline.c_const;
  return m;
}

namespace detail {

template <std::size_t N>
bool clamp_into(std::array<double, N>& f, const std::vector<Interval>& box) {
  bool fired = false;
  if (box.size() != N) return false;  // no box recorded: leave unclamped
  for (std::size_t c = 0; c < N; ++c) {
    const double v = box[c].clamp(f[c]);
    fired = fired || v != f[c];
    f[c] = v;
  }
  return fired;
}

template <std::size_t N>
MatrixXd stack_rows(const std::vector<std::array<double, N>>& rows) {
  MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(N));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < N; ++c) x(r, c) = rows[r][c];
  return x;
}

}  // namespace detail

/// Max rule and reject decision from already-evaluated quantities.
inline void apply_max_rule(DecisionOutcome& o) {
  if (o.mode == DecisionMode::constant_baseline) {
    // c_hat holds the constant in every slot
    o.c_tilde = {o.c_hat[2], o.c_hat[2]};
  } else {
    o.c_tilde = {std::max(o.c_hat[0], o.c_hat[2]), std::max(o.c_hat[1], o.c_hat[2])};
  }
  for (int i = 0; i < 2; ++i) o.rejected[i] = o.s_hat[i] > o.c_tilde[i];
}

/// Decisions for many observations at once. In fresh_mcmc mode `s_override`
/// and `p_override` (one row per observation) replace the surrogate outputs.
inline std::vector<DecisionOutcome> decide_batch(const DecisionModels& models,
                                                 std::span<const CurrentTrialObservation> obs,
                                                 DecisionMode mode,
                                                 const MatrixXd* s_override = nullptr,
                                                 const MatrixXd* p_override = nullptr) {
  const std::size_t n = obs.size();
  std::vector<DecisionOutcome> out(n);
  if (n == 0) return out;
  MatrixXd xs(n, 4), xp(n, 2);
  std::vector<std::array<double, 3>> m1(n), m2(n);
  std::vector<std::array<double, 2>> m12(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto f = posterior_features(obs[r]);
    if (f.size() != 4) throw ShapeMismatch("decide: two endpoints required");
    for (int c = 0; c < 4; ++c) xs(r, c) = f[c];
    xp(r, 0) = f[0];
    xp(r, 1) = f[1];
    auto pf = plug_in_null_features(obs[r]);
    out[r].clamped[0] = detail::clamp_into(pf.m1, models.boxes[0]);
    out[r].clamped[1] = detail::clamp_into(pf.m2, models.boxes[1]);
    out[r].clamped[2] = detail::clamp_into(pf.m12, models.boxes[2]);
    m1[r] = pf.m1;
    m2[r] = pf.m2;
    m12[r] = pf.m12;
  }
  const MatrixXd s = s_override ? *s_override : models.f_s(xs);
  const MatrixXd p = p_override ? *p_override : models.f_p(xp);
  if (s.rows() != static_cast<Eigen::Index>(n) || s.cols() != 2 || p.rows() != s.rows())
    throw ShapeMismatch("decide: surrogate output shape mismatch");
  MatrixXd c1, c2, c12;
  if (mode != DecisionMode::constant_baseline) {
    c1 = models.f1(detail::stack_rows(m1));
    c2 = models.f2(detail::stack_rows(m2));
    c12 = models.f12(detail::stack_rows(m12));
  } else if (!std::isfinite(models.c_const)) {
    throw ValidationError("decide: design has no constant cutoff");
  }
  for (std::size_t r = 0; r < n; ++r) {
    auto& o = out[r];
    o.mode = mode;
    o.s_hat = {s(r, 0), s(r, 1)};
    o.posterior_mean_hat = {p(r, 0), p(r, 1)};
    if (mode == DecisionMode::constant_baseline) {
      o.c_hat = {models.c_const, models.c_const, models.c_const};
    } else {
      o.c_hat = {c1(r, 0), c2(r, 0), c12(r, 0)};
    }
    apply_max_rule(o);
  }
  return out;
}

inline void check_matches_design(const TrainedDesign& d, const CurrentTrialObservation& cur) {
  const auto rep = validate(cur, d.config.endpoint.endpoint_count);
  if (!rep.passed()) throw ValidationError(rep.summary());
  if (cur.n_control != d.config.n_control || cur.n_treatment != d.config.n_treatment)
    throw DesignMismatch("observation sample sizes (" + std::to_string(cur.n_control) + ", " +
                         std::to_string(cur.n_treatment) + ") differ from the design's (" +
                         std::to_string(d.config.n_control) + ", " +
                         std::to_string(d.config.n_treatment) + ")");
}

/// One terminal decision. fresh_mcmc replaces S and the posterior means by
/// a full MCMC run (`mcmc`, defaulting to the design's sampler settings).
inline DecisionOutcome decide(const TrainedDesign& design, const CurrentTrialObservation& cur,
                              DecisionMode mode = DecisionMode::surrogate,
                              const McmcConfig* mcmc = nullptr) {
  check_matches_design(design, cur);
  const auto models = models_from_design(design);
  const std::array<CurrentTrialObservation, 1> one{cur};
  if (mode != DecisionMode::fresh_mcmc) return decide_batch(models, one, mode).front();
  const auto& c = design.config;
  const auto summary =
      posterior_summary(c.history, cur, c.endpoint, c.prior, mcmc ? *mcmc : c.mcmc);
  MatrixXd s(1, 2), p(1, 2);
  s << summary.s[0], summary.s[1];
  p << summary.posterior_mean[0], summary.posterior_mean[1];
  return decide_batch(models, one, mode, &s, &p).front();
}

struct DivergenceRecord {
  std::array<double, 2> s_surrogate{};
  std::array<double, 2> s_mcmc{};
  std::array<double, 2> divergence{};
  std::array<double, 2> p_surrogate{};
  std::array<double, 2> p_mcmc{};
  double surrogate_seconds = 0.0;
  double mcmc_seconds = 0.0;
};

/// |S_hat - S_mcmc| per endpoint with the wall-clock of each path.
inline DivergenceRecord surrogate_vs_mcmc_report(const TrainedDesign& design,
                                                 const CurrentTrialObservation& cur,
                                                 const McmcConfig& mcmc) {
  check_matches_design(design, cur);
  using clock = std::chrono::steady_clock;
  DivergenceRecord r;
  const auto t0 = clock::now();
  const auto o = decide(design, cur, DecisionMode::surrogate);
  const auto t1 = clock::now();
  const auto& c = design.config;
  const auto summary = posterior_summary(c.history, cur, c.endpoint, c.prior, mcmc);
  const auto t2 = clock::now();
  r.surrogate_seconds = std::chrono::duration<double>(t1 - t0).count();
  r.mcmc_seconds = std::chrono::duration<double>(t2 - t1).count();
  for (int i = 0; i < 2; ++i) {
    r.s_surrogate[i] = o.s_hat[i];
    r.s_mcmc[i] = summary.s[i];
    r.divergence[i] = std::abs(o.s_hat[i] - summary.s[i]);
    r.p_surrogate[i] = o.posterior_mean_hat[i];
    r.p_mcmc[i] = summary.posterior_mean[i];
  }
  return r;
}

inline json to_json(const DecisionOutcome& o) {
  return versioned({{"mode", to_string(o.mode)},
                    {"s_hat", o.s_hat},
                    {"c_hat", {{"c1", o.c_hat[0]}, {"c2", o.c_hat[1]}, {"c12", o.c_hat[2]}}},
                    {"c_tilde", o.c_tilde},
                    {"rejected", o.rejected},
                    {"posterior_mean_hat", o.posterior_mean_hat},
                    {"clamped", {{"m1", o.clamped[0]}, {"m2", o.clamped[1]}, {"m12", o.clamped[2]}}}});
}

/// Decision report: the outcome plus observation and design fingerprint.
inline json decision_report(const DecisionOutcome& o, const CurrentTrialObservation& cur,
                            const std::string& fingerprint) {
  json j = to_json(o);
  j["observation"] = to_json(cur);
  j["design_fingerprint"] = fingerprint;
  return j;
}

inline json to_json(const DivergenceRecord& r) {
  return {{"s_surrogate", r.s_surrogate}, {"s_mcmc", r.s_mcmc},
          {"divergence", r.divergence},   {"p_surrogate", r.p_surrogate},
          {"p_mcmc", r.p_mcmc},           {"surrogate_seconds", r.surrogate_seconds},
          {"mcmc_seconds", r.mcmc_seconds}};
}

}  // namespace hbdnn
