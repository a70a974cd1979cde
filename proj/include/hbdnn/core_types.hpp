#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hbdnn/linalg.hpp"
#include "hbdnn/schema.hpp"

namespace hbdnn {

struct Interval {
  double lower = 0.0;
  double upper = 0.0;

  double width() const { return upper - lower; }
  double mid() const { return 0.5 * (lower + upper); }
  bool contains(double x) const { return x >= lower && x <= upper; }
  double clamp(double x) const { return x < lower ? lower : (x > upper ? upper : x); }
  bool operator==(const Interval&) const = default;
};

struct BetaPrior {
  double a = 1.0;
  double b = 1.0;
  bool operator==(const BetaPrior&) const = default;
};

struct EndpointConfig {
  int endpoint_count = 2;
  std::vector<double> promise_margins{0.0, 0.0};
  std::vector<BetaPrior> treatment_prior{{1.0, 1.0}, {1.0, 1.0}};
  double alpha = 0.05;
  bool operator==(const EndpointConfig&) const = default;
};

struct Study {
  int n = 0;
  std::vector<int> responders;  // one count per endpoint
  std::string name;
  bool operator==(const Study&) const = default;
};

struct HistoricalDataset {
  std::vector<Study> studies;

  int endpoint_count() const {
    return studies.empty() ? 0 : static_cast<int>(studies.front().responders.size());
  }
  bool operator==(const HistoricalDataset&) const = default;
};

struct CurrentTrialObservation {
  int n_control = 0;
  int n_treatment = 0;
  std::vector<int> r_control;
  std::vector<int> r_treatment;
  bool operator==(const CurrentTrialObservation&) const = default;
};

struct ParameterSpaces {
  std::vector<Interval> control_space;
  std::vector<Interval> effect_space;
  bool operator==(const ParameterSpaces&) const = default;
};

struct HierPriorConfig {
  double theta_precision = 0.01;
  MatrixXd sigma0;
  double wishart_df = 3.0;

  /// Zero-mean precision-0.01 prior on the mean, identity scale, k = I + 1.
  static HierPriorConfig defaults(int endpoints) {
    return {0.01, MatrixXd::Identity(endpoints, endpoints), endpoints + 1.0};
  }
  bool operator==(const HierPriorConfig& o) const {
    return theta_precision == o.theta_precision && wishart_df == o.wishart_df &&
           sigma0.rows() == o.sigma0.rows() && sigma0.cols() == o.sigma0.cols() &&
           sigma0 == o.sigma0;
  }
};

struct ValidationReport {
  std::vector<std::string> violations;

  bool passed() const { return violations.empty(); }
  void fail(std::string what) { violations.push_back(std::move(what)); }
  void merge(const ValidationReport& other) {
    violations.insert(violations.end(), other.violations.begin(), other.violations.end());
  }
  std::string summary() const {
    std::string s;
    for (const auto& v : violations) s += (s.empty() ? "" : "; ") + v;
    return s;
  }
};

// ---------------------------------------------------------------------------
// Validation. None of these throw: every structural problem becomes a
// violation entry.

inline ValidationReport validate(const EndpointConfig& cfg) {
  ValidationReport rep;
  const int I = cfg.endpoint_count;
  if (I < 1) rep.fail("endpoint_count must be at least 1");
  if (static_cast<int>(cfg.promise_margins.size()) != I)
    rep.fail("promise_margins length does not match endpoint_count");
  if (static_cast<int>(cfg.treatment_prior.size()) != I)
    rep.fail("treatment_prior length does not match endpoint_count");
  for (double m : cfg.promise_margins)
    if (!(m > -1.0 && m < 1.0)) rep.fail("promise margin outside (-1, 1)");
  for (const auto& p : cfg.treatment_prior)
    if (!(p.a > 0.0 && p.b > 0.0) || !std::isfinite(p.a) || !std::isfinite(p.b))
      rep.fail("treatment prior parameters must be positive");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) rep.fail("alpha must lie in (0, 1)");
  return rep;
}

inline ValidationReport validate(const HistoricalDataset& hist, int endpoints) {
  ValidationReport rep;
  if (hist.studies.empty()) rep.fail("historical dataset has no studies");
  for (std::size_t j = 0; j < hist.studies.size(); ++j) {
    const auto& s = hist.studies[j];
    const std::string where = "study " + std::to_string(j + 1) + ": ";
    if (s.n < 1) rep.fail(where + "sample size must be positive");
    if (static_cast<int>(s.responders.size()) != endpoints)
      rep.fail(where + "endpoint dimension mismatch");
    for (int r : s.responders) {
      if (r < 0) rep.fail(where + "negative responder count");
      if (r > s.n) rep.fail(where + "responders exceed sample size");
    }
  }
  return rep;
}

inline ValidationReport validate(const CurrentTrialObservation& cur, int endpoints) {
  ValidationReport rep;
  if (cur.n_control < 1) rep.fail("current control sample size must be positive");
  if (cur.n_treatment < 1) rep.fail("current treatment sample size must be positive");
  if (static_cast<int>(cur.r_control.size()) != endpoints ||
      static_cast<int>(cur.r_treatment.size()) != endpoints)
    rep.fail("current trial endpoint dimension mismatch");
  for (int r : cur.r_control) {
    if (r < 0) rep.fail("current control: negative responder count");
    if (r > cur.n_control) rep.fail("current control: responders exceed sample size");
  }
  for (int r : cur.r_treatment) {
    if (r < 0) rep.fail("current treatment: negative responder count");
    if (r > cur.n_treatment) rep.fail("current treatment: responders exceed sample size");
  }
  return rep;
}

inline ValidationReport validate(const ParameterSpaces& spaces, int endpoints) {
  ValidationReport rep;
  if (static_cast<int>(spaces.control_space.size()) != endpoints ||
      static_cast<int>(spaces.effect_space.size()) != endpoints)
    rep.fail("parameter space dimension mismatch");
  for (const auto& iv : spaces.control_space)
    if (!(iv.lower > 0.0 && iv.upper < 1.0 && iv.lower < iv.upper))
      rep.fail("control space interval must satisfy 0 < lower < upper < 1");
  for (const auto& iv : spaces.effect_space)
    if (!(iv.lower > -1.0 && iv.upper < 1.0 && iv.lower < iv.upper))
      rep.fail("effect space interval must satisfy -1 < lower < upper < 1");
  return rep;
}

inline ValidationReport validate(const HierPriorConfig& prior, int endpoints) {
  ValidationReport rep;
  if (!(prior.theta_precision > 0.0) || !std::isfinite(prior.theta_precision))
    rep.fail("theta_precision must be positive");
  if (prior.sigma0.rows() != endpoints || prior.sigma0.cols() != endpoints) {
    rep.fail("sigma0 dimension mismatch");
  } else if (!is_spd(prior.sigma0)) {
    rep.fail("sigma0 must be symmetric positive definite");
  }
  if (!(prior.wishart_df >= endpoints)) rep.fail("wishart_df must be at least I");
  return rep;
}

/// Pass iff every type invariant holds and the endpoint dimensions of the
/// three inputs agree.
inline ValidationReport validate_dataset(const HistoricalDataset& hist,
                                         const CurrentTrialObservation& cur,
                                         const EndpointConfig& cfg) {
  ValidationReport rep = validate(cfg);
  rep.merge(validate(hist, cfg.endpoint_count));
  rep.merge(validate(cur, cfg.endpoint_count));
  return rep;
}

struct RatePair {
  double control = 0.0;
  double treatment = 0.0;
  bool operator==(const RatePair&) const = default;
};

/// Observed r/n per arm, one pair per endpoint.
inline std::vector<RatePair> empirical_rates(const CurrentTrialObservation& cur) {
  std::vector<RatePair> out(cur.r_control.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].control = static_cast<double>(cur.r_control[i]) / cur.n_control;
    out[i].treatment = static_cast<double>(cur.r_treatment[i]) / cur.n_treatment;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reference datasets.

/// Six simulated historical studies, rates 0.4 / 0.3.
inline HistoricalDataset example_history_j6() {
  return {{{100, {33, 31}},
           {100, {41, 28}},
           {200, {78, 69}},
           {200, {81, 68}},
           {300, {115, 94}},
           {300, {113, 97}}}};
}

/// Active-comparator arms of ERASURE, FIXTURE and JUNCTURE (PASI 75, IGA 0/1).
inline HistoricalDataset secukinumab_history() {
  return {{{245, {200, 160}, "ERASURE"},
           {323, {249, 202}, "FIXTURE"},
           {60, {52, 44}, "JUNCTURE"}}};
}

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const Interval& iv) { return json::array({iv.lower, iv.upper}); }

inline Interval interval_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw SchemaError("interval must be a [lower, upper] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline json to_json(const EndpointConfig& c) {
  json priors = json::array();
  for (const auto& p : c.treatment_prior) priors.push_back({{"a", p.a}, {"b", p.b}});
  return versioned({{"endpoint_count", c.endpoint_count},
                    {"promise_margins", c.promise_margins},
                    {"treatment_prior", priors},
                    {"alpha", c.alpha}});
}

inline EndpointConfig endpoint_config_from_json(const json& j) {
  constexpr const char* T = "EndpointConfig";
  check_object(j, T, {"endpoint_count", "promise_margins", "treatment_prior", "alpha"});
  EndpointConfig c;
  c.endpoint_count = required<int>(j, T, "endpoint_count");
  c.promise_margins = required<std::vector<double>>(j, T, "promise_margins");
  c.treatment_prior.clear();
  const auto priors = required<json>(j, T, "treatment_prior");
  if (!priors.is_array()) throw SchemaError("EndpointConfig: treatment_prior must be an array");
  for (const auto& p : priors) {
    if (!p.is_object() || p.size() != 2 || !p.contains("a") || !p.contains("b"))
      throw SchemaError("EndpointConfig: treatment prior entries need exactly a and b");
    c.treatment_prior.push_back({p.at("a").get<double>(), p.at("b").get<double>()});
  }
  c.alpha = required<double>(j, T, "alpha");
  return c;
}

inline json to_json(const HistoricalDataset& h) {
  json studies = json::array();
  for (const auto& s : h.studies) {
    json entry{{"n", s.n}, {"responders", s.responders}};
    if (!s.name.empty()) entry["name"] = s.name;
    studies.push_back(std::move(entry));
  }
  return versioned({{"studies", studies}});
}

inline HistoricalDataset historical_dataset_from_json(const json& j) {
  constexpr const char* T = "HistoricalDataset";
  check_object(j, T, {"studies"});
  HistoricalDataset h;
  const auto studies = required<json>(j, T, "studies");
  if (!studies.is_array()) throw SchemaError("HistoricalDataset: studies must be an array");
  for (const auto& s : studies) {
    if (!s.is_object()) throw SchemaError("HistoricalDataset: study must be an object");
    for (const auto& [key, _] : s.items())
      if (key != "n" && key != "responders" && key != "name")
        throw SchemaError("HistoricalDataset: unknown study field '" + key + "'");
    h.studies.push_back({required<int>(s, T, "n"), required<std::vector<int>>(s, T, "responders"),
                         optional_field<std::string>(s, "name", "")});
  }
  return h;
}

inline json to_json(const CurrentTrialObservation& o) {
  return versioned({{"n_control", o.n_control},
                    {"n_treatment", o.n_treatment},
                    {"r_control", o.r_control},
                    {"r_treatment", o.r_treatment}});
}

inline CurrentTrialObservation observation_from_json(const json& j) {
  constexpr const char* T = "CurrentTrialObservation";
  check_object(j, T, {"n_control", "n_treatment", "r_control", "r_treatment"});
  return {required<int>(j, T, "n_control"), required<int>(j, T, "n_treatment"),
          required<std::vector<int>>(j, T, "r_control"),
          required<std::vector<int>>(j, T, "r_treatment")};
}

inline json to_json(const ParameterSpaces& p) {
  json cs = json::array(), es = json::array();
  for (const auto& iv : p.control_space) cs.push_back(to_json(iv));
  for (const auto& iv : p.effect_space) es.push_back(to_json(iv));
  return versioned({{"control_space", cs}, {"effect_space", es}});
}

inline ParameterSpaces parameter_spaces_from_json(const json& j) {
  constexpr const char* T = "ParameterSpaces";
  check_object(j, T, {"control_space", "effect_space"});
  ParameterSpaces p;
  for (const auto& iv : required<json>(j, T, "control_space"))
    p.control_space.push_back(interval_from_json(iv));
  for (const auto& iv : required<json>(j, T, "effect_space"))
    p.effect_space.push_back(interval_from_json(iv));
  return p;
}

inline json to_json(const HierPriorConfig& p) {
  return versioned({{"theta_precision", p.theta_precision},
                    {"sigma0", matrix_to_json(p.sigma0)},
                    {"wishart_df", p.wishart_df}});
}

inline HierPriorConfig hier_prior_from_json(const json& j) {
  constexpr const char* T = "HierPriorConfig";
  check_object(j, T, {"theta_precision", "sigma0", "wishart_df"});
  return {required<double>(j, T, "theta_precision"),
          matrix_from_json(required<json>(j, T, "sigma0")),
          required<double>(j, T, "wishart_df")};
}

}  // namespace hbdnn
