#pragma once

// Posterior sampling for the logit-normal hierarchical control model
//
//   R_ij ~ Binomial(n_j, psi_ij),  mu_j = logit(psi_j) ~ MVN(theta, Sigma),
//   theta ~ N(0, tau^-1 I),        Sigma ~ InverseWishart(Sigma0, k),
//
// over units j = 0 (current control) .. J (historical studies), plus the
// conjugate beta model for the treatment arm and Monte Carlo summaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hbdnn/core_types.hpp"
#include "hbdnn/parallel.hpp"
#include "hbdnn/rng.hpp"

namespace hbdnn {

struct ProposalAdaptation {
  double target_low = 0.25;
  double target_high = 0.45;
  int window = 50;
  bool operator==(const ProposalAdaptation&) const = default;
};

struct McmcConfig {
  int chains = 3;
  int burn_in = 2000;
  int kept_draws_per_chain = 3334;
  int thinning = 1;
  double rhat_threshold = 1.01;
  ProposalAdaptation adaptation;
  std::uint64_t seed = 1;
  int max_restarts = 1;  // each restart doubles the burn-in
  bool keep_hyper_draws = false;
  int threads = 1;
  bool operator==(const McmcConfig&) const = default;
};

inline ValidationReport validate(const McmcConfig& cfg) {
  ValidationReport rep;
  if (cfg.chains < 2) rep.fail("mcmc: at least two chains are required");
  if (cfg.burn_in < 0) rep.fail("mcmc: burn_in must be non-negative");
  if (cfg.thinning < 1) rep.fail("mcmc: thinning must be at least 1");
  if (static_cast<long>(cfg.kept_draws_per_chain) * cfg.chains < 1000)
    rep.fail("mcmc: kept draws across chains must be at least 1000");
  if (!(cfg.rhat_threshold > 1.0)) rep.fail("mcmc: rhat_threshold must exceed 1");
  if (cfg.max_restarts < 0) rep.fail("mcmc: max_restarts must be non-negative");
  const auto& a = cfg.adaptation;
  if (!(0.0 < a.target_low && a.target_low < a.target_high && a.target_high < 1.0) ||
      a.window < 1)
    rep.fail("mcmc: invalid proposal adaptation band");
  return rep;
}

struct McmcDiagnostics {
  std::vector<double> rhat;   // per endpoint, on psi^(c)_{i,0}
  MatrixXd acceptance_rate;   // (J+1) x I, post burn-in, averaged over chains
  int attempts = 0;
  int burn_in_used = 0;
};

struct PosteriorDraws {
  MatrixXd control_draws;    // n_draws x I, chain-major
  MatrixXd treatment_draws;  // n_draws x I (empty until filled)
  McmcDiagnostics diagnostics;
  int chains = 0;
  int draws_per_chain = 0;
  MatrixXd theta_draws;              // only with keep_hyper_draws
  std::vector<MatrixXd> sigma_draws;  // only with keep_hyper_draws
};

struct MvnParams {
  VectorXd mean;
  MatrixXd cov;
};

struct InverseWishartParams {
  double df = 0.0;
  MatrixXd scale;
};

namespace detail {

inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline MvnParams theta_conditional(const MatrixXd& mu, const MatrixXd& precision,
                                   double tau) {
  const auto I = precision.rows();
  const double units = static_cast<double>(mu.rows());
  const MatrixXd post_precision = tau * MatrixXd::Identity(I, I) + units * precision;
  MvnParams out;
  out.cov = sym_inverse(post_precision);
  out.mean = out.cov * (precision * mu.colwise().sum().transpose());
  return out;
}

}  // namespace detail

/// Conditional posterior of theta given the unit means (rows of `mu`) and
/// Sigma: covariance (tau I + (J+1) Sigma^-1)^-1, mean cov Sigma^-1 sum_j mu_j.
inline MvnParams update_theta(const MatrixXd& mu, const MatrixXd& sigma,
                              const HierPriorConfig& prior) {
  if (sigma.rows() != mu.cols() || sigma.cols() != mu.cols())
    throw ShapeMismatch("update_theta: sigma does not match mu width");
  return detail::theta_conditional(mu, sym_inverse(sigma), prior.theta_precision);
}

/// Conditional posterior of Sigma: InverseWishart with df k + (J+1) and scale
/// Sigma0 + sum_j (mu_j - theta)(mu_j - theta)^T.
inline InverseWishartParams update_sigma(const MatrixXd& mu, const VectorXd& theta,
                                         const HierPriorConfig& prior) {
  if (theta.size() != mu.cols() || prior.sigma0.rows() != mu.cols())
    throw ShapeMismatch("update_sigma: dimension mismatch");
  const MatrixXd resid = mu.rowwise() - theta.transpose();
  InverseWishartParams out;
  out.df = prior.wishart_df + static_cast<double>(mu.rows());
  out.scale = prior.sigma0 + resid.transpose() * resid;
  return out;
}

/// Wishart(V, df) draw by the Bartlett decomposition; E[W] = df V.
inline MatrixXd sample_wishart(const MatrixXd& v, double df, CounterRng& rng) {
  const auto p = v.rows();
  const MatrixXd l = sym_sqrt_factor(v);
  MatrixXd a = MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    a(i, i) = std::sqrt(2.0 * rng.gamma(0.5 * (df - static_cast<double>(i))));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  const MatrixXd la = l * a;
  return la * la.transpose();
}

/// Draw of Sigma^-1 for Sigma ~ InverseWishart(scale, df), i.e. a
/// Wishart(scale^-1, df) draw, so E[Sigma^-1] = df scale^-1.
inline MatrixXd sample_precision(const InverseWishartParams& params, CounterRng& rng) {
  return sample_wishart(sym_inverse(params.scale), params.df, rng);
}

inline MatrixXd sample_inverse_wishart(const InverseWishartParams& params, CounterRng& rng) {
  return sym_inverse(sample_precision(params, rng));
}

/// Potential scale reduction: sqrt(((n-1)/n W + B/n) / W), with W the mean
/// within-chain variance and B = n * variance of the chain means.
inline double gelman_rubin(std::span<const std::vector<double>> chains) {
  if (chains.size() < 2) throw DegenerateChains("gelman_rubin: need at least two chains");
  const std::size_t n = chains.front().size();
  if (n < 2) throw DegenerateChains("gelman_rubin: chains need at least two draws");
  const auto m = static_cast<double>(chains.size());
  std::vector<double> means;
  double w = 0.0;
  for (const auto& c : chains) {
    if (c.size() != n) throw DegenerateChains("gelman_rubin: chains differ in length");
    CompensatedSum s;
    for (double x : c) s.add(x);
    const double mean = s.value() / static_cast<double>(n);
    CompensatedSum ss;
    for (double x : c) ss.add((x - mean) * (x - mean));
    w += ss.value() / static_cast<double>(n - 1);
    means.push_back(mean);
  }
  w /= m;
  if (!(w > 0.0)) throw DegenerateChains("gelman_rubin: zero within-chain variance");
  double grand = 0.0;
  for (double x : means) grand += x;
  grand /= m;
  double var_means = 0.0;
  for (double x : means) var_means += (x - grand) * (x - grand);
  var_means /= (m - 1.0);
  const double nn = static_cast<double>(n);
  const double b = nn * var_means;
  return std::sqrt(((nn - 1.0) / nn * w + b / nn) / w);
}

/// iid draws from Beta(a + r, b + n - r).
inline VectorXd sample_beta_posterior(int r, int n, double a, double b, int n_draws,
                                      std::uint64_t seed) {
  if (r < 0 || r > n) throw ValidationError("sample_beta_posterior: need 0 <= r <= n");
  if (!(a > 0.0 && b > 0.0)) throw ValidationError("sample_beta_posterior: need a, b > 0");
  CounterRng rng(seed);
  VectorXd out(n_draws);
  const double pa = a + r, pb = b + (n - r);
  for (int d = 0; d < n_draws; ++d) {
    double x = rng.beta(pa, pb);
    // keep strictly inside (0, 1) even when a gamma variate underflows
    out[d] = std::clamp(x, 1e-300, 1.0 - 1e-16);
  }
  return out;
}

/// S_i = fraction of paired draws with psi_t - psi_c > margin_i.
inline std::vector<double> posterior_prob_S(const MatrixXd& control, const MatrixXd& treatment,
                                            std::span<const double> margins) {
  if (control.rows() != treatment.rows() || control.cols() != treatment.cols() ||
      static_cast<std::size_t>(control.cols()) != margins.size())
    throw ShapeMismatch("posterior_prob_S: draw matrices or margins disagree");
  std::vector<double> s(margins.size(), 0.0);
  for (std::size_t i = 0; i < margins.size(); ++i) {
    long hits = 0;
    for (Eigen::Index d = 0; d < control.rows(); ++d)
      hits += (treatment(d, i) - control(d, i) > margins[i]);
    s[i] = static_cast<double>(hits) / static_cast<double>(control.rows());
  }
  return s;
}

inline std::vector<double> posterior_mean_control(const MatrixXd& control) {
  if (control.rows() == 0) throw ShapeMismatch("posterior_mean_control: no draws");
  std::vector<double> out(control.cols());
  for (Eigen::Index i = 0; i < control.cols(); ++i) {
    CompensatedSum s;
    for (Eigen::Index d = 0; d < control.rows(); ++d) s.add(control(d, i));
    out[i] = s.value() / static_cast<double>(control.rows());
  }
  return out;
}

/// Monte Carlo standard error of a mean by non-overlapping batch means
/// (batch count ~ sqrt(n)); accounts for autocorrelation.
inline double mcse_batch_means(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 4) return std::numeric_limits<double>::infinity();
  const std::size_t batch = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(n)));
  const std::size_t nb = n / batch;
  if (nb < 2) return std::numeric_limits<double>::infinity();
  std::vector<double> means(nb);
  double grand = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    double s = 0.0;
    for (std::size_t k = 0; k < batch; ++k) s += x[b * batch + k];
    means[b] = s / static_cast<double>(batch);
    grand += means[b];
  }
  grand /= static_cast<double>(nb);
  double v = 0.0;
  for (double m : means) v += (m - grand) * (m - grand);
  v /= static_cast<double>(nb - 1);
  return std::sqrt(v / static_cast<double>(nb));
}

namespace detail {

struct HierUnits {
  std::vector<int> n;           // unit 0 is the current control arm
  std::vector<std::vector<int>> r;
  int endpoints = 0;
  int size() const { return static_cast<int>(n.size()); }
};

struct ChainOutput {
  MatrixXd psi0;
  MatrixXd accepted;  // acceptance counts, units x I
  MatrixXd theta;
  std::vector<MatrixXd> sigma;
};

inline ChainOutput run_chain(const HierUnits& units, const HierPriorConfig& prior,
                             const McmcConfig& cfg, int burn_in, CounterRng rng) {
  const int J1 = units.size();
  const int I = units.endpoints;
  MatrixXd mu(J1, I), step(J1, I);
  for (int j = 0; j < J1; ++j) {
    for (int i = 0; i < I; ++i) {
      const double p = (units.r[j][i] + 0.5) / (units.n[j] + 1.0);
      mu(j, i) = logit(p) + 0.5 * rng.normal();  // over-dispersed start
      step(j, i) = 2.4 / std::sqrt(units.n[j] * p * (1.0 - p));
    }
  }
  VectorXd theta = mu.colwise().mean().transpose();
  MatrixXd precision = prior.wishart_df * sym_inverse(prior.sigma0);
  MatrixXd sigma = sym_inverse(precision);

  ChainOutput out;
  const int kept = cfg.kept_draws_per_chain;
  out.psi0.resize(kept, I);
  out.accepted = MatrixXd::Zero(J1, I);
  if (cfg.keep_hyper_draws) {
    out.theta.resize(kept, I);
    out.sigma.reserve(kept);
  }
  MatrixXd window_hits = MatrixXd::Zero(J1, I);
  const auto& adapt = cfg.adaptation;
  const double target = 0.5 * (adapt.target_low + adapt.target_high);

  const long total = static_cast<long>(burn_in) + static_cast<long>(kept) * cfg.thinning;
  int recorded = 0;
  for (long it = 0; it < total; ++it) {
    const bool burning = it < burn_in;

    // (a) random-walk Metropolis on each mu_{j,i}
    for (int j = 0; j < J1; ++j) {
      const double nj = units.n[j];
      for (int i = 0; i < I; ++i) {
        const double cur = mu(j, i);
        const double delta = step(j, i) * rng.normal();
        const double prop = cur + delta;
        double pd = 0.0;
        for (int k = 0; k < I; ++k) pd += precision(i, k) * (mu(j, k) - theta[k]);
        const double log_ratio = units.r[j][i] * delta - nj * (softplus(prop) - softplus(cur)) -
                                 0.5 * (2.0 * delta * pd + delta * delta * precision(i, i));
        if (log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio) {
          mu(j, i) = prop;
          if (burning)
            window_hits(j, i) += 1.0;
          else
            out.accepted(j, i) += 1.0;
        }
      }
    }
    if (burning && (it + 1) % adapt.window == 0) {
      for (int j = 0; j < J1; ++j) {
        for (int i = 0; i < I; ++i) {
          const double rate = window_hits(j, i) / adapt.window;
          if (rate < adapt.target_low || rate > adapt.target_high)
            step(j, i) *= std::exp(2.0 * (rate - target));
        }
      }
      window_hits.setZero();
    }

    // (b) theta | mu, Sigma
    const MvnParams tc = theta_conditional(mu, precision, prior.theta_precision);
    VectorXd z(I);
    for (int i = 0; i < I; ++i) z[i] = rng.normal();
    theta = tc.mean + sym_sqrt_factor(tc.cov) * z;

    // (c) Sigma | mu, theta
    precision = sample_precision(update_sigma(mu, theta, prior), rng);
    if (!precision.allFinite() || min_eigenvalue(precision) <= eigen_floor)
      throw NumericalFailure("Sigma update lost positive definiteness");

    if (!burning && (it - burn_in + 1) % cfg.thinning == 0) {
      for (int i = 0; i < I; ++i) out.psi0(recorded, i) = inv_logit(mu(0, i));
      if (cfg.keep_hyper_draws) {
        out.theta.row(recorded) = theta.transpose();
        sigma = sym_inverse(precision);
        out.sigma.push_back(sigma);
      }
      ++recorded;
    }
  }
  const double post_sweeps = static_cast<double>(kept) * cfg.thinning;
  out.accepted /= post_sweeps;
  return out;
}

inline HierUnits make_units(const HistoricalDataset& hist, int n_control,
                            std::span<const int> r_control) {
  HierUnits u;
  u.endpoints = static_cast<int>(r_control.size());
  u.n.push_back(n_control);
  u.r.emplace_back(r_control.begin(), r_control.end());
  for (const auto& s : hist.studies) {
    u.n.push_back(s.n);
    u.r.push_back(s.responders);
  }
  return u;
}

}  // namespace detail

/// Metropolis-within-Gibbs over (mu_0..mu_J, theta, Sigma). Returns kept
/// draws of psi^(c)_{i,0} = inv_logit(mu_{i,0}) pooled over chains, with
/// R-hat per endpoint. A failed convergence check is retried with doubled
/// burn-in up to cfg.max_restarts times before NonConvergence is thrown.
inline PosteriorDraws sample_hier_posterior(const HistoricalDataset& hist, int n_control,
                                            std::span<const int> r_control,
                                            const HierPriorConfig& prior,
                                            const McmcConfig& cfg) {
  const int I = static_cast<int>(r_control.size());
  ValidationReport rep = validate(cfg);
  rep.merge(validate(hist, I));
  rep.merge(validate(prior, I));
  CurrentTrialObservation probe{n_control, 1, {r_control.begin(), r_control.end()},
                                std::vector<int>(I, 0)};
  rep.merge(validate(probe, I));
  if (!rep.passed()) throw ValidationError("sample_hier_posterior: " + rep.summary());

  const detail::HierUnits units = detail::make_units(hist, n_control, r_control);
  std::vector<double> rhat(I);
  for (int attempt = 0; attempt <= cfg.max_restarts; ++attempt) {
    const int burn_in = cfg.burn_in << attempt;
    std::vector<detail::ChainOutput> chains(cfg.chains);
    parallel_for(chains.size(), cfg.threads, [&](std::size_t c) {
      CounterRng rng(derive_key(cfg.seed, {static_cast<std::uint64_t>(attempt), c}));
      chains[c] = detail::run_chain(units, prior, cfg, burn_in, rng);
    });

    bool converged = true;
    for (int i = 0; i < I; ++i) {
      std::vector<std::vector<double>> series(cfg.chains);
      for (int c = 0; c < cfg.chains; ++c) {
        const auto& col = chains[c].psi0.col(i);
        series[c].assign(col.data(), col.data() + col.size());
      }
      try {
        rhat[i] = gelman_rubin(series);
      } catch (const DegenerateChains&) {
        rhat[i] = std::numeric_limits<double>::infinity();
      }
      converged = converged && rhat[i] < cfg.rhat_threshold;
    }
    if (!converged && attempt < cfg.max_restarts) continue;
    if (!converged) {
      std::string msg = "R-hat above threshold after " + std::to_string(attempt + 1) +
                        " attempt(s):";
      for (double r : rhat) msg += " " + std::to_string(r);
      throw NonConvergence(msg);
    }

    PosteriorDraws out;
    out.chains = cfg.chains;
    out.draws_per_chain = cfg.kept_draws_per_chain;
    out.control_draws.resize(static_cast<Eigen::Index>(cfg.chains) * cfg.kept_draws_per_chain, I);
    out.diagnostics.acceptance_rate = MatrixXd::Zero(units.size(), I);
    if (cfg.keep_hyper_draws) out.theta_draws.resize(out.control_draws.rows(), I);
    for (int c = 0; c < cfg.chains; ++c) {
      const auto offset = static_cast<Eigen::Index>(c) * cfg.kept_draws_per_chain;
      out.control_draws.middleRows(offset, cfg.kept_draws_per_chain) = chains[c].psi0;
      out.diagnostics.acceptance_rate += chains[c].accepted / cfg.chains;
      if (cfg.keep_hyper_draws) {
        out.theta_draws.middleRows(offset, cfg.kept_draws_per_chain) = chains[c].theta;
        for (auto& s : chains[c].sigma) out.sigma_draws.push_back(std::move(s));
      }
    }
    out.diagnostics.rhat = rhat;
    out.diagnostics.attempts = attempt + 1;
    out.diagnostics.burn_in_used = burn_in;
    return out;
  }
  throw NonConvergence("unreachable");
}

inline PosteriorDraws sample_hier_posterior(const HistoricalDataset& hist,
                                            const CurrentTrialObservation& cur,
                                            const HierPriorConfig& prior,
                                            const McmcConfig& cfg) {
  return sample_hier_posterior(hist, cur.n_control, cur.r_control, prior, cfg);
}

/// Control draws from the hierarchical model plus an equal number of
/// independent conjugate treatment draws.
inline PosteriorDraws sample_full_posterior(const HistoricalDataset& hist,
                                            const CurrentTrialObservation& cur,
                                            const EndpointConfig& endpoint,
                                            const HierPriorConfig& prior,
                                            const McmcConfig& cfg) {
  PosteriorDraws draws = sample_hier_posterior(hist, cur, prior, cfg);
  const auto n_draws = static_cast<int>(draws.control_draws.rows());
  draws.treatment_draws.resize(n_draws, endpoint.endpoint_count);
  for (int i = 0; i < endpoint.endpoint_count; ++i) {
    const auto& tp = endpoint.treatment_prior[i];
    draws.treatment_draws.col(i) =
        sample_beta_posterior(cur.r_treatment[i], cur.n_treatment, tp.a, tp.b, n_draws,
                              derive_key(cfg.seed, "treatment", {static_cast<std::uint64_t>(i)}));
  }
  return draws;
}

struct PosteriorSummary {
  std::vector<double> s;               // promise probabilities
  std::vector<double> posterior_mean;  // control-rate posterior means
  PosteriorDraws draws;
};

inline PosteriorSummary posterior_summary(const HistoricalDataset& hist,
                                          const CurrentTrialObservation& cur,
                                          const EndpointConfig& endpoint,
                                          const HierPriorConfig& prior, const McmcConfig& cfg) {
  PosteriorSummary out;
  out.draws = sample_full_posterior(hist, cur, endpoint, prior, cfg);
  out.s = posterior_prob_S(out.draws.control_draws, out.draws.treatment_draws,
                           endpoint.promise_margins);
  out.posterior_mean = posterior_mean_control(out.draws.control_draws);
  return out;
}

/// Long-format CSV: draw_index, chain, parameter_name, value.
inline void write_draws_csv(std::ostream& os, const PosteriorDraws& draws) {
  os << "draw_index,chain,parameter_name,value\n";
  os.precision(17);
  const auto per_chain = std::max(draws.draws_per_chain, 1);
  auto emit = [&](const MatrixXd& m, const char* name) {
    for (Eigen::Index d = 0; d < m.rows(); ++d)
      for (Eigen::Index i = 0; i < m.cols(); ++i)
        os << d << ',' << d / per_chain << ',' << name << '[' << i + 1 << "]," << m(d, i)
           << '\n';
  };
  emit(draws.control_draws, "psi_c");
  emit(draws.treatment_draws, "psi_t");
}

inline json to_json(const McmcConfig& c) {
  return versioned({{"chains", c.chains},
                    {"burn_in", c.burn_in},
                    {"kept_draws_per_chain", c.kept_draws_per_chain},
                    {"thinning", c.thinning},
                    {"rhat_threshold", c.rhat_threshold},
                    {"adaptation",
                     {{"target_low", c.adaptation.target_low},
                      {"target_high", c.adaptation.target_high},
                      {"window", c.adaptation.window}}},
                    {"seed", c.seed},
                    {"max_restarts", c.max_restarts}});
}

inline McmcConfig mcmc_config_from_json(const json& j) {
  constexpr const char* T = "McmcConfig";
  check_object(j, T,
               {"chains", "burn_in", "kept_draws_per_chain", "thinning", "rhat_threshold",
                "adaptation", "seed", "max_restarts"});
  McmcConfig c;
  c.chains = optional_field(j, "chains", c.chains);
  c.burn_in = optional_field(j, "burn_in", c.burn_in);
  c.kept_draws_per_chain = optional_field(j, "kept_draws_per_chain", c.kept_draws_per_chain);
  c.thinning = optional_field(j, "thinning", c.thinning);
  c.rhat_threshold = optional_field(j, "rhat_threshold", c.rhat_threshold);
  c.seed = optional_field<std::uint64_t>(j, "seed", c.seed);
  c.max_restarts = optional_field(j, "max_restarts", c.max_restarts);
  if (j.contains("adaptation")) {
    const auto& a = j.at("adaptation");
    for (const auto& [key, _] : a.items())
      if (key != "target_low" && key != "target_high" && key != "window")
        throw SchemaError("McmcConfig: unknown adaptation field '" + key + "'");
    c.adaptation.target_low = optional_field(a, "target_low", c.adaptation.target_low);
    c.adaptation.target_high = optional_field(a, "target_high", c.adaptation.target_high);
    c.adaptation.window = optional_field(a, "window", c.adaptation.window);
  }
  return c;
}

}  // namespace hbdnn
