#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "hbdnn/surrogate.hpp"
#include "support/oracles.hpp"

using namespace hbdnn;

namespace {

LabelingContext reference_context() {
  LabelingContext ctx;
  ctx.history = example_history_j6();
  return ctx;
}

std::vector<ScenarioDraw> fixed_scenarios(std::vector<double> control, std::vector<double> delta,
                                          int count) {
  ScenarioDraw d{0, control, control};
  for (std::size_t i = 0; i < control.size(); ++i) d.treatment[i] += delta[i];
  return std::vector<ScenarioDraw>(count, d);
}

// Independent normal approximation to Pr(psi_t - psi_c > 0) under flat Beta
// posteriors; smooth and increasing in the treatment rate.
double approx_s(double pc, double pt, double n) {
  const double ac = pc * n + 1, bc = n - pc * n + 1, at = pt * n + 1, bt = n - pt * n + 1;
  const double mc = ac / (ac + bc), mt = at / (at + bt);
  const double vc = mc * (1 - mc) / (ac + bc + 1), vt = mt * (1 - mt) / (at + bt + 1);
  return 0.5 * std::erfc(-(mt - mc) / std::sqrt(2 * (vc + vt)));
}

// Synthetic training set with analytic labels; stands in for MCMC labels
// where only the fitting machinery is under test.
TrainingSet synthetic_set(int B, std::uint64_t seed) {
  const auto patterns = standard_training_patterns(default_parameter_spaces());
  const auto draws = draw_scenarios(patterns, B, seed);
  TrainingSet set;
  set.requested = B;
  CounterRng rng(derive_key(seed, "synthetic"));
  for (int b = 0; b < B; ++b) {
    TrainingExample ex;
    ex.example_id = b;
    ex.pattern_id = draws[b].pattern_id;
    ex.true_control = draws[b].control;
    ex.true_treatment = draws[b].treatment;
    ex.counts = {150, 150, {}, {}};
    for (double p : draws[b].control) ex.counts.r_control.push_back(rng.binomial(150, p));
    for (double p : draws[b].treatment) ex.counts.r_treatment.push_back(rng.binomial(150, p));
    ex.features = posterior_features(ex.counts);
    for (int i = 0; i < 2; ++i) {
      ex.label_s.push_back(approx_s(ex.features[i], ex.features[2 + i], 150));
      ex.label_p.push_back(0.8 * ex.features[i] + 0.2 * 0.35);
    }
    set.examples.push_back(std::move(ex));
  }
  return set;
}

NetworkFitConfig quick_fit_config() {
  NetworkFitConfig cfg;
  MlpSpec s;
  s.hidden_widths = {20, 20};
  cfg.candidates = {s};
  cfg.final_fit.learning_rate = 3e-3;
  cfg.final_fit.holdout_fraction = 0.2;
  return cfg;
}

}  // namespace

TEST(Scenarios, NullPatternKeepsTreatmentEqualToControl) {
  const auto patterns = standard_training_patterns(default_parameter_spaces());
  ASSERT_EQ(patterns.size(), 4u);
  const auto draws = draw_scenarios(std::span(patterns.data(), 1), 500, 3);
  for (const auto& d : draws) {
    EXPECT_EQ(d.treatment, d.control);
    EXPECT_GT(d.control[0], 0.2);
    EXPECT_LT(d.control[0], 0.7);
    EXPECT_GT(d.control[1], 0.1);
    EXPECT_LT(d.control[1], 0.6);
  }
}

TEST(Scenarios, EqualBlocksPerPattern) {
  const auto patterns = standard_training_patterns(default_parameter_spaces());
  const auto draws = draw_scenarios(patterns, 8000, 4);
  std::map<int, int> count;
  for (const auto& d : draws) ++count[d.pattern_id];
  ASSERT_EQ(count.size(), 4u);
  for (const auto& [_, c] : count) EXPECT_EQ(c, 2000);
  for (const auto& d : draws) {
    const double d1 = d.treatment[0] - d.control[0], d2 = d.treatment[1] - d.control[1];
    switch (d.pattern_id) {
      case 0: EXPECT_EQ(d1, 0.0); EXPECT_EQ(d2, 0.0); break;
      case 1: EXPECT_GE(d1, -0.1); EXPECT_LE(d1, 0.2); EXPECT_EQ(d2, 0.0); break;
      case 2: EXPECT_EQ(d1, 0.0); EXPECT_GE(d2, -0.1); EXPECT_LE(d2, 0.2); break;
      default: EXPECT_GE(d1, -0.1); EXPECT_GE(d2, -0.1);
    }
    for (double t : d.treatment) {
      EXPECT_GT(t, 0.0);
      EXPECT_LT(t, 1.0);
    }
  }
}

TEST(Scenarios, UniformOverRange) {
  const auto patterns = standard_training_patterns(default_parameter_spaces());
  const auto draws = draw_scenarios(std::span(patterns.data(), 1), 20000, 5);
  double sum = 0, sq = 0;
  for (const auto& d : draws) {
    const double u = (d.control[0] - 0.2) / 0.5;
    sum += u;
    sq += u * u;
  }
  EXPECT_NEAR(sum / draws.size(), 0.5, 0.01);
  EXPECT_NEAR(sq / draws.size() - std::pow(sum / draws.size(), 2), 1.0 / 12, 0.005);
}

TEST(Scenarios, CollapsedRange) {
  ScenarioPattern p{{{0.4, 0.4 + 1e-9}, {0.3, 0.3 + 1e-9}}, {{0, 0}, {0, 0}}};
  for (const auto& d : draw_scenarios(std::span(&p, 1), 50, 6)) {
    EXPECT_NEAR(d.control[0], 0.4, 1e-8);
    EXPECT_NEAR(d.control[1], 0.3, 1e-8);
  }
}

TEST(Scenarios, InfeasibleRangesAndBadCounts) {
  ScenarioPattern p{{{0.2, 0.7}, {0.1, 0.6}}, {{0.2, 0.4}, {0, 0}}};
  EXPECT_THROW(draw_scenarios(std::span(&p, 1), 4, 1), InvalidRange);
  p.reject_infeasible = true;
  for (const auto& d : draw_scenarios(std::span(&p, 1), 200, 1)) EXPECT_LT(d.treatment[0], 1.0);
  ScenarioPattern hopeless{{{0.8, 0.9}, {0.1, 0.6}}, {{0.3, 0.5}, {0, 0}}, true};
  EXPECT_THROW(draw_scenarios(std::span(&hopeless, 1), 4, 1), InvalidRange);

  const auto patterns = standard_training_patterns(default_parameter_spaces());
  EXPECT_THROW(draw_scenarios(patterns, 10, 1), ValidationError);
  EXPECT_THROW(draw_scenarios(patterns, 0, 1), ValidationError);
}

TEST(Scenarios, PureFunctionOfSeed) {
  const auto patterns = standard_training_patterns(default_parameter_spaces());
  const auto a = draw_scenarios(patterns, 400, 9), b = draw_scenarios(patterns, 400, 9),
             c = draw_scenarios(patterns, 400, 10);
  bool differs = false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].control, b[k].control);
    EXPECT_EQ(a[k].treatment, b[k].treatment);
    differs |= a[k].control != c[k].control;
  }
  EXPECT_TRUE(differs);
}

TEST(Labels, StrongEffectIsDiscriminated) {
  const auto ctx = reference_context();
  const auto set = generate_training_set(ctx, fixed_scenarios({0.4, 0.3}, {0.2, 0.2}, 12), 21);
  ASSERT_EQ(set.examples.size(), 12u);
  double label = 0, flat = 0;
  for (const auto& ex : set.examples)
    for (int i = 0; i < 2; ++i) {
      const int rc = ex.counts.r_control[i], rt = ex.counts.r_treatment[i];
      label += ex.label_s[i] / 24;
      flat += oracle::prob_beta_difference(1 + rt, 1 + 150 - rt, 1 + rc, 1 + 150 - rc) / 24;
    }
  EXPECT_GT(label, 0.9);
  EXPECT_GT(flat, 0.9);
  EXPECT_NEAR(label, flat, 0.05);
}

TEST(Labels, ImpossibleMarginGivesZero) {
  const auto ctx = reference_context();
  CurrentTrialObservation cur{150, 150, {60, 45}, {150, 150}};
  const auto summary = label_counts(ctx, cur, 3);
  const double margins[] = {1.0, 1.0};
  for (double s : posterior_prob_S(summary.draws.control_draws, summary.draws.treatment_draws,
                                   margins))
    EXPECT_EQ(s, 0.0);
}

TEST(Labels, PriorConsistentPosteriorMeans) {
  const auto ctx = reference_context();
  const auto set = generate_training_set(ctx, fixed_scenarios({0.4, 0.3}, {0, 0}, 100), 22);
  ASSERT_EQ(set.examples.size(), 100u);
  double m1 = 0, m2 = 0;
  for (const auto& ex : set.examples) {
    m1 += ex.label_p[0] / 100;
    m2 += ex.label_p[1] / 100;
  }
  EXPECT_NEAR(m1, 0.401, 0.01);
  EXPECT_NEAR(m2, 0.307, 0.01);
}

TEST(Labels, AuditAgainstIndependentRelabel) {
  const auto ctx = reference_context();
  const auto patterns = standard_training_patterns(default_parameter_spaces());
  const auto scen = draw_scenarios(patterns, 20, 31);
  const auto set = generate_training_set(ctx, scen, 32);
  ASSERT_EQ(set.examples.size(), 20u);
  auto indicator_mcse = [](const PosteriorDraws& d, int i, double margin) {
    Eigen::VectorXd x(d.control_draws.rows());
    for (Eigen::Index k = 0; k < x.size(); ++k)
      x[k] = d.treatment_draws(k, i) - d.control_draws(k, i) > margin ? 1.0 : 0.0;
    const double s = x.mean();
    return std::max(oracle::batch_mcse(x), std::sqrt(s * (1 - s) / x.size()));
  };
  for (const auto& ex : set.examples) {
    const auto a = label_counts(ctx, ex.counts, derive_key(32, "mcmc", {static_cast<std::uint64_t>(ex.example_id)}));
    const auto b = label_counts(ctx, ex.counts, derive_key(999, "audit", {static_cast<std::uint64_t>(ex.example_id)}));
    ASSERT_EQ(a.s, ex.label_s);  // the stored label replays exactly
    for (int i = 0; i < 2; ++i) {
      const double bound = 3 * std::hypot(indicator_mcse(a.draws, i, 0.0),
                                          indicator_mcse(b.draws, i, 0.0));
      EXPECT_LE(std::abs(a.s[i] - b.s[i]), std::max(bound, 1e-12))
          << "example " << ex.example_id << " endpoint " << i;
    }
  }
}

TEST(TrainingSet, PatternBalanceAndOrder) {
  const auto ctx = reference_context();
  const auto patterns = standard_training_patterns(default_parameter_spaces());
  const auto set = generate_training_set(ctx, draw_scenarios(patterns, 40, 41), 42);
  ASSERT_EQ(set.examples.size(), 40u);
  EXPECT_TRUE(set.excluded_ids.empty());
  std::map<int, int> count;
  for (std::size_t k = 0; k < set.examples.size(); ++k) {
    const auto& ex = set.examples[k];
    EXPECT_EQ(ex.example_id, static_cast<int>(k));
    ++count[ex.pattern_id];
    for (const auto* v : {&ex.features, &ex.label_s, &ex.label_p})
      for (double x : *v) {
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0);
      }
  }
  for (const auto& [_, c] : count) EXPECT_EQ(c, 10);
}

TEST(TrainingSet, InvariantToThreadCount) {
  const auto ctx = reference_context();
  const auto patterns = standard_training_patterns(default_parameter_spaces());
  const auto scen = draw_scenarios(patterns, 8, 51);
  const auto a = generate_training_set(ctx, scen, 52, 1);
  const auto b = generate_training_set(ctx, scen, 52, 3);
  ASSERT_EQ(a.examples.size(), b.examples.size());
  for (std::size_t k = 0; k < a.examples.size(); ++k) {
    EXPECT_EQ(a.examples[k].counts, b.examples[k].counts);
    EXPECT_EQ(a.examples[k].label_s, b.examples[k].label_s);
    EXPECT_EQ(a.examples[k].label_p, b.examples[k].label_p);
  }
}

TEST(TrainingSet, FailedChainsExcludedThenBatchFails) {
  auto ctx = reference_context();
  ctx.mcmc.burn_in = 10;
  ctx.mcmc.kept_draws_per_chain = 400;
  ctx.mcmc.rhat_threshold = 1.0 + 1e-9;
  ctx.mcmc.max_restarts = 0;
  const auto scen = fixed_scenarios({0.4, 0.3}, {0, 0}, 4);
  const auto tolerant = generate_training_set(ctx, scen, 61, 1, 1.0);
  EXPECT_TRUE(tolerant.examples.empty());
  EXPECT_EQ(tolerant.excluded_ids, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_EQ(tolerant.exclusion_reasons.size(), 4u);
  EXPECT_THROW(generate_training_set(ctx, scen, 61), TrainingFailure);
}

TEST(TrainingSet, InvalidContextRejected) {
  auto ctx = reference_context();
  ctx.history.studies[0].responders[0] = 1000;
  EXPECT_THROW(generate_training_set(ctx, fixed_scenarios({0.4, 0.3}, {0, 0}, 1), 1),
               ValidationError);
}

TEST(TrainingSet, CsvAndJsonRoundTrip) {
  const auto ctx = reference_context();
  const auto set = synthetic_set(8, 71);
  std::ostringstream csv;
  write_training_csv(csv, set);
  std::istringstream in(csv.str());
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header,
            "example_id,pattern_id,psi_c1,psi_c2,psi_t1,psi_t2,f_rc1,f_rc2,f_rt1,f_rt2,"
            "label_S1,label_S2,label_P1,label_P2");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 13);
  }
  EXPECT_EQ(rows, 8);

  const auto back = training_set_from_json(json::parse(to_json(set, ctx).dump()));
  ASSERT_EQ(back.examples.size(), set.examples.size());
  for (std::size_t k = 0; k < set.examples.size(); ++k) {
    EXPECT_EQ(back.examples[k].counts, set.examples[k].counts);
    EXPECT_EQ(back.examples[k].features, set.examples[k].features);
    EXPECT_EQ(back.examples[k].label_s, set.examples[k].label_s);
    EXPECT_EQ(back.examples[k].true_treatment, set.examples[k].true_treatment);
  }
}

TEST(Surrogates, RequiresEnoughExamples) {
  EXPECT_THROW(fit_posterior_surrogates(synthetic_set(496, 81), quick_fit_config(), 1),
               ValidationError);
}

TEST(Surrogates, ShapesRangeAndMonotonicity) {
  const auto set = synthetic_set(1200, 82);
  const auto fit = fit_posterior_surrogates(set, quick_fit_config(), 83);
  EXPECT_EQ(fit.f_s.spec.input_dim, 4);
  EXPECT_EQ(fit.f_s.spec.output_dim, 2);
  EXPECT_EQ(fit.f_p.spec.input_dim, 2);
  EXPECT_EQ(fit.f_p.spec.output_dim, 2);
  EXPECT_LT(fit.f_s.training_summary.holdout_mse, 3e-3);
  EXPECT_LT(fit.f_p.training_summary.holdout_mse, 1e-3);

  // Sweep each treatment feature on a grid with the rest at the pattern
  // midpoint; count decreasing edges.
  const int steps = 60;
  int edges = 0, violations = 0;
  for (int i = 0; i < 2; ++i) {
    MatrixXd x(steps, 4);
    for (int k = 0; k < steps; ++k) {
      x.row(k) << 0.45, 0.35, 0.45 + 0.05, 0.35 + 0.05;
      x(k, 2 + i) = 0.05 + 0.9 * k / (steps - 1.0);
    }
    const MatrixXd y = fit.f_s.predict(x);
    for (int k = 0; k < steps; ++k) {
      EXPECT_GE(y(k, i), 0.0);
      EXPECT_LE(y(k, i), 1.0);
    }
    for (int k = 1; k < steps; ++k, ++edges) violations += y(k, i) < y(k - 1, i) - 1e-12;
  }
  EXPECT_LT(violations, 0.02 * edges + 1e-9) << violations << " of " << edges;
}
