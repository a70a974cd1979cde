#include <gtest/gtest.h>

#include <sstream>

#include "hbdnn/calibration.hpp"

using namespace hbdnn;

namespace {

// Ignores its input and emits iid Uniform(0,1) pairs; row b of call k comes
// from its own stream, so repeated calls are independent.
struct UniformStub {
  std::uint64_t seed;
  mutable std::uint64_t calls = 0;
  MatrixXd operator()(const MatrixXd& x) const {
    MatrixXd s(x.rows(), 2);
    const auto call = calls++;
    for (Eigen::Index b = 0; b < x.rows(); ++b) {
      CounterRng rng(derive_key(seed, {call, static_cast<std::uint64_t>(b)}));
      s(b, 0) = rng.uniform();
      s(b, 1) = rng.uniform();
    }
    return s;
  }
};

struct ConstantStub {
  double value = 0.5;
  MatrixXd operator()(const MatrixXd& x) const { return MatrixXd::Constant(x.rows(), 2, value); }
};

// Normal approximation to Pr(psi_t > psi_c) under flat priors: a smooth,
// data-dependent stand-in for F_S.
struct AnalyticStub {
  double n = 150;
  MatrixXd operator()(const MatrixXd& x) const {
    MatrixXd s(x.rows(), 2);
    for (Eigen::Index b = 0; b < x.rows(); ++b)
      for (int i = 0; i < 2; ++i) {
        const double pc = (x(b, i) * n + 1) / (n + 2), pt = (x(b, 2 + i) * n + 1) / (n + 2);
        const double v = (pc * (1 - pc) + pt * (1 - pt)) / (n + 3);
        s(b, i) = 0.5 * std::erfc(-(pt - pc) / std::sqrt(2 * v));
      }
    return s;
  }
};

NetworkFitConfig small_net() {
  NetworkFitConfig cfg;
  MlpSpec s;
  s.hidden_widths = {10};
  cfg.candidates = {s};
  cfg.final_fit.epochs = 200;
  cfg.final_fit.learning_rate = 3e-3;
  cfg.final_fit.holdout_fraction = 0.2;
  return cfg;
}

}  // namespace

TEST(NullGrid, GlobalNullInsideControlBox) {
  const auto g = draw_null_grid(NullKind::H12, default_parameter_spaces(), 2000, 1);
  ASSERT_EQ(g.rows(), 2000);
  ASSERT_EQ(g.cols(), 2);
  EXPECT_GT(g.col(0).minCoeff(), 0.2);
  EXPECT_LT(g.col(0).maxCoeff(), 0.7);
  EXPECT_GT(g.col(1).minCoeff(), 0.1);
  EXPECT_LT(g.col(1).maxCoeff(), 0.6);
}

TEST(NullGrid, SingleNullLayouts) {
  const auto spaces = default_parameter_spaces();
  const auto h1 = draw_null_grid(NullKind::H1, spaces, 2000, 2);
  ASSERT_EQ(h1.cols(), 3);
  EXPECT_GE(h1.col(2).minCoeff(), -0.1);
  EXPECT_LE(h1.col(2).maxCoeff(), 0.2);
  EXPECT_LT(h1.col(2).minCoeff(), -0.09);
  EXPECT_GT(h1.col(2).maxCoeff(), 0.19);
  const auto h2 = draw_null_grid(NullKind::H2, spaces, 2000, 2);
  EXPECT_GE(h2.col(1).minCoeff(), -0.1);
  EXPECT_LE(h2.col(1).maxCoeff(), 0.2);
  EXPECT_GT(h2.col(2).minCoeff(), 0.1);
  EXPECT_LT(h2.col(2).maxCoeff(), 0.6);

  for (NullKind k : all_null_kinds) {
    const auto box = null_box(k, spaces);
    const auto g = draw_null_grid(k, spaces, 200, 3);
    for (Eigen::Index b = 0; b < g.rows(); ++b)
      for (Eigen::Index c = 0; c < g.cols(); ++c) EXPECT_TRUE(box[c].contains(g(b, c)));
  }
}

TEST(NullGrid, DegenerateSpacesCollapse) {
  ParameterSpaces s{{{0.4, 0.4 + 1e-12}, {0.3, 0.3 + 1e-12}}, {{0.05, 0.05 + 1e-12}, {0.1, 0.1 + 1e-12}}};
  const auto g = draw_null_grid(NullKind::H1, s, 20, 4);
  for (Eigen::Index b = 0; b < g.rows(); ++b) {
    EXPECT_NEAR(g(b, 0), 0.4, 1e-11);
    EXPECT_NEAR(g(b, 1), 0.3, 1e-11);
    EXPECT_NEAR(g(b, 2), 0.1, 1e-11);
  }
}

TEST(NullGrid, RatesFromFeatures) {
  const double f1[] = {0.4, 0.3, 0.1};
  const auto r1 = null_rates(NullKind::H1, f1);
  EXPECT_EQ(r1.control, (std::vector<double>{0.4, 0.3}));
  EXPECT_EQ(r1.treatment[0], 0.4);
  EXPECT_DOUBLE_EQ(r1.treatment[1], 0.4);
  const double f2[] = {0.4, 0.1, 0.3};
  const auto r2 = null_rates(NullKind::H2, f2);
  EXPECT_DOUBLE_EQ(r2.treatment[0], 0.5);
  EXPECT_EQ(r2.treatment[1], 0.3);
  EXPECT_THROW(null_rates(NullKind::H12, f2), ShapeMismatch);
  EXPECT_THROW(draw_null_grid(NullKind::H12, default_parameter_spaces(), 0, 1), ValidationError);
}

TEST(Quantile, NineteenValuesGiveTheMaximum) {
  std::vector<double> v;
  for (int k = 0; k < 19; ++k) v.push_back(std::sin(k * 1.7));
  EXPECT_EQ(upper_quantile(v, 0.05), *std::max_element(v.begin(), v.end()));
}

TEST(Quantile, OrderStatisticIndex) {
  std::vector<double> v(100);
  for (int k = 0; k < 100; ++k) v[k] = 99 - k;  // values 0..99, reversed
  // k = ceil(0.95 * 101) = 96 -> 96th smallest = 95
  EXPECT_EQ(upper_quantile(v, 0.05), 95.0);
  // k = ceil(0.9 * 101) = 91 -> 90
  EXPECT_EQ(upper_quantile(v, 0.10), 90.0);
  EXPECT_EQ(upper_quantile({3.0}, 0.5), 3.0);
  EXPECT_THROW(upper_quantile({}, 0.05), ValidationError);
  EXPECT_THROW(upper_quantile({1.0}, 0.0), ValidationError);
}

TEST(Quantile, AtMostAlphaExceed) {
  CounterRng rng(derive_key(5, "q"));
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform(0, 500));
    std::vector<double> v(n);
    for (auto& x : v) x = std::floor(rng.uniform(0, 20));  // many ties
    const double alpha = rng.uniform(0.01, 0.5);
    const double c = upper_quantile(v, alpha);
    const auto above = std::count_if(v.begin(), v.end(), [&](double x) { return x > c; });
    EXPECT_LE(above, alpha * n + 1e-9);
  }
}

TEST(CriticalValue, UniformStubMarginal) {
  const double f[] = {0.4, 0.3, 0.0};
  const double c = empirical_critical_value(NullKind::H1, f, UniformStub{11}, 150, 150, 100000,
                                            0.05, 12);
  EXPECT_NEAR(c, 0.95, 0.005);
}

TEST(CriticalValue, UniformStubGlobalNull) {
  const double f[] = {0.4, 0.3};
  const double c = empirical_critical_value(NullKind::H12, f, UniformStub{13}, 150, 150, 100000,
                                            0.05, 14);
  EXPECT_NEAR(c, std::sqrt(0.95), 0.005);
}

TEST(CriticalValue, NonIncreasingInAlpha) {
  for (NullKind k : all_null_kinds) {
    const std::vector<double> f = k == NullKind::H12 ? std::vector<double>{0.45, 0.35}
                                                     : std::vector<double>{0.45, 0.35, 0.05};
    double prev = 2.0;
    for (double alpha : {0.01, 0.05, 0.10}) {
      const double c = empirical_critical_value(k, f, AnalyticStub{}, 150, 150, 20000, alpha, 15);
      EXPECT_LE(c, prev) << to_string(k) << " alpha " << alpha;
      prev = c;
    }
  }
}

TEST(CriticalValue, GlobalDominatesMarginals) {
  for (auto [p1, p2] : {std::pair{0.3, 0.2}, {0.45, 0.35}, {0.65, 0.15}}) {
    const double f12[] = {p1, p2}, f1[] = {p1, p2, 0.0}, f2[] = {p1, 0.0, p2};
    const auto stub = AnalyticStub{};
    const double c12 = empirical_critical_value(NullKind::H12, f12, stub, 150, 150, 20000, 0.05, 16);
    const double c1 = empirical_critical_value(NullKind::H1, f1, stub, 150, 150, 20000, 0.05, 17);
    const double c2 = empirical_critical_value(NullKind::H2, f2, stub, 150, 150, 20000, 0.05, 18);
    EXPECT_GE(c12, std::max(c1, c2) - 0.02);
  }
}

TEST(CriticalValue, ReplicateFloorAndShapes) {
  const double f[] = {0.4, 0.3};
  EXPECT_THROW(empirical_critical_value(NullKind::H12, f, ConstantStub{}, 150, 150, 9999, 0.05, 1),
               ValidationError);
  auto bad = [](const MatrixXd& x) { return MatrixXd::Zero(x.rows(), 1).eval(); };
  EXPECT_THROW(empirical_critical_value(NullKind::H12, f, bad, 150, 150, 10000, 0.05, 1),
               ShapeMismatch);
}

TEST(CriticalNetworks, ConstantSurrogateGivesConstantCutoffs) {
  CalibrationConfig cfg;
  cfg.b_h1 = cfg.b_h2 = cfg.b_h12 = 40;
  cfg.b_prime = 10000;
  const auto cs = fit_critical_networks(ConstantStub{}, default_parameter_spaces(), cfg,
                                        small_net(), 21);
  for (NullKind k : all_null_kinds) {
    const auto& a = cs.audit(k);
    ASSERT_EQ(a.features.rows(), 40);
    EXPECT_EQ(a.features.cols(), null_feature_dim(k));
    for (double c : a.empirical_c) EXPECT_EQ(c, 0.5);
    const MatrixXd probe = draw_null_grid(k, default_parameter_spaces(), 100, 22);
    const MatrixXd out = cs.network(k).predict(probe);
    EXPECT_EQ(out.cols(), 1);
    EXPECT_LT((out.array() - 0.5).abs().maxCoeff(), 0.01) << to_string(k);
    EXPECT_LT(a.holdout_mse, 1e-4);
  }
}

TEST(CriticalNetworks, LabelsInvariantToThreadCount) {
  CalibrationConfig cfg;
  cfg.b_prime = 10000;
  const auto grid = draw_null_grid(NullKind::H1, default_parameter_spaces(), 6, 31);
  const auto a = label_null_grid(NullKind::H1, grid, AnalyticStub{}, cfg, 32, 1);
  const auto b = label_null_grid(NullKind::H1, grid, AnalyticStub{}, cfg, 32, 3);
  EXPECT_EQ(a, b);
}

TEST(ConstantBaseline, UniformStubAndDominance) {
  const std::array<double, 2> sc[] = {{0.3, 0.2}, {0.4, 0.3}, {0.5, 0.4}};
  const auto base = constant_cutoff_baseline(UniformStub{41}, sc, 150, 150, 100000, 0.05,
                                             CutoffGrid{}, 42);
  ASSERT_EQ(base.scenario_c.size(), 3u);
  EXPECT_NEAR(base.c_const, std::sqrt(0.95), 0.0055);
  for (double c : base.scenario_c) EXPECT_GE(base.c_const, c);
  const double steps = (base.c_const - 0.5) / 5e-4;
  EXPECT_NEAR(steps, std::round(steps), 1e-6);
}

TEST(ConstantBaseline, SingleScenarioRoundsUp) {
  const std::array<double, 2> sc[] = {{0.4, 0.3}};
  const auto base = constant_cutoff_baseline(AnalyticStub{}, sc, 150, 150, 20000, 0.05,
                                             CutoffGrid{}, 43);
  EXPECT_EQ(base.c_const, round_up_to_grid(base.scenario_c[0], CutoffGrid{}));
  EXPECT_GE(base.c_const, base.scenario_c[0]);
  EXPECT_LT(base.c_const - base.scenario_c[0], 5e-4 + 1e-12);
}

TEST(ConstantBaseline, GridExhaustedAndEmpty) {
  const std::array<double, 2> sc[] = {{0.4, 0.3}};
  EXPECT_THROW(constant_cutoff_baseline(UniformStub{44}, sc, 150, 150, 10000, 0.05,
                                        CutoffGrid{0.5, 0.9, 5e-4}, 45),
               GridExhausted);
  EXPECT_THROW(constant_cutoff_baseline(UniformStub{44}, std::span<const std::array<double, 2>>{},
                                        150, 150, 10000, 0.05, CutoffGrid{}, 45),
               ValidationError);
}

TEST(ConstantBaseline, RoundUpToGrid) {
  const CutoffGrid g;
  EXPECT_EQ(round_up_to_grid(0.2, g), 0.5);
  EXPECT_DOUBLE_EQ(round_up_to_grid(0.9975, g), 0.9975);
  EXPECT_DOUBLE_EQ(round_up_to_grid(0.97468, g), 0.975);
  EXPECT_DOUBLE_EQ(round_up_to_grid(0.98601, g), 0.9865);
  EXPECT_EQ(round_up_to_grid(1.0, g), 1.0);
  EXPECT_THROW(round_up_to_grid(1.0001, g), GridExhausted);
  CounterRng rng(derive_key(46, "grid"));
  for (int t = 0; t < 1000; ++t) {
    const double c = rng.uniform(0.4, 1.0);
    const double r = round_up_to_grid(c, g);
    EXPECT_GE(r, c);
    EXPECT_LT(r - std::max(c, 0.5), 5e-4 + 1e-12);
  }
}

TEST(Serialisation, RoundTripAndAuditCsv) {
  CalibrationConfig cfg;
  cfg.b_h1 = cfg.b_h2 = cfg.b_h12 = 8;
  cfg.b_prime = 10000;
  auto net = small_net();
  net.final_fit.epochs = 5;
  const auto cs = fit_critical_networks(AnalyticStub{}, default_parameter_spaces(), cfg, net, 51);
  const auto back = critical_surrogates_from_json(json::parse(to_json(cs).dump()));
  for (NullKind k : all_null_kinds) {
    EXPECT_TRUE(back.network(k) == cs.network(k));
    EXPECT_EQ(back.audit(k).empirical_c, cs.audit(k).empirical_c);
    EXPECT_EQ(back.audit(k).features, cs.audit(k).features);
    EXPECT_EQ(back.audit(k).box, cs.audit(k).box);
  }
  EXPECT_EQ(calibration_config_from_json(to_json(cfg)), cfg);

  std::ostringstream os;
  write_calibration_audit_csv(os, cs);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "kind,x1,x2,x3,empirical_c,surrogate_c");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 24);

  ConstantBaseline b{0.9865, {{0.3, 0.2}, {0.5, 0.4}}, {0.97, 0.986}};
  const auto bb = constant_baseline_from_json(to_json(b));
  EXPECT_EQ(bb.c_const, b.c_const);
  EXPECT_EQ(bb.scenarios, b.scenarios);
  EXPECT_EQ(bb.scenario_c, b.scenario_c);
}
