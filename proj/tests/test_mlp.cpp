#include <gtest/gtest.h>

#include "hbdnn/mlp.hpp"

using namespace hbdnn;

namespace {

MlpSpec make_spec(int in, std::vector<int> hidden, int out,
                  Activation out_act = Activation::sigmoid, double dropout = 0.0) {
  MlpSpec s;
  s.input_dim = in;
  s.output_dim = out;
  s.hidden_widths = std::move(hidden);
  s.output_activation = out_act;
  s.dropout_rate = dropout;
  return s;
}

MatrixXd random_matrix(CounterRng& rng, int r, int c, double lo = -1, double hi = 1) {
  MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

// Smooth nonlinear target in (0,1) on the unit square; enough curvature that a
// single hidden unit cannot represent it.
Dataset bump_data(int n, std::uint64_t seed) {
  CounterRng rng(seed);
  Dataset d{random_matrix(rng, n, 2, 0, 1), MatrixXd(n, 1)};
  for (int i = 0; i < n; ++i) {
    const double x = d.inputs(i, 0), y = d.inputs(i, 1);
    d.targets(i, 0) = 0.1 + 0.8 * std::exp(-8 * ((x - 0.5) * (x - 0.5) + (y - 0.5) * (y - 0.5)));
  }
  return d;
}

double& param_ref(MlpModel& m, std::size_t l, bool bias, Eigen::Index r, Eigen::Index c) {
  return bias ? m.layers[l].bias(c) : m.layers[l].weights(r, c);
}

}  // namespace

TEST(MlpInit, ParameterCountMatchesShapeArithmetic) {
  const auto spec = make_spec(4, {60, 60}, 2);
  EXPECT_EQ(spec.parameter_count(), 4082u);
  EXPECT_EQ(init_model(spec, 1).parameter_count(), 4082u);
}

TEST(MlpInit, SeedDeterminismAndScale) {
  const auto spec = make_spec(4, {60, 60}, 2);
  EXPECT_EQ(init_model(spec, 5), init_model(spec, 5));
  for (std::uint64_t s = 0; s < 10; ++s)
    EXPECT_FALSE(init_model(spec, s) == init_model(spec, s + 100)) << s;
  const auto m = init_model(spec, 3);
  EXPECT_LE(m.layers[0].weights.cwiseAbs().maxCoeff(), 0.5);
  EXPECT_LE(m.layers[1].weights.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(60.0));
  EXPECT_EQ(m.layers[2].bias.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MlpInit, RejectsInvalidSpec) {
  EXPECT_THROW(init_model(make_spec(0, {}, 1), 1), ValidationError);
  EXPECT_THROW(init_model(make_spec(2, {0}, 1), 1), ValidationError);
  EXPECT_THROW(init_model(make_spec(2, {3}, 1, Activation::sigmoid, 1.0), 1), ValidationError);
}

TEST(MlpForward, ZeroNetworkGivesHalf) {
  auto m = init_model(make_spec(3, {5, 4}, 2), 1);
  for (auto& l : m.layers) l.weights.setZero();
  CounterRng rng(1);
  const MatrixXd out = forward(m, random_matrix(rng, 7, 3));
  EXPECT_EQ(out.rows(), 7);
  EXPECT_TRUE((out.array() == 0.5).all());
}

TEST(MlpForward, IdentityLinearLayer) {
  auto m = init_model(make_spec(3, {}, 3, Activation::linear), 1);
  m.layers[0].weights = MatrixXd::Identity(3, 3);
  CounterRng rng(2);
  const MatrixXd x = random_matrix(rng, 5, 3);
  EXPECT_EQ(forward(m, x), x);
}

TEST(MlpForward, HandComputedTinyNetwork) {
  auto m = init_model(make_spec(2, {2}, 1), 1);
  m.layers[0].weights << 1, -2, 3, 1;  // rows = inputs
  m.layers[0].bias << 0, 1;
  m.layers[1].weights << 2, -1;
  m.layers[1].bias << -1;
  MatrixXd x(2, 2);
  x << 1, 1, 2, -3;
  // row 0: z = (4, 0) -> relu (4, 0) -> 8 - 1 = 7
  // row 1: z = (-7, -6) -> relu (0, 0) -> -1
  const MatrixXd y = forward(m, x);
  EXPECT_NEAR(y(0, 0), 1.0 / (1.0 + std::exp(-7.0)), 1e-12);
  EXPECT_NEAR(y(1, 0), 1.0 / (1.0 + std::exp(1.0)), 1e-12);
}

TEST(MlpForward, ShapeMismatch) {
  const auto m = init_model(make_spec(3, {4}, 1), 1);
  EXPECT_THROW(forward(m, MatrixXd::Zero(2, 4)), ShapeMismatch);
  EXPECT_THROW(m.predict(MatrixXd::Zero(2, 2)), ShapeMismatch);
}

TEST(MlpForward, SigmoidOutputsStayInUnitInterval) {
  CounterRng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    auto m = init_model(make_spec(3, {8, 8}, 2), rep);
    for (auto& l : m.layers) l.weights *= 50.0;
    const MatrixXd y = m.predict(random_matrix(rng, 50, 3, -100, 100));
    EXPECT_GE(y.minCoeff(), 0.0);
    EXPECT_LE(y.maxCoeff(), 1.0);
  }
}

TEST(MlpForward, DropoutIsUnbiasedUnderInvertedScaling) {
  // Linear output: the output equals the next-layer pre-activation.
  auto m = init_model(make_spec(3, {6}, 2, Activation::linear, 0.3), 4);
  m.layers[0].bias.setConstant(0.2);
  const int draws = 100000;
  MatrixXd x(draws, 3);
  x.rowwise() = RowVectorXd::LinSpaced(3, 0.3, 0.9);
  CounterRng rng(8);
  const RowVectorXd train_mean = forward(m, x, Mode::train, &rng).colwise().mean();
  const RowVectorXd infer = forward(m, x.topRows(1), Mode::infer);
  for (int k = 0; k < 2; ++k)
    EXPECT_NEAR(train_mean(k), infer(k), 0.02 * std::abs(infer(k))) << k;
  // infer mode never drops
  EXPECT_EQ(forward(m, x.topRows(1), Mode::infer), forward(m, x.topRows(1), Mode::train));
}

TEST(MlpLoss, PerfectFitHasZeroLossAndGradient) {
  const auto m = init_model(make_spec(3, {5}, 2), 9);
  CounterRng rng(3);
  const MatrixXd x = random_matrix(rng, 10, 3);
  const auto lg = loss_and_gradient(m, x, m.predict(x));
  EXPECT_EQ(lg.mse, 0.0);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    EXPECT_EQ(lg.gradients.weights[l].cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(lg.gradients.bias[l].cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(MlpLoss, SingleLinearUnit) {
  auto m = init_model(make_spec(1, {}, 1, Activation::linear), 1);
  const double w = 0.7;
  m.layers[0].weights(0, 0) = w;
  const auto lg = loss_and_gradient(m, MatrixXd::Ones(1, 1), MatrixXd::Zero(1, 1));
  EXPECT_DOUBLE_EQ(lg.mse, w * w);
  EXPECT_DOUBLE_EQ(lg.gradients.weights[0](0, 0), 2 * w);
}

TEST(MlpLoss, NonFiniteInputsRejected) {
  const auto m = init_model(make_spec(2, {3}, 1), 1);
  MatrixXd t = MatrixXd::Zero(2, 1);
  t(1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(loss_and_gradient(m, MatrixXd::Zero(2, 2), t), NonFiniteLoss);
  EXPECT_THROW(loss_and_gradient(m, MatrixXd::Zero(2, 2), MatrixXd::Zero(2, 2)), ShapeMismatch);
}

TEST(MlpLoss, GradientMatchesCentralDifferences) {
  CounterRng meta(2024);
  const double h = 1e-5;
  for (int inst = 0; inst < 20; ++inst) {
    const int in = 1 + static_cast<int>(meta() % 4);
    const int out = 1 + static_cast<int>(meta() % 3);
    std::vector<int> hidden(meta() % 3);
    for (auto& w : hidden) w = 2 + static_cast<int>(meta() % 6);
    const auto act = inst % 2 ? Activation::sigmoid : Activation::linear;
    const double drop = inst % 3 == 0 && !hidden.empty() ? 0.2 : 0.0;
    auto model = init_model(make_spec(in, hidden, out, act, drop), inst);
    // non-zero biases keep pre-activations off the ReLU kink at exactly 0
    for (auto& l : model.layers) l.bias = random_matrix(meta, 1, l.bias.size(), -0.5, 0.5);
    const int rows = 3 + static_cast<int>(meta() % 5);
    const MatrixXd x = random_matrix(meta, rows, in);
    const MatrixXd t = random_matrix(meta, rows, out, 0, 1);
    const CounterRng stream(derive_key(77, {static_cast<std::uint64_t>(inst)}));

    auto loss_at = [&](const MlpModel& m) {
      CounterRng s = stream;  // identical dropout masks each evaluation
      return loss_and_gradient(m, x, t, drop > 0 ? &s : nullptr).mse;
    };
    CounterRng s0 = stream;
    const auto lg = loss_and_gradient(model, x, t, drop > 0 ? &s0 : nullptr);

    double worst = 0.0;
    for (std::size_t l = 0; l < model.layers.size(); ++l)
      for (bool bias : {false, true}) {
        const Eigen::Index R = bias ? 1 : model.layers[l].weights.rows();
        const Eigen::Index C = model.layers[l].weights.cols();
        for (Eigen::Index r = 0; r < R; ++r)
          for (Eigen::Index c = 0; c < C; ++c) {
            MlpModel up = model, dn = model;
            param_ref(up, l, bias, r, c) += h;
            param_ref(dn, l, bias, r, c) -= h;
            const double fd = (loss_at(up) - loss_at(dn)) / (2 * h);
            const double bp = bias ? lg.gradients.bias[l](c) : lg.gradients.weights[l](r, c);
            const double rel = std::abs(fd - bp) / std::max(1e-6, std::abs(fd) + std::abs(bp));
            worst = std::max(worst, rel);
          }
      }
    EXPECT_LT(worst, 1e-4) << "instance " << inst;
  }
}

TEST(MlpTrain, RecoversLinearSlope) {
  CounterRng rng(5);
  Dataset d{random_matrix(rng, 1000, 1, 0, 1), MatrixXd()};
  d.targets = 2.0 * d.inputs;
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.learning_rate = 1e-2;
  cfg.holdout_fraction = 0.0;
  const auto m = train(init_model(make_spec(1, {}, 1, Activation::linear), 1), d, cfg);
  // least-squares slope of noiseless y = 2x is exactly 2
  EXPECT_NEAR(m.layers[0].weights(0, 0), 2.0, 0.05);
  EXPECT_EQ(m.training_summary.epochs, 200);
  EXPECT_TRUE(std::isnan(m.training_summary.holdout_mse));
}

TEST(MlpTrain, ZeroLearningRateLeavesParametersUnchanged) {
  const auto d = bump_data(300, 1);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.learning_rate = 0.0;
  const auto m0 = init_model(make_spec(2, {10}, 1, Activation::sigmoid, 0.1), 3);
  EXPECT_EQ(train(m0, d, cfg), m0);
}

TEST(MlpTrain, BitIdenticalGivenSeed) {
  const auto d = bump_data(400, 2);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 17;
  const auto m0 = init_model(make_spec(2, {16, 16}, 1, Activation::sigmoid, 0.1), 3);
  const auto a = train(m0, d, cfg), b = train(m0, d, cfg);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.training_summary.train_mse, b.training_summary.train_mse);
  EXPECT_FALSE(std::isnan(a.training_summary.holdout_mse));
  cfg.seed = 18;
  EXPECT_FALSE(train(m0, d, cfg) == a);
}

TEST(MlpTrain, RejectsBadConfigAndData) {
  const auto m0 = init_model(make_spec(2, {4}, 1), 1);
  TrainConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(train(m0, bump_data(10, 1), cfg), ValidationError);
  EXPECT_THROW(train(m0, Dataset{MatrixXd(0, 2), MatrixXd(0, 1)}, TrainConfig{}), ValidationError);
  Dataset bad = bump_data(10, 1);
  bad.targets(3, 0) = std::numeric_limits<double>::infinity();
  TrainConfig one;
  one.epochs = 1;
  try {
    train(m0, bad, one);
    FAIL() << "expected NonFiniteLoss";
  } catch (const NonFiniteLoss& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos);
  }
}

TEST(MlpCrossValidate, SingleAndTiedCandidates) {
  const auto d = bump_data(200, 3);
  TrainConfig cfg;
  cfg.epochs = 3;
  const std::vector<MlpSpec> one{make_spec(2, {4}, 1)};
  EXPECT_EQ(cross_validate(one, d, cfg).best, one[0]);
  const std::vector<MlpSpec> twins{make_spec(2, {4}, 1), make_spec(2, {4}, 1)};
  const auto r = cross_validate(twins, d, cfg);
  EXPECT_EQ(r.validation_mse[0], r.validation_mse[1]);
  EXPECT_EQ(r.best_index, 0u);
}

TEST(MlpCrossValidate, AdequateBeatsUnderfit) {
  const auto d = bump_data(1000, 4);
  TrainConfig cfg;
  cfg.epochs = 150;
  cfg.learning_rate = 3e-3;
  const std::vector<MlpSpec> cands{make_spec(2, {1}, 1), make_spec(2, {60, 60}, 1)};
  const auto r = cross_validate(cands, d, cfg);
  EXPECT_EQ(r.best_index, 1u);
  EXPECT_LT(r.validation_mse[1], 0.5 * r.validation_mse[0]);
}

TEST(MlpCrossValidate, DefaultGridShape) {
  const auto g = default_candidate_grid(4, 2);
  ASSERT_EQ(g.size(), 18u);
  EXPECT_EQ(g.front().hidden_widths, std::vector<int>{20});
  EXPECT_EQ(g.back().hidden_widths, (std::vector<int>{60, 60, 60}));
  EXPECT_EQ(g.back().dropout_rate, 0.1);
}

TEST(MlpJson, BitExactRoundTrip) {
  const auto d = bump_data(200, 5);
  TrainConfig cfg;
  cfg.epochs = 5;
  const auto m = train(init_model(make_spec(2, {7, 5}, 1, Activation::sigmoid, 0.1), 8), d, cfg);
  const auto back = mlp_model_from_json(json::parse(to_json(m).dump()));
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.training_summary.train_mse, m.training_summary.train_mse);
  CounterRng rng(1);
  const MatrixXd x = random_matrix(rng, 20, 2);
  EXPECT_EQ(back.predict(x), m.predict(x));
}

TEST(MlpJson, MalformedFilesRejected) {
  auto j = to_json(init_model(make_spec(2, {3}, 1), 1));
  auto bad = j;
  bad["layers"][0]["weights"].erase(0);
  EXPECT_THROW(mlp_model_from_json(bad), SchemaError);
  bad = j;
  bad["schema_version"] = 2;
  EXPECT_THROW(mlp_model_from_json(bad), SchemaError);
  bad = j;
  bad["extra"] = 1;
  EXPECT_THROW(mlp_model_from_json(bad), SchemaError);
}
