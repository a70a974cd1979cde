#pragma once

// Small dense feed-forward networks: ReLU hidden layers with inverted
// dropout, sigmoid or linear output, MSE loss, RMSProp mini-batch training
// and k-fold architecture selection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hbdnn/core_types.hpp"
#include "hbdnn/parallel.hpp"
#include "hbdnn/rng.hpp"

namespace hbdnn {

using RowVectorXd = Eigen::RowVectorXd;

enum class Activation { relu, sigmoid, linear };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::linear: return "linear";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "linear") return Activation::linear;
  throw SchemaError("unknown activation '" + s + "'");
}

struct MlpSpec {
  int input_dim = 1;
  int output_dim = 1;
  std::vector<int> hidden_widths;
  Activation hidden_activation = Activation::relu;
  Activation output_activation = Activation::sigmoid;
  double dropout_rate = 0.0;

  std::size_t parameter_count() const {
    std::size_t total = 0;
    int fan_in = input_dim;
    for (int w : hidden_widths) {
      total += static_cast<std::size_t>(fan_in) * w + w;
      fan_in = w;
    }
    return total + static_cast<std::size_t>(fan_in) * output_dim + output_dim;
  }

  std::string describe() const {
    std::string s = std::to_string(input_dim) + "->[";
    for (std::size_t k = 0; k < hidden_widths.size(); ++k)
      s += (k ? "," : "") + std::to_string(hidden_widths[k]);
    s += "]->" + std::to_string(output_dim);
    if (dropout_rate > 0) s += " dropout=" + std::to_string(dropout_rate).substr(0, 4);
    return s;
  }

  bool operator==(const MlpSpec&) const = default;
};

inline ValidationReport validate(const MlpSpec& spec) {
  ValidationReport rep;
  if (spec.input_dim < 1 || spec.output_dim < 1) rep.fail("mlp: dimensions must be >= 1");
  for (int w : spec.hidden_widths)
    if (w < 1) rep.fail("mlp: hidden widths must be >= 1");
  if (!(spec.dropout_rate >= 0.0 && spec.dropout_rate < 1.0))
    rep.fail("mlp: dropout_rate must lie in [0, 1)");
  if (spec.hidden_activation != Activation::relu)
    rep.fail("mlp: hidden activation must be relu");
  return rep;
}

struct DenseLayer {
  MatrixXd weights;  // fan_in x fan_out
  RowVectorXd bias;
  bool operator==(const DenseLayer& o) const {
    return weights.rows() == o.weights.rows() && weights.cols() == o.weights.cols() &&
           weights == o.weights && bias.size() == o.bias.size() && bias == o.bias;
  }
};

struct TrainingSummary {
  double train_mse = std::numeric_limits<double>::quiet_NaN();
  double holdout_mse = std::numeric_limits<double>::quiet_NaN();
  int epochs = 0;
};

struct TrainConfig {
  int batch_size = 100;
  int epochs = 1000;
  double learning_rate = 1e-3;
  double rmsprop_decay = 0.9;
  double rmsprop_epsilon = 1e-8;
  std::uint64_t seed = 1;
  double holdout_fraction = 0.2;
  int fold_count = 5;
  int threads = 1;
  bool operator==(const TrainConfig&) const = default;
};

inline ValidationReport validate(const TrainConfig& cfg) {
  ValidationReport rep;
  if (cfg.batch_size < 1) rep.fail("train: batch_size must be >= 1");
  if (cfg.epochs < 1) rep.fail("train: epochs must be >= 1");
  if (!(cfg.learning_rate >= 0.0)) rep.fail("train: learning_rate must be non-negative");
  if (!(cfg.rmsprop_decay > 0.0 && cfg.rmsprop_decay < 1.0))
    rep.fail("train: rmsprop_decay must lie in (0, 1)");
  if (!(cfg.rmsprop_epsilon > 0.0)) rep.fail("train: rmsprop_epsilon must be positive");
  if (!(cfg.holdout_fraction >= 0.0 && cfg.holdout_fraction < 1.0))
    rep.fail("train: holdout_fraction must lie in [0, 1)");
  if (cfg.fold_count < 2) rep.fail("train: fold_count must be >= 2");
  return rep;
}

struct Dataset {
  MatrixXd inputs;   // rows are examples
  MatrixXd targets;
  Eigen::Index rows() const { return inputs.rows(); }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out{MatrixXd(idx.size(), inputs.cols()), MatrixXd(idx.size(), targets.cols())};
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.inputs.row(k) = inputs.row(idx[k]);
      out.targets.row(k) = targets.row(idx[k]);
    }
    return out;
  }
};

struct MlpModel {
  MlpSpec spec;
  std::vector<DenseLayer> layers;
  TrainingSummary training_summary;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  MatrixXd predict(const MatrixXd& inputs) const;
  std::vector<double> predict_row(std::span<const double> x) const;

  bool operator==(const MlpModel& o) const { return spec == o.spec && layers == o.layers; }
};

enum class Mode { train, infer };

inline MlpModel init_model(const MlpSpec& spec, std::uint64_t seed) {
  const auto rep = validate(spec);
  if (!rep.passed()) throw ValidationError(rep.summary());
  CounterRng rng(derive_key(seed, "init"));
  MlpModel m;
  m.spec = spec;
  int fan_in = spec.input_dim;
  std::vector<int> widths = spec.hidden_widths;
  widths.push_back(spec.output_dim);
  for (int w : widths) {
    DenseLayer l;
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    l.weights.resize(fan_in, w);
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = rng.uniform(-scale, scale);
    l.bias = RowVectorXd::Zero(w);
    m.layers.push_back(std::move(l));
    fan_in = w;
  }
  return m;
}

namespace detail {

inline void apply_activation(MatrixXd& z, Activation a) {
  switch (a) {
    case Activation::relu: z = z.cwiseMax(0.0); break;
    case Activation::sigmoid:
      z = z.unaryExpr([](double v) { return inv_logit(v); });
      break;
    case Activation::linear: break;
  }
}

struct ForwardCache {
  std::vector<MatrixXd> inputs;  // input to each layer (post-dropout for hidden)
  std::vector<MatrixXd> pre;     // pre-activation per layer
  std::vector<MatrixXd> masks;   // scaled dropout mask per hidden layer, or empty
  MatrixXd output;
};

inline void forward_into(const MlpModel& model, const MatrixXd& x, Mode mode, CounterRng* dropout,
                         ForwardCache& cache) {
  if (x.cols() != model.spec.input_dim)
    throw ShapeMismatch("forward: input width " + std::to_string(x.cols()) + " != " +
                        std::to_string(model.spec.input_dim));
  const std::size_t L = model.layers.size();
  cache.inputs.resize(L);
  cache.pre.resize(L);
  cache.masks.assign(L, MatrixXd());
  const double rate = model.spec.dropout_rate;
  const bool drop = mode == Mode::train && rate > 0.0 && dropout != nullptr;
  MatrixXd a = x;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& layer = model.layers[l];
    cache.inputs[l] = a;
    MatrixXd z = a * layer.weights;
    z.rowwise() += layer.bias;
    cache.pre[l] = z;
    const bool hidden = l + 1 < L;
    apply_activation(z, hidden ? model.spec.hidden_activation : model.spec.output_activation);
    if (hidden && drop) {
      MatrixXd mask(z.rows(), z.cols());
      const double keep = 1.0 - rate;
      for (Eigen::Index c = 0; c < mask.cols(); ++c)
        for (Eigen::Index r = 0; r < mask.rows(); ++r)
          mask(r, c) = dropout->uniform() < keep ? 1.0 / keep : 0.0;
      z = z.cwiseProduct(mask);
      cache.masks[l] = std::move(mask);
    }
    a = std::move(z);
  }
  cache.output = std::move(a);
}

}  // namespace detail

/// Dropout acts on hidden activations in train mode only, scaled by
/// 1/(1 - rate) so that infer mode needs no rescaling.
inline MatrixXd forward(const MlpModel& model, const MatrixXd& inputs, Mode mode = Mode::infer,
                        CounterRng* dropout_stream = nullptr) {
  detail::ForwardCache cache;
  detail::forward_into(model, inputs, mode, dropout_stream, cache);
  return std::move(cache.output);
}

inline MatrixXd MlpModel::predict(const MatrixXd& inputs) const {
  if (inputs.cols() != spec.input_dim) throw ShapeMismatch("predict: input width mismatch");
  MatrixXd a = inputs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    MatrixXd z = a * layers[l].weights;
    z.rowwise() += layers[l].bias;
    detail::apply_activation(
        z, l + 1 < layers.size() ? spec.hidden_activation : spec.output_activation);
    a = std::move(z);
  }
  return a;
}

inline std::vector<double> MlpModel::predict_row(std::span<const double> x) const {
  MatrixXd in(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t k = 0; k < x.size(); ++k) in(0, k) = x[k];
  const MatrixXd out = predict(in);
  return {out.data(), out.data() + out.size()};
}

struct Gradients {
  std::vector<MatrixXd> weights;
  std::vector<RowVectorXd> bias;
};

struct LossAndGradient {
  double mse = 0.0;
  Gradients gradients;
};

/// MSE over batch and outputs, with backpropagated gradients for every
/// parameter. Passing a dropout stream applies train-mode dropout.
inline LossAndGradient loss_and_gradient(const MlpModel& model, const MatrixXd& inputs,
                                         const MatrixXd& targets,
                                         CounterRng* dropout_stream = nullptr) {
  if (targets.cols() != model.spec.output_dim || targets.rows() != inputs.rows())
    throw ShapeMismatch("loss_and_gradient: target shape mismatch");
  if (!inputs.allFinite() || !targets.allFinite())
    throw NonFiniteLoss("loss_and_gradient: non-finite input or target");
  detail::ForwardCache cache;
  detail::forward_into(model, inputs, dropout_stream ? Mode::train : Mode::infer, dropout_stream,
                       cache);
  if (!cache.output.allFinite()) throw NonFiniteLoss("loss_and_gradient: non-finite activation");

  const double count = static_cast<double>(targets.size());
  const MatrixXd err = cache.output - targets;
  LossAndGradient out;
  out.mse = err.squaredNorm() / count;
  if (!std::isfinite(out.mse)) throw NonFiniteLoss("loss_and_gradient: non-finite loss");

  const std::size_t L = model.layers.size();
  out.gradients.weights.resize(L);
  out.gradients.bias.resize(L);
  MatrixXd delta = (2.0 / count) * err;  // dL/d(output)
  switch (model.spec.output_activation) {
    case Activation::sigmoid:
      delta = delta.cwiseProduct(cache.output.cwiseProduct((1.0 - cache.output.array()).matrix()));
      break;
    case Activation::relu:
      delta = delta.cwiseProduct((cache.pre[L - 1].array() > 0.0).cast<double>().matrix());
      break;
    case Activation::linear: break;
  }
  for (std::size_t l = L; l-- > 0;) {
    out.gradients.weights[l] = cache.inputs[l].transpose() * delta;
    out.gradients.bias[l] = delta.colwise().sum();
    if (l == 0) break;
    MatrixXd back = delta * model.layers[l].weights.transpose();
    if (cache.masks[l - 1].size() > 0) back = back.cwiseProduct(cache.masks[l - 1]);
    delta = back.cwiseProduct((cache.pre[l - 1].array() > 0.0).cast<double>().matrix());
  }
  return out;
}

inline double mse(const MlpModel& model, const Dataset& data) {
  if (data.rows() == 0) return std::numeric_limits<double>::quiet_NaN();
  return (model.predict(data.inputs) - data.targets).squaredNorm() /
         static_cast<double>(data.targets.size());
}

namespace detail {

inline std::vector<std::size_t> shuffled_indices(std::size_t n, CounterRng rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace detail

/// RMSProp: s <- rho s + (1 - rho) g^2; w <- w - lr g / sqrt(s + eps), over
/// seeded per-epoch shuffles. With holdout_fraction > 0 a seeded holdout is
/// withheld and its MSE recorded in the training summary.
inline MlpModel train(MlpModel model, const Dataset& data, const TrainConfig& cfg) {
  const auto rep = validate(cfg);
  if (!rep.passed()) throw ValidationError(rep.summary());
  if (data.rows() == 0) throw ValidationError("train: empty dataset");
  if (data.inputs.cols() != model.spec.input_dim || data.targets.cols() != model.spec.output_dim)
    throw ShapeMismatch("train: dataset shape does not match the model");

  const auto n = static_cast<std::size_t>(data.rows());
  const auto perm = detail::shuffled_indices(n, CounterRng(derive_key(cfg.seed, "holdout")));
  std::size_t n_hold = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * n));
  if (n_hold >= n) n_hold = 0;
  const std::vector<std::size_t> hold_idx(perm.begin(), perm.begin() + n_hold);
  const std::vector<std::size_t> train_idx(perm.begin() + n_hold, perm.end());
  const Dataset fit = data.subset(train_idx);
  const Dataset holdout = data.subset(hold_idx);

  const std::size_t L = model.layers.size();
  std::vector<MatrixXd> sw(L);
  std::vector<RowVectorXd> sb(L);
  for (std::size_t l = 0; l < L; ++l) {
    sw[l] = MatrixXd::Zero(model.layers[l].weights.rows(), model.layers[l].weights.cols());
    sb[l] = RowVectorXd::Zero(model.layers[l].bias.size());
  }
  const double rho = cfg.rmsprop_decay, lr = cfg.learning_rate, eps = cfg.rmsprop_epsilon;
  const auto m = static_cast<std::size_t>(fit.rows());
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = detail::shuffled_indices(
        m, CounterRng(derive_key(cfg.seed, "shuffle", {static_cast<std::uint64_t>(epoch)})));
    CounterRng dropout(derive_key(cfg.seed, "dropout", {static_cast<std::uint64_t>(epoch)}));
    for (std::size_t start = 0; start < m; start += batch) {
      const std::size_t len = std::min(batch, m - start);
      const Dataset b = fit.subset(std::span(order).subspan(start, len));
      LossAndGradient lg;
      try {
        lg = loss_and_gradient(model, b.inputs, b.targets, &dropout);
      } catch (const NonFiniteLoss& e) {
        throw NonFiniteLoss(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")");
      }
      for (std::size_t l = 0; l < L; ++l) {
        const MatrixXd& gw = lg.gradients.weights[l];
        const RowVectorXd& gb = lg.gradients.bias[l];
        sw[l] = rho * sw[l] + (1.0 - rho) * gw.cwiseProduct(gw);
        sb[l] = rho * sb[l] + (1.0 - rho) * gb.cwiseProduct(gb);
        model.layers[l].weights.array() -= lr * gw.array() / (sw[l].array() + eps).sqrt();
        model.layers[l].bias.array() -= lr * gb.array() / (sb[l].array() + eps).sqrt();
      }
    }
  }
  model.training_summary.train_mse = mse(model, fit);
  model.training_summary.holdout_mse = mse(model, holdout);
  model.training_summary.epochs = cfg.epochs;
  if (!std::isfinite(model.training_summary.train_mse))
    throw NonFiniteLoss("train: non-finite final training loss");
  return model;
}

inline json to_json(const MlpSpec& s);

struct CvResult {
  std::size_t best_index = 0;
  MlpSpec best;
  std::vector<double> validation_mse;  // per candidate, mean over folds
};

/// k-fold selection: smallest mean validation MSE wins; ties go to fewer
/// parameters, then to the earlier candidate. A candidate whose training
/// fails scores +inf.
inline CvResult cross_validate(std::span<const MlpSpec> candidates, const Dataset& data,
                               const TrainConfig& cfg) {
  if (candidates.empty()) throw ValidationError("cross_validate: no candidates");
  const auto rep = validate(cfg);
  if (!rep.passed()) throw ValidationError(rep.summary());
  const auto n = static_cast<std::size_t>(data.rows());
  const std::size_t k = static_cast<std::size_t>(cfg.fold_count);
  if (n < k) throw ValidationError("cross_validate: fewer examples than folds");

  const auto perm = detail::shuffled_indices(n, CounterRng(derive_key(cfg.seed, "folds")));
  std::vector<std::vector<std::size_t>> fold_rows(k);
  for (std::size_t p = 0; p < n; ++p) fold_rows[p % k].push_back(perm[p]);

  const std::size_t C = candidates.size();
  std::vector<double> scores(C * k, 0.0);
  parallel_for(C * k, cfg.threads, [&](std::size_t task) {
    const std::size_t c = task / k, f = task % k;
    std::vector<std::size_t> rest;
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) rest.insert(rest.end(), fold_rows[g].begin(), fold_rows[g].end());
    TrainConfig fold_cfg = cfg;
    fold_cfg.holdout_fraction = 0.0;
    fold_cfg.threads = 1;
    // keyed by candidate content, so identical candidates score identically
    fold_cfg.seed = derive_key(cfg.seed, "cv:" + to_json(candidates[c]).dump(), {f});
    try {
      auto model = train(init_model(candidates[c], fold_cfg.seed), data.subset(rest), fold_cfg);
      scores[task] = mse(model, data.subset(fold_rows[f]));
      if (!std::isfinite(scores[task])) scores[task] = std::numeric_limits<double>::infinity();
    } catch (const Error&) {
      scores[task] = std::numeric_limits<double>::infinity();
    }
  });

  CvResult out;
  out.validation_mse.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t f = 0; f < k; ++f) s += scores[c * k + f];
    out.validation_mse[c] = s / static_cast<double>(k);
  }
  for (std::size_t c = 1; c < C; ++c) {
    const double a = out.validation_mse[c], b = out.validation_mse[out.best_index];
    if (a < b || (a == b && candidates[c].parameter_count() <
                                candidates[out.best_index].parameter_count()))
      out.best_index = c;
  }
  if (!std::isfinite(out.validation_mse[out.best_index]))
    throw TrainingFailure("cross_validate: every candidate failed to train");
  out.best = candidates[out.best_index];
  return out;
}

/// Hidden layers {1,2,3} x width {20,50,60} x dropout {0, 0.1}.
inline std::vector<MlpSpec> default_candidate_grid(int input_dim, int output_dim) {
  std::vector<MlpSpec> out;
  for (int depth : {1, 2, 3})
    for (int width : {20, 50, 60})
      for (double drop : {0.0, 0.1}) {
        MlpSpec s;
        s.input_dim = input_dim;
        s.output_dim = output_dim;
        s.hidden_widths.assign(depth, width);
        s.dropout_rate = drop;
        out.push_back(s);
      }
  return out;
}

struct FittedNetwork {
  MlpModel model;
  CvResult selection;
};

/// Cross-validate the candidates with `cv_cfg`, then train the winner on the
/// full dataset with `final_cfg`.
inline FittedNetwork fit_network(std::span<const MlpSpec> candidates, const Dataset& data,
                                 const TrainConfig& cv_cfg, const TrainConfig& final_cfg) {
  FittedNetwork out;
  if (candidates.size() == 1) {
    out.selection.best = candidates.front();
    out.selection.validation_mse.assign(1, std::numeric_limits<double>::quiet_NaN());
  } else {
    out.selection = cross_validate(candidates, data, cv_cfg);
  }
  out.model = train(init_model(out.selection.best, final_cfg.seed), data, final_cfg);
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const MlpSpec& s) {
  return versioned({{"input_dim", s.input_dim},
                    {"output_dim", s.output_dim},
                    {"hidden_widths", s.hidden_widths},
                    {"hidden_activation", to_string(s.hidden_activation)},
                    {"output_activation", to_string(s.output_activation)},
                    {"dropout_rate", s.dropout_rate}});
}

inline MlpSpec mlp_spec_from_json(const json& j) {
  constexpr const char* T = "MlpSpec";
  check_object(j, T,
               {"input_dim", "output_dim", "hidden_widths", "hidden_activation",
                "output_activation", "dropout_rate"});
  MlpSpec s;
  s.input_dim = required<int>(j, T, "input_dim");
  s.output_dim = required<int>(j, T, "output_dim");
  s.hidden_widths = required<std::vector<int>>(j, T, "hidden_widths");
  s.hidden_activation = activation_from_string(required<std::string>(j, T, "hidden_activation"));
  s.output_activation = activation_from_string(required<std::string>(j, T, "output_activation"));
  s.dropout_rate = required<double>(j, T, "dropout_rate");
  return s;
}

namespace detail {
inline json nan_as_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }
inline double null_as_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}
}  // namespace detail

/// Model file: spec, per-layer row-major (fan_in x fan_out) weights, biases
/// and the training summary.
inline json to_json(const MlpModel& m) {
  json layers = json::array();
  for (const auto& l : m.layers) {
    json w = json::array();
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) w.push_back(l.weights(r, c));
    layers.push_back({{"fan_in", l.weights.rows()},
                      {"fan_out", l.weights.cols()},
                      {"weights", std::move(w)},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return versioned({{"spec", to_json(m.spec)},
                    {"layers", std::move(layers)},
                    {"training_summary",
                     {{"train_mse", detail::nan_as_null(m.training_summary.train_mse)},
                      {"holdout_mse", detail::nan_as_null(m.training_summary.holdout_mse)},
                      {"epochs", m.training_summary.epochs}}}});
}

inline MlpModel mlp_model_from_json(const json& j) {
  constexpr const char* T = "MlpModel";
  check_object(j, T, {"spec", "layers", "training_summary"});
  MlpModel m;
  m.spec = mlp_spec_from_json(required<json>(j, T, "spec"));
  const auto rep = validate(m.spec);
  if (!rep.passed()) throw SchemaError("MlpModel: " + rep.summary());
  std::vector<int> widths = m.spec.hidden_widths;
  widths.push_back(m.spec.output_dim);
  const auto layers = required<json>(j, T, "layers");
  if (!layers.is_array() || layers.size() != widths.size())
    throw SchemaError("MlpModel: layer count does not match spec");
  int fan_in = m.spec.input_dim;
  for (std::size_t k = 0; k < widths.size(); ++k) {
    const auto& lj = layers[k];
    const int fi = required<int>(lj, T, "fan_in"), fo = required<int>(lj, T, "fan_out");
    const auto w = required<std::vector<double>>(lj, T, "weights");
    const auto b = required<std::vector<double>>(lj, T, "bias");
    if (fi != fan_in || fo != widths[k] || w.size() != static_cast<std::size_t>(fi) * fo ||
        b.size() != static_cast<std::size_t>(fo))
      throw SchemaError("MlpModel: layer " + std::to_string(k) + " shape mismatch");
    DenseLayer l;
    l.weights.resize(fi, fo);
    for (int r = 0; r < fi; ++r)
      for (int c = 0; c < fo; ++c) l.weights(r, c) = w[static_cast<std::size_t>(r) * fo + c];
    l.bias = Eigen::Map<const RowVectorXd>(b.data(), fo);
    if (!l.weights.allFinite() || !l.bias.allFinite())
      throw SchemaError("MlpModel: non-finite parameter");
    m.layers.push_back(std::move(l));
    fan_in = fo;
  }
  const auto ts = required<json>(j, T, "training_summary");
  m.training_summary.train_mse = detail::null_as_nan(ts.at("train_mse"));
  m.training_summary.holdout_mse = detail::null_as_nan(ts.at("holdout_mse"));
  m.training_summary.epochs = ts.at("epochs").get<int>();
  return m;
}

inline json to_json(const TrainConfig& c) {
  return versioned({{"batch_size", c.batch_size},
                    {"epochs", c.epochs},
                    {"learning_rate", c.learning_rate},
                    {"rmsprop_decay", c.rmsprop_decay},
                    {"rmsprop_epsilon", c.rmsprop_epsilon},
                    {"seed", c.seed},
                    {"holdout_fraction", c.holdout_fraction},
                    {"fold_count", c.fold_count}});
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
  check_object(j, "TrainConfig",
               {"batch_size", "epochs", "learning_rate", "rmsprop_decay", "rmsprop_epsilon", "seed",
                "holdout_fraction", "fold_count"});
  c.batch_size = optional_field(j, "batch_size", c.batch_size);
  c.epochs = optional_field(j, "epochs", c.epochs);
  c.learning_rate = optional_field(j, "learning_rate", c.learning_rate);
  c.rmsprop_decay = optional_field(j, "rmsprop_decay", c.rmsprop_decay);
  c.rmsprop_epsilon = optional_field(j, "rmsprop_epsilon", c.rmsprop_epsilon);
  c.seed = optional_field<std::uint64_t>(j, "seed", c.seed);
  c.holdout_fraction = optional_field(j, "holdout_fraction", c.holdout_fraction);
  c.fold_count = optional_field(j, "fold_count", c.fold_count);
  return c;
}

}  // namespace hbdnn
