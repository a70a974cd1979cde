#pragma once

// A TrainedDesign assembled from randomly initialised networks: enough for
// plumbing, serialisation and timing tests without running the pipeline.

#include "hbdnn/design.hpp"

namespace testing_support {

inline hbdnn::MlpModel random_net(int in, int out, std::vector<int> hidden, std::uint64_t seed) {
  hbdnn::MlpSpec s;
  s.input_dim = in;
  s.output_dim = out;
  s.hidden_widths = std::move(hidden);
  return hbdnn::init_model(s, seed);
}

inline hbdnn::TrainedDesign fake_design(std::uint64_t seed = 1) {
  using namespace hbdnn;
  TrainedDesign d;
  d.config.training_size = 500;
  d.f_s = random_net(4, 2, {60, 60}, derive_key(seed, "fs"));
  d.f_p = random_net(2, 2, {20}, derive_key(seed, "fp"));
  for (NullKind k : all_null_kinds) {
    const auto i = kind_index(k);
    d.critical.networks[i] = random_net(null_feature_dim(k), 1, {20, 20}, derive_key(seed, {i}));
    auto& a = d.critical.audits[i];
    a.kind = k;
    a.box = null_box(k, d.config.spaces);
    a.features = draw_null_grid(k, d.config.spaces, 3, seed);
    a.empirical_c = {0.95, 0.96, 0.97};
    a.train_mse = 1e-5;
    a.holdout_mse = 2e-5;
    d.critical.selections[i].best_index = 0;
    d.critical.selections[i].validation_mse = {1e-5};
  }
  d.baseline = {0.975, {{0.3, 0.2}, {0.4, 0.3}, {0.5, 0.4}}, {0.96, 0.97, 0.9745}};
  d.report.requested = 500;
  d.created_utc = "2024-06-01T00:00:00Z";
  seal(d);
  return d;
}

}  // namespace testing_support
