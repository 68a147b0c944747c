#pragma once

#include <cmath>
#include <vector>

#include "owl/model.hpp"
#include "owl/rng.hpp"
#include "owl/scene.hpp"

namespace owl::testing {

inline ModelConfig small_config(std::size_t vocab = 12, std::size_t feature_dim = 5) {
  ModelConfig c;
  c.layers = 2;
  c.heads = 2;
  c.dim = 8;
  c.mlp_dim = 12;
  c.vocab = vocab;
  c.feature_dim = feature_dim;
  c.visual_slots = 3;
  c.max_seq = 24;
  return c;
}

inline TrainingExample random_example(const ModelConfig& c, Rng& rng, std::size_t len) {
  TrainingExample ex;
  ex.features = Matrix(c.visual_slots, c.feature_dim);
  for (auto& v : ex.features.flat()) v = rng.normal();
  for (std::size_t i = 0; i < len; ++i) {
    ex.input.push_back(static_cast<int>(rng.uniform_int(c.vocab)));
    ex.target.push_back(i % 3 == 0 ? -1 : static_cast<int>(rng.uniform_int(c.vocab)));
  }
  return ex;
}

struct GradCheck {
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
};

// Central differences on `count` random coordinates.
inline GradCheck finite_difference_check(const ModelParams& params,
                                         const std::vector<TrainingExample>& batch,
                                         std::size_t count, std::uint64_t seed,
                                         double eps = 1e-5) {
  const LossAndGrads lg = loss_and_grads(params, batch);
  ModelParams probe = params;
  auto tensors = probe.named_tensors();
  const auto grads = lg.grads.named_tensors();
  Rng rng(seed);
  GradCheck out;
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t t = rng.uniform_int(tensors.size());
    Matrix& m = *tensors[t].second;
    const std::size_t i = rng.uniform_int(m.size());
    const double saved = m.flat()[i];
    m.flat()[i] = saved + eps;
    const double up = loss_and_grads(probe, batch).loss;
    m.flat()[i] = saved - eps;
    const double down = loss_and_grads(probe, batch).loss;
    m.flat()[i] = saved;
    const double fd = (up - down) / (2 * eps);
    const double an = grads[t].second->flat()[i];
    const double scale = std::max({std::abs(fd), std::abs(an), 1e-6});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(fd - an) / scale);
    ++out.coordinates;
  }
  return out;
}

}  // namespace owl::testing
