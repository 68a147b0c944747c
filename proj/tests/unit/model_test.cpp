#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "fixtures.hpp"
#include "owl/checkpoint.hpp"
#include "owl/error.hpp"
#include "owl/io.hpp"
#include "owl/vtacr.hpp"

namespace owl {
namespace {

using testing::random_example;
using testing::small_config;

DecodeState state_for(const ModelParams& p, const TrainingExample& ex, std::size_t n) {
  std::vector<int> prompt(ex.input.begin(), ex.input.begin() + static_cast<std::ptrdiff_t>(n));
  return DecodeState(p, ex.features, prompt);
}

TEST(Model, FiniteDifferenceGradients) {
  const auto c = small_config();
  const auto p = ModelParams::init(c, 17);
  Rng rng(4);
  std::vector<TrainingExample> batch{random_example(c, rng, 7), random_example(c, rng, 5)};
  const auto r = testing::finite_difference_check(p, batch, 64, 99);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(Model, ForwardStepMatchesSequenceLogits) {
  const auto c = small_config();
  const auto p = ModelParams::init(c, 3);
  Rng rng(8);
  const auto ex = random_example(c, rng, 9);
  const Matrix full = sequence_logits(p, ex);
  DecodeState st = state_for(p, ex, 1);
  for (std::size_t t = 0; t < ex.input.size(); ++t) {
    const auto out = forward_step(p, st);
    for (std::size_t v = 0; v < c.vocab; ++v) ASSERT_NEAR(out.logits[v], full(t, v), 1e-10);
    if (t + 1 < ex.input.size()) st.push(p, ex.input[t + 1]);
  }
}

TEST(Model, ForwardStepDeterministicAndIdentityHook) {
  const auto c = small_config();
  const auto p = ModelParams::init(c, 3);
  Rng rng(1);
  const auto ex = random_example(c, rng, 6);
  const DecodeState st = state_for(p, ex, 6);
  const auto a = forward_step(p, st);
  const auto b = forward_step(p, st);
  EXPECT_EQ(a.logits, b.logits);
  AttentionHook identity{[](std::size_t, Matrix&) {}};
  const auto h = forward_step(p, st, &identity);
  for (std::size_t v = 0; v < c.vocab; ++v) EXPECT_NEAR(h.logits[v], a.logits[v], 1e-9);
  ASSERT_EQ(a.records.size(), c.layers);
  for (const auto& r : a.records) {
    EXPECT_EQ(r.heads(), c.heads);
    EXPECT_EQ(r.context(), st.length());
    for (std::size_t i = 0; i < r.heads(); ++i) EXPECT_NEAR(sum(r.weights.row(i)), 1.0, 1e-12);
  }
}

TEST(Model, ZeroedVisualColumnsGiveZeroVisualContribution) {
  const auto c = small_config();
  const auto p = ModelParams::init(c, 5);
  Rng rng(2);
  const auto ex = random_example(c, rng, 4);
  const DecodeState st = state_for(p, ex, 4);
  AttentionHook hook{[&](std::size_t, Matrix& rows) {
    for (std::size_t h = 0; h < rows.rows(); ++h) {
      auto row = rows.row(h);
      for (std::size_t j = 0; j < c.visual_slots; ++j) row[j] = 0.0;
      const Real total = sum(row);
      for (auto& w : row) w /= total;
    }
  }};
  const auto out = forward_step(p, st, &hook);
  const auto part = st.partition();
  for (const auto& r : out.records) {
    Real oracle = 0.0;
    for (std::size_t h = 0; h < r.heads(); ++h)
      for (std::size_t j : part.visual) oracle += r.weights(h, j);
    EXPECT_EQ(oracle, 0.0);
    EXPECT_EQ(visual_contribution(r, part), 0.0);
  }
}

TEST(Model, UnnormalizedHookRejectedUnlessAllowed) {
  const auto c = small_config();
  const auto p = ModelParams::init(c, 5);
  Rng rng(2);
  const DecodeState st = state_for(p, random_example(c, rng, 4), 4);
  AttentionHook hook{[](std::size_t, Matrix& rows) {
    for (auto& w : rows.flat()) w *= 2.0;
  }};
  EXPECT_THROW(forward_step(p, st, &hook), Error);
  hook.allow_unnormalized = true;
  EXPECT_NO_THROW(forward_step(p, st, &hook));
}

TEST(Model, UniformLogitsLoss) {
  const auto c = small_config();
  const auto p = ModelParams::zeros_like(c);
  Rng rng(6);
  std::vector<TrainingExample> batch{random_example(c, rng, 6)};
  EXPECT_NEAR(loss_and_grads(p, batch).loss, std::log(static_cast<double>(c.vocab)), 1e-4);
}

TEST(Model, DuplicateExampleHasLinearGradient) {
  const auto c = small_config();
  const auto p = ModelParams::init(c, 12);
  Rng rng(7);
  const auto ex = random_example(c, rng, 6);
  const auto one = loss_and_grads(p, std::vector<TrainingExample>{ex});
  const auto two = loss_and_grads(p, std::vector<TrainingExample>{ex, ex});
  EXPECT_NEAR(one.loss, two.loss, 1e-12);
  const auto g1 = one.grads.named_tensors();
  const auto g2 = two.grads.named_tensors();
  for (std::size_t t = 0; t < g1.size(); ++t)
    for (std::size_t i = 0; i < g1[t].second->size(); ++i)
      ASSERT_NEAR(g1[t].second->flat()[i], g2[t].second->flat()[i], 1e-12);
}

TEST(Model, ThreadedGradientsAreBitIdentical) {
  const auto c = small_config();
  const auto p = ModelParams::init(c, 12);
  Rng rng(7);
  std::vector<TrainingExample> batch;
  for (int i = 0; i < 9; ++i) batch.push_back(random_example(c, rng, 5 + i % 3));
  const auto a = loss_and_grads(p, batch, 1);
  const auto b = loss_and_grads(p, batch, 3);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grads, b.grads);
}

TEST(Train, ZeroEpochsAndZeroRateLeaveParams) {
  const auto c = small_config();
  const auto p = ModelParams::init(c, 12);
  Rng rng(7);
  std::vector<TrainingExample> data;
  for (int i = 0; i < 10; ++i) data.push_back(random_example(c, rng, 6));
  TrainOptions o;
  o.epochs = 0;
  EXPECT_EQ(owl::train(p, data, o).params, p);
  o.epochs = 2;
  o.batch_size = 4;
  o.learning_rate = 0.0;
  const auto r = owl::train(p, data, o);
  EXPECT_EQ(r.params, p);
  ASSERT_EQ(r.loss_trace.size(), 6u);
}

TEST(Train, LossDecreases) {
  const auto c = small_config();
  Rng rng(7);
  std::vector<TrainingExample> data;
  for (int i = 0; i < 16; ++i) data.push_back(random_example(c, rng, 6));
  TrainOptions o;
  o.epochs = 30;
  o.batch_size = 8;
  o.learning_rate = 1e-2;
  std::size_t calls = 0;
  o.on_step = [&](std::size_t, Real) { ++calls; };
  const auto r = owl::train(ModelParams::init(c, 1), data, o);
  EXPECT_EQ(calls, r.loss_trace.size());
  EXPECT_LT(r.loss_trace.back(), r.loss_trace.front());
}

TEST(Model, ErrorPaths) {
  auto c = small_config();
  c.dim = 7;
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  const auto p = ModelParams::init(c, 1);
  EXPECT_THROW(DecodeState(p, Matrix(2, 2), {0}), Error);
  EXPECT_THROW(DecodeState(p, Matrix(c.visual_slots, c.feature_dim), {99}), Error);
  Rng rng(3);
  auto ex = random_example(c, rng, c.max_seq);
  EXPECT_THROW(loss_and_grads(p, std::vector<TrainingExample>{ex}), Error);
  EXPECT_THROW(loss_and_grads(p, std::vector<TrainingExample>{}), Error);
  TrainingExample none = random_example(c, rng, 3);
  none.target.assign(3, -1);
  EXPECT_THROW(loss_and_grads(p, std::vector<TrainingExample>{none}), Error);
}

TEST(Checkpoint, RoundTripAndIntegrity) {
  const auto c = small_config();
  const auto p = ModelParams::init(c, 77);
  const std::string bytes = serialize_params(p);
  EXPECT_EQ(bytes.substr(0, 4), "OWLM");
  EXPECT_EQ(deserialize_params(bytes), p);
  EXPECT_EQ(params_fingerprint(p), params_fingerprint(deserialize_params(bytes)));

  const auto dir = std::filesystem::temp_directory_path() / "owl_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.owlm";
  save_checkpoint(p, path);
  EXPECT_EQ(load_checkpoint(path), p);
  EXPECT_TRUE(std::filesystem::exists(path.string() + ".json"));

  for (std::string bad : {std::string("XXXX") + bytes.substr(4), bytes.substr(0, bytes.size() - 3),
                          bytes + "junk"}) {
    try {
      deserialize_params(bad);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kIntegrity);
    }
  }
  std::string wrong_version = bytes;
  wrong_version[4] = 9;
  EXPECT_THROW(deserialize_params(wrong_version), Error);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace owl
