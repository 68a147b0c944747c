#include <gtest/gtest.h>

#include "owl/error.hpp"
#include "owl/intervene.hpp"
#include "owl/rng.hpp"

namespace owl {
namespace {

const TokenPartition kTwo{{0}, {1}};

TEST(ModulationDelta, Examples) {
  EXPECT_EQ(modulation_delta(1.5, 1.5, 0.2, DeltaMode::kIntent), 0.0);
  EXPECT_EQ(modulation_delta(2.0, 1.5, 0.2, DeltaMode::kIntent), 0.0);
  EXPECT_NEAR(modulation_delta(0.0, 1.0, 0.2, DeltaMode::kIntent), 0.2, 1e-15);
  EXPECT_NEAR(modulation_delta(0.5, 1.0, 0.2, DeltaMode::kIntent), 0.1, 1e-15);
  EXPECT_NEAR(modulation_delta(0.5, 1.0, 0.2, DeltaMode::kLiteral), -0.1, 1e-15);
  EXPECT_THROW(modulation_delta(0.5, 0.0, 0.2, DeltaMode::kIntent), Error);
}

TEST(EffectiveCoefficients, Examples) {
  const auto [a0, b0] = effective_coefficients(0.4, 0.5, 0.0);
  EXPECT_EQ(a0, 0.4);
  EXPECT_EQ(b0, 0.5);
  const auto [a, b] = effective_coefficients(0.4, 0.5, 0.2);
  EXPECT_NEAR(a, 0.6, 1e-15);
  EXPECT_NEAR(b, 0.7, 1e-15);
  EXPECT_THROW(effective_coefficients(0.4, 0.9, 0.2), Error);
}

TEST(Rewrite, VisualFavoredWorkedExample) {
  const AttentionRecord rec{0, Matrix{{0.2, 0.8}}};
  const auto raw = rewrite_visual_favored(rec, kTwo, 0.5, 0.5, false);
  EXPECT_NEAR(raw.weights(0, 0), 0.3, 1e-15);
  EXPECT_NEAR(raw.weights(0, 1), 0.4, 1e-15);
  const auto out = rewrite_visual_favored(rec, kTwo, 0.5, 0.5, true);
  EXPECT_NEAR(out.weights(0, 0), 3.0 / 7.0, 1e-15);
  EXPECT_NEAR(out.weights(0, 1), 4.0 / 7.0, 1e-15);
}

TEST(Rewrite, TextFavoredWorkedExample) {
  const AttentionRecord rec{0, Matrix{{0.2, 0.8}}};
  const auto raw = rewrite_text_favored(rec, kTwo, 0.5, 0.5, false);
  EXPECT_NEAR(raw.weights(0, 0), 0.1, 1e-15);
  EXPECT_NEAR(raw.weights(0, 1), 1.2, 1e-15);
  const auto out = rewrite_text_favored(rec, kTwo, 0.5, 0.5, true);
  EXPECT_NEAR(out.weights(0, 0), 1.0 / 13.0, 1e-15);
  EXPECT_NEAR(out.weights(0, 1), 12.0 / 13.0, 1e-15);
}

TEST(Rewrite, ZeroCoefficientsAreByteExact) {
  const AttentionRecord rec{1, Matrix{{0.1234567, 0.2, 0.6765433}}};
  const TokenPartition part{{0}, {1, 2}};
  EXPECT_EQ(rewrite_visual_favored(rec, part, 0, 0, true).weights, rec.weights);
  EXPECT_EQ(rewrite_text_favored(rec, part, 0, 0, true).weights, rec.weights);
}

TEST(Rewrite, PositionsOutsideBothSetsUntouchedBeforeNorm) {
  const AttentionRecord rec{0, Matrix{{0.2, 0.3, 0.5}}};
  const TokenPartition part{{0}, {1}};
  const auto out = rewrite_visual_favored(rec, part, 0.5, 0.5, false);
  EXPECT_EQ(out.weights(0, 2), 0.5);
}

TEST(Rewrite, Guards) {
  const AttentionRecord rec{0, Matrix{{0.5, 0.5}}};
  EXPECT_THROW(rewrite_visual_favored(rec, kTwo, -0.1, 0.5, true), Error);
  EXPECT_THROW(rewrite_visual_favored(rec, kTwo, 0.1, 1.0, true), Error);
  EXPECT_THROW(rewrite_text_favored(rec, kTwo, 1.0, 0.5, true), Error);
  EXPECT_THROW(rewrite_visual_favored(rec, TokenPartition{{0}, {2}}, 0.1, 0.1, true), Error);
  const AttentionRecord zero{0, Matrix{{0.0, 0.0}}};
  try {
    rewrite_visual_favored(zero, kTwo, 0.1, 0.1, true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerate);
  }
}

TEST(Rewrite, ShareMovesInTheRequestedDirection) {
  Rng rng(21);
  for (int t = 0; t < 500; ++t) {
    const Real v = 0.01 + 0.98 * rng.uniform();
    const AttentionRecord rec{0, Matrix{{v, 1.0 - v}}};
    const Real a = 0.9 * rng.uniform() + 0.01, b = 0.9 * rng.uniform();
    EXPECT_GT(rewrite_visual_favored(rec, kTwo, a, b, true).weights(0, 0), v);
    EXPECT_GT(rewrite_text_favored(rec, kTwo, b, a, true).weights(0, 1), 1.0 - v);
  }
}

CalibrationTable table_of(std::vector<Real> base) {
  CalibrationTable t;
  for (std::size_t l = 0; l < base.size(); ++l) t.layers.push_back({l, base[l], 100});
  return t;
}

VtacrProfile profile_of(std::vector<std::optional<Real>> ratios) {
  VtacrProfile p;
  for (auto r : ratios) p.layers.push_back({0.1, 0.1, r});
  return p;
}

TEST(StepCoefficients, AllAboveBase) {
  const auto c = step_coefficients(profile_of({2.0, 3.0}), table_of({1.0, 1.0}), {});
  EXPECT_EQ(c.alpha, (std::vector<Real>{0.4, 0.4}));
  EXPECT_EQ(c.beta, (std::vector<Real>{0.5, 0.5}));
}

TEST(StepCoefficients, OnlyDeficientLayerBoosted) {
  const auto c = step_coefficients(profile_of({2.0, 0.5, 3.0}), table_of({1.0, 1.0, 1.0}), {});
  EXPECT_EQ(c.delta[0], 0.0);
  EXPECT_NEAR(c.delta[1], 0.1, 1e-15);
  EXPECT_EQ(c.delta[2], 0.0);
  EXPECT_NEAR(c.alpha[1], 0.5, 1e-15);
  EXPECT_NEAR(c.beta[1], 0.6, 1e-15);
  EXPECT_EQ(c.alpha[0], 0.4);
}

TEST(StepCoefficients, DegenerateLayerUntouched) {
  const auto c = step_coefficients(profile_of({std::nullopt, 0.0}), table_of({1.0, 1.0}), {});
  EXPECT_EQ(c.delta[0], 0.0);
  EXPECT_EQ(c.alpha[0], 0.4);
  EXPECT_NEAR(c.delta[1], 0.2, 1e-15);
}

TEST(StepCoefficients, LayerMismatchThrows) {
  EXPECT_THROW(step_coefficients(profile_of({1.0}), table_of({1.0, 1.0}), {}), Error);
}

TEST(InterventionConfig, Validate) {
  InterventionConfig c;
  EXPECT_NO_THROW(c.validate());
  c.beta = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.tau_pct = 101;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_EQ(delta_mode_from_string("literal"), DeltaMode::kLiteral);
  EXPECT_THROW(delta_mode_from_string("other"), Error);
}

TEST(PathHook, AppliesPerLayerCoefficients) {
  LayerCoefficients c{{0, 0}, {0.5, 0.0}, {0.5, 0.0}};
  const auto hook = make_path_hook(PathKind::kVisualFavored, c, kTwo, true);
  Matrix rows{{0.2, 0.8}};
  hook.rewrite(0, rows);
  EXPECT_NEAR(rows(0, 0), 3.0 / 7.0, 1e-15);
  Matrix untouched{{0.2, 0.8}};
  hook.rewrite(1, untouched);
  EXPECT_EQ(untouched, (Matrix{{0.2, 0.8}}));
}

}  // namespace
}  // namespace owl
