#include <gtest/gtest.h>

#include "owl/error.hpp"
#include "owl_cli/commands.hpp"
#include "owl_cli/config.hpp"

namespace owl::cli {
namespace {

TEST(RunConfig, DefaultsMatchPaperKnobs) {
  const RunConfig c;
  EXPECT_EQ(c.alpha, 0.4);
  EXPECT_EQ(c.beta, 0.5);
  EXPECT_EQ(c.lambda, 0.2);
  EXPECT_EQ(c.mod_t, 0.2);
  EXPECT_EQ(c.tau_pct, 80.0);
  EXPECT_EQ(c.eval_size, 500u);
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, SerializeRoundTrip) {
  RunConfig c;
  c.seed = 99;
  c.alpha = 0.1 + 0.2;  // not exactly representable in short form
  c.strategies = {"greedy", "dcd"};
  c.sweep_alpha = {0.0, 0.25};
  c.renormalize = false;
  const RunConfig back = RunConfig::parse(c.serialize());
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.serialize(), c.serialize());
}

TEST(RunConfig, MergeIsStrict) {
  RunConfig c;
  c.merge("# comment\nalpha = 0.3\n\nstrategy=beam\n");
  EXPECT_EQ(c.alpha, 0.3);
  EXPECT_EQ(c.strategy, "beam");
  EXPECT_THROW(c.merge("alpah = 0.3\n"), Error);
  EXPECT_THROW(c.merge("alpha = 0.3\nalpha = 0.4\n"), Error);
  EXPECT_THROW(c.merge("alpha 0.3\n"), Error);
  EXPECT_THROW(c.set("alpha", "abc"), Error);
  EXPECT_THROW(c.set("renormalize", "maybe"), Error);
}

TEST(RunConfig, ValidateRejectsBadValues) {
  RunConfig c;
  c.beta = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = RunConfig{};
  c.strategy = "magic";
  EXPECT_THROW(c.validate(), Error);
  c = RunConfig{};
  c.suite = "bleu";
  EXPECT_THROW(c.validate(), Error);
}

TEST(RunConfig, DerivedOptions) {
  RunConfig c;
  c.workdir = "w";
  c.beam_width = 5;
  c.delta_mode = "literal";
  EXPECT_EQ(c.model_file(), std::filesystem::path("w") / "model.owlm");
  c.model_path = "elsewhere.owlm";
  EXPECT_EQ(c.model_file(), std::filesystem::path("elsewhere.owlm"));
  EXPECT_EQ(c.decode_options().beam_width, 5u);
  EXPECT_EQ(c.intervention().delta_mode, DeltaMode::kLiteral);
  const auto mc = c.model_config(c.grammar());
  EXPECT_EQ(mc.layers, 2u);
  EXPECT_EQ(mc.dim, 32u);
  EXPECT_EQ(mc.feature_dim, 24u);
}

TEST(ExitCodes, Mapping) {
  EXPECT_EQ(exit_code_for(ErrorKind::kInvalidArgument), 1);
  EXPECT_EQ(exit_code_for(ErrorKind::kIo), 1);
  EXPECT_EQ(exit_code_for(ErrorKind::kIntegrity), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::kNumeric), 3);
}

}  // namespace
}  // namespace owl::cli
