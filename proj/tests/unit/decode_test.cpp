#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <map>

#include "owl/beam.hpp"
#include "owl/decode.hpp"
#include "owl/error.hpp"
#include "owl/scene.hpp"

namespace owl {
namespace {

struct Fixture {
  SceneGrammar grammar = SceneGrammar::default_grammar();
  Model model{make_params()};
  Scene scene;

  Fixture() {
    Rng rng(5);
    scene = sample_scene(grammar, rng, 1);
  }

  ModelParams make_params() const {
    ModelConfig c;
    c.dim = 16;
    c.mlp_dim = 32;
    c.vocab = grammar.vocabulary().size();
    c.feature_dim = grammar.object_count();
    return ModelParams::init(c, 31);
  }

  DecodeInputs inputs() const { return {scene.features, caption_prompt()}; }
};

TEST(Greedy, DeterministicAndMatchesArgmaxOracle) {
  Fixture f;
  DecodeOptions o;
  o.max_len = 12;
  const auto a = decode_greedy(f.model, f.inputs(), o);
  const auto b = decode_greedy(f.model, f.inputs(), o);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.forward_passes, a.tokens.size());

  // Teacher-force prompt + generated tokens and re-derive every choice.
  TrainingExample ex;
  ex.features = f.scene.features;
  ex.input = caption_prompt();
  ex.input.insert(ex.input.end(), a.tokens.begin(), a.tokens.end() - 1);
  ex.target.assign(ex.input.size(), -1);
  const Matrix logits = sequence_logits(f.model.params(), ex);
  for (std::size_t t = 0; t < a.tokens.size(); ++t) {
    const std::size_t row = caption_prompt().size() - 1 + t;
    std::size_t best = 0;
    for (std::size_t v = 1; v < logits.cols(); ++v)
      if (logits(row, v) > logits(row, best)) best = v;
    EXPECT_EQ(a.tokens[t], static_cast<int>(best));
  }

  o.max_len = 1;
  EXPECT_EQ(decode_greedy(f.model, f.inputs(), o).tokens.size(), 1u);
  o.max_len = 0;
  EXPECT_THROW(decode_greedy(f.model, f.inputs(), o), Error);
}

TEST(Greedy, ArgmaxTiesGoToLowestId) {
  EXPECT_EQ(argmax_token(std::vector<Real>{1, 3, 3, 2}), 1);
  EXPECT_THROW(argmax_token(std::vector<Real>{}), Error);
}

TEST(Nucleus, TinyPIsGreedyAndSeedIsReproducible) {
  Fixture f;
  DecodeOptions o;
  o.max_len = 10;
  o.top_p = 1e-9;
  EXPECT_EQ(decode_nucleus(f.model, f.inputs(), o).tokens, decode_greedy(f.model, f.inputs(), o).tokens);
  o.top_p = 0.9;
  o.seed = 44;
  EXPECT_EQ(decode_nucleus(f.model, f.inputs(), o).tokens, decode_nucleus(f.model, f.inputs(), o).tokens);
  o.top_p = 0.0;
  EXPECT_THROW(decode_nucleus(f.model, f.inputs(), o), Error);
}

TEST(Nucleus, FullDistributionFrequenciesPassChiSquared) {
  Fixture f;
  DecodeState st(f.model.params(), f.scene.features, caption_prompt());
  const auto probs = softmax_row(forward_step(f.model.params(), st).logits);
  DecodeOptions o;
  o.max_len = 1;
  o.top_p = 1.0;
  std::vector<double> counts(probs.size(), 0.0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    o.seed = derive_seed(123, "draw", static_cast<std::uint64_t>(i));
    ++counts[static_cast<std::size_t>(decode_nucleus(f.model, f.inputs(), o).tokens[0])];
  }
  // Pool bins with expected count < 5.
  double chi2 = 0, pool_obs = 0, pool_exp = 0;
  int bins = 0;
  for (std::size_t v = 0; v < probs.size(); ++v) {
    const double e = probs[v] * draws;
    if (e < 5) {
      pool_obs += counts[v];
      pool_exp += e;
      continue;
    }
    chi2 += (counts[v] - e) * (counts[v] - e) / e;
    ++bins;
  }
  if (pool_exp > 0) {
    chi2 += (pool_obs - pool_exp) * (pool_obs - pool_exp) / pool_exp;
    ++bins;
  }
  const boost::math::chi_squared dist(bins - 1);
  EXPECT_LT(chi2, boost::math::quantile(dist, 0.99));
}

TEST(Beam, WidthOneIsGreedy) {
  Fixture f;
  DecodeOptions o;
  o.max_len = 12;
  o.beam_width = 1;
  const auto b = decode_beam(f.model, f.inputs(), o);
  const auto g = decode_greedy(f.model, f.inputs(), o);
  EXPECT_EQ(b.tokens, g.tokens);
  EXPECT_NEAR(b.log_prob, g.log_prob, 1e-9);
}

// Three-step toy: tokens {0 = eos, 1, 2}; the next-token table depends on the
// prefix.
struct Toy {
  std::vector<int> prefix;
};

std::vector<Real> toy_logp(const std::vector<int>& prefix) {
  static const std::map<std::vector<int>, std::vector<Real>> table = {
      {{}, {0.05, 0.55, 0.40}},
      {{1}, {0.10, 0.45, 0.45}},
      {{2}, {0.05, 0.90, 0.05}},
      {{1, 1}, {0.34, 0.33, 0.33}},
      {{1, 2}, {0.40, 0.30, 0.30}},
      {{2, 1}, {0.90, 0.05, 0.05}},
      {{2, 2}, {0.20, 0.40, 0.40}},
  };
  const auto it = table.find(prefix);
  std::vector<Real> p = it != table.end() ? it->second : std::vector<Real>{0.6, 0.2, 0.2};
  for (auto& v : p) v = std::log(v);
  return p;
}

TEST(Beam, ToyMatchesExhaustiveOracleOnTwoSurvivors) {
  const std::size_t width = 2, max_len = 3;
  const auto best = beam_search(
      Toy{}, [](Toy& t) { return toy_logp(t.prefix); },
      [](Toy& t, int tok) { t.prefix.push_back(tok); }, width, max_len, 0);

  // Oracle: replay width-2 pruning by brute force over all prefixes.
  struct Hyp {
    std::vector<int> toks;
    Real lp;
  };
  std::vector<Hyp> live{{{}, 0.0}}, done;
  for (std::size_t step = 0; step < max_len; ++step) {
    std::vector<Hyp> all;
    for (const auto& h : live) {
      const auto lp = toy_logp(h.toks);
      for (int t = 0; t < 3; ++t) {
        Hyp n = h;
        n.toks.push_back(t);
        n.lp += lp[static_cast<std::size_t>(t)];
        all.push_back(n);
      }
    }
    std::stable_sort(all.begin(), all.end(), [](const Hyp& a, const Hyp& b) { return a.lp > b.lp; });
    all.resize(width);
    live.clear();
    for (auto& h : all) (h.toks.back() == 0 ? done : live).push_back(h);
  }
  for (auto& h : live) done.push_back(h);
  const Hyp* win = &done[0];
  for (const auto& h : done)
    if (h.lp / h.toks.size() > win->lp / win->toks.size()) win = &h;
  EXPECT_EQ(best.tokens, win->toks);
  EXPECT_NEAR(best.log_prob, win->lp, 1e-12);
  // The greedy path 1,1,... scores lower than the beam's pick.
  EXPECT_EQ(best.tokens, (std::vector<int>{2, 1, 0}));
}

// With a width covering every path the beam is a superset search, so its
// normalized score is at least greedy's. Narrow beams may prune the greedy path.
TEST(Beam, ExhaustiveWidthDominatesGreedy) {
  const auto best = beam_search(
      Toy{}, [](Toy& t) { return toy_logp(t.prefix); },
      [](Toy& t, int tok) { t.prefix.push_back(tok); }, 27, 3, 0);
  std::vector<int> greedy;
  Real greedy_lp = 0;
  while (greedy.size() < 3 && (greedy.empty() || greedy.back() != 0)) {
    const auto lp = toy_logp(greedy);
    const int t = argmax_token(lp);
    greedy_lp += lp[static_cast<std::size_t>(t)];
    greedy.push_back(t);
  }
  EXPECT_GE(best.normalized(), greedy_lp / static_cast<Real>(greedy.size()));
}

TEST(DcdFuse, WorkedExampleAgainstScalarOracle) {
  const std::vector<Real> pv{0.7, 0.3}, pt{0.3, 0.7};
  const auto out = dcd_fuse(std::vector<Real>{std::log(0.7), std::log(0.3)},
                            std::vector<Real>{std::log(0.3), std::log(0.7)}, 0.2);
  const double a = std::pow(pv[0], 1.2) / std::pow(pt[0], 0.2);
  const double b = std::pow(pv[1], 1.2) / std::pow(pt[1], 0.2);
  EXPECT_NEAR(out[0], a / (a + b), 1e-12);
  EXPECT_NEAR(out[0], 0.766, 1e-3);
  EXPECT_NEAR(out[1], 0.234, 1e-3);
}

TEST(DcdFuse, Degeneracies) {
  const std::vector<Real> lv{std::log(0.5), std::log(0.3), std::log(0.2)};
  const std::vector<Real> lt{std::log(0.1), std::log(0.1), std::log(0.8)};
  const auto zero = dcd_fuse(lv, lt, 0.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(zero[i], std::exp(lv[i]), 1e-12);
  const auto same = dcd_fuse(lv, lv, 0.7);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(same[i], std::exp(lv[i]), 1e-12);
  EXPECT_THROW(dcd_fuse(lv, std::vector<Real>{0.0}, 0.2), Error);
  const auto floored = floored_log_probs(std::vector<Real>{0.0, -1000.0});
  EXPECT_NEAR(floored[1], std::log(1e-9), 1e-12);
}

TEST(Dcd, FullDegeneracyIsGreedy) {
  Fixture f;
  DecodeOptions o;
  o.max_len = 16;
  o.intervention.alpha = o.intervention.beta = o.intervention.lambda = o.intervention.modulation = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    f.scene = sample_scene(f.grammar, rng, s);
    const auto g = decode_greedy(f.model, f.inputs(), o);
    const auto d = decode_dcd(f.model, f.inputs(), nullptr, o);
    ASSERT_EQ(d.tokens, g.tokens);
    EXPECT_EQ(d.forward_passes, 3 * d.tokens.size());
    o.intervention.lambda = 0.5;
    ASSERT_EQ(decode_dcd(f.model, f.inputs(), nullptr, o).tokens, g.tokens);
    o.intervention.lambda = 0;
  }
}

TEST(Dcd, CalibrationChecks) {
  Fixture f;
  DecodeOptions o;
  EXPECT_THROW(decode_dcd(f.model, f.inputs(), nullptr, o), Error);  // T > 0 without a table
  CalibrationTable t;
  t.layers = {{0, 1.0, 60}, {1, 1.0, 60}};
  t.model_hash = "other";
  try {
    decode_dcd(f.model, f.inputs(), &t, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIntegrity);
  }
  o.force = true;
  o.max_len = 4;
  const auto out = decode_dcd(f.model, f.inputs(), &t, o);
  EXPECT_EQ(out.steps.size(), out.tokens.size());
  EXPECT_EQ(out.steps[0].coefficients.alpha.size(), 2u);
  t.layers.pop_back();
  EXPECT_THROW(decode_dcd(f.model, f.inputs(), &t, o), Error);
}

TEST(SinglePath, TwoPassesPerToken) {
  Fixture f;
  DecodeOptions o;
  o.max_len = 6;
  o.intervention.modulation = 0;
  const auto v = decode(Strategy::kVisualPath, f.model, f.inputs(), nullptr, o);
  EXPECT_EQ(v.forward_passes, 2 * v.tokens.size());
  EXPECT_EQ(v.strategy, Strategy::kVisualPath);
  o.intervention.alpha = o.intervention.beta = 0;
  EXPECT_EQ(decode(Strategy::kTextPath, f.model, f.inputs(), nullptr, o).tokens,
            decode_greedy(f.model, f.inputs(), o).tokens);
}

TEST(Strategy, Names) {
  for (auto s : {Strategy::kGreedy, Strategy::kNucleus, Strategy::kBeam, Strategy::kDcd,
                 Strategy::kVisualPath, Strategy::kTextPath})
    EXPECT_EQ(strategy_from_string(to_string(s)), s);
  EXPECT_THROW(strategy_from_string("topk"), Error);
}

}  // namespace
}  // namespace owl
