#include "owl/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "owl/beam.hpp"
#include "owl/checkpoint.hpp"
#include "owl/error.hpp"
#include "owl/rng.hpp"
#include "owl/scene.hpp"

namespace owl {

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::kGreedy: return "greedy";
    case Strategy::kNucleus: return "nucleus";
    case Strategy::kBeam: return "beam";
    case Strategy::kDcd: return "dcd";
    case Strategy::kVisualPath: return "visual-path";
    case Strategy::kTextPath: return "text-path";
  }
  return "unknown";
}

Strategy strategy_from_string(const std::string& s) {
  for (Strategy st : {Strategy::kGreedy, Strategy::kNucleus, Strategy::kBeam, Strategy::kDcd,
                      Strategy::kVisualPath, Strategy::kTextPath}) {
    if (s == to_string(st)) return st;
  }
  fail(ErrorKind::kInvalidArgument,
       "unknown strategy '" + s + "' (greedy|nucleus|beam|dcd|visual-path|text-path)");
}

Model::Model(ModelParams params)
    : params_(std::move(params)), fingerprint_(params_fingerprint(params_)) {}

bool DecodeOutcome::ended_with_eos() const {
  return !tokens.empty() && steps.size() == tokens.size() && tokens.back() == Vocabulary::kEos;
}

std::size_t DecodeOutcome::content_length() const {
  if (!tokens.empty() && tokens.back() == Vocabulary::kEos) return tokens.size() - 1;
  return tokens.size();
}

int argmax_token(std::span<const Real> v) {
  require(!v.empty(), ErrorKind::kInvalidArgument, "argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<int>(best);
}

namespace {

std::vector<std::pair<int, Real>> top_k(std::span<const Real> logp, std::size_t k) {
  std::vector<int> idx(logp.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](int a, int b) {
                      if (logp[static_cast<std::size_t>(a)] != logp[static_cast<std::size_t>(b)]) {
                        return logp[static_cast<std::size_t>(a)] > logp[static_cast<std::size_t>(b)];
                      }
                      return a < b;
                    });
  std::vector<std::pair<int, Real>> out;
  for (std::size_t i = 0; i < k; ++i) out.emplace_back(idx[i], logp[static_cast<std::size_t>(idx[i])]);
  return out;
}

int sample_from(std::span<const Real> probs, Rng& rng) {
  Real u = rng.uniform();
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last = i;
    if (u < probs[i]) return static_cast<int>(i);
    u -= probs[i];
  }
  return static_cast<int>(last);
}

// Keeps the smallest prefix of tokens (sorted by probability, ties to lower
// id) whose mass reaches top_p, renormalised; zero elsewhere.
std::vector<Real> nucleus_filter(std::span<const Real> probs, Real top_p) {
  std::vector<int> idx(probs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
  });
  std::vector<Real> out(probs.size(), 0.0);
  Real mass = 0.0;
  for (int i : idx) {
    out[static_cast<std::size_t>(i)] = probs[static_cast<std::size_t>(i)];
    mass += probs[static_cast<std::size_t>(i)];
    if (mass >= top_p) break;
  }
  for (auto& p : out) p /= mass;
  return out;
}

class Session {
 public:
  Session(const Model& model, const DecodeInputs& inputs, const DecodeOptions& options,
          Strategy strategy)
      : model_(model), options_(options), state_(model.params(), inputs.features, inputs.prompt) {
    require(options.max_len >= 1, ErrorKind::kInvalidArgument, "max_len must be >= 1");
    outcome_.strategy = strategy;
    outcome_.seed = options.seed;
  }

  StepOutput pass(const AttentionHook* hook = nullptr) {
    ++outcome_.forward_passes;
    return forward_step(model_.params(), state_, hook);
  }

  VtacrProfile profile(const StepOutput& out) const {
    VtacrProfile p = profile_step(out.records, state_.partition(options_.intervention.self_in_text),
                                  model_.config().layers);
    p.step = outcome_.tokens.size();
    return p;
  }

  const DecodeState& state() const { return state_; }

  // Records the step and returns true when decoding should stop.
  bool emit(int token, std::span<const Real> decision_logp, std::span<const Real> base_logp,
            VtacrProfile profile, LayerCoefficients coefficients) {
    profile.token = token;
    outcome_.log_prob += base_logp[static_cast<std::size_t>(token)];
    outcome_.tokens.push_back(token);
    outcome_.steps.push_back({token, top_k(decision_logp, options_.top_k), std::move(profile),
                              std::move(coefficients)});
    if (token == options_.eos || outcome_.tokens.size() >= options_.max_len) return true;
    state_.push(model_.params(), token);
    return false;
  }

  DecodeOutcome finish() { return std::move(outcome_); }

 private:
  const Model& model_;
  const DecodeOptions& options_;
  DecodeState state_;
  DecodeOutcome outcome_;
};

LayerCoefficients coefficients_for(const VtacrProfile& profile, const CalibrationTable* table,
                                   const InterventionConfig& config, std::size_t layers) {
  if (table == nullptr) return fixed_coefficients(layers, config);
  return step_coefficients(profile, *table, config);
}

void check_intervention_inputs(const Model& model, const CalibrationTable* table,
                               const DecodeOptions& options) {
  options.intervention.validate();
  if (table != nullptr) {
    check_calibration(model, *table, options.force);
  } else {
    require(options.intervention.modulation == 0.0, ErrorKind::kInvalidArgument,
            "modulation T > 0 needs a calibration table");
  }
}

}  // namespace

DecodeOutcome decode_greedy(const Model& model, const DecodeInputs& inputs,
                            const DecodeOptions& options) {
  Session s(model, inputs, options, Strategy::kGreedy);
  for (;;) {
    StepOutput out = s.pass();
    const auto logp = log_softmax_row(out.logits);
    const int tok = argmax_token(out.logits);
    if (s.emit(tok, logp, logp, s.profile(out), {})) break;
  }
  return s.finish();
}

DecodeOutcome decode_nucleus(const Model& model, const DecodeInputs& inputs,
                             const DecodeOptions& options) {
  require(options.top_p > 0.0 && options.top_p <= 1.0, ErrorKind::kInvalidArgument,
          "nucleus p must lie in (0,1]");
  require(options.temperature > 0.0, ErrorKind::kInvalidArgument, "temperature must be > 0");
  Session s(model, inputs, options, Strategy::kNucleus);
  Rng rng(options.seed);
  for (;;) {
    StepOutput out = s.pass();
    const auto logp = log_softmax_row(out.logits);
    std::vector<Real> scaled(out.logits);
    for (auto& z : scaled) z /= options.temperature;
    const auto probs = nucleus_filter(softmax_row(scaled), options.top_p);
    const int tok = sample_from(probs, rng);
    if (s.emit(tok, log_softmax_row(scaled), logp, s.profile(out), {})) break;
  }
  return s.finish();
}

DecodeOutcome decode_beam(const Model& model, const DecodeInputs& inputs,
                          const DecodeOptions& options) {
  require(options.beam_width >= 1, ErrorKind::kInvalidArgument, "beam width must be >= 1");
  require(options.max_len >= 1, ErrorKind::kInvalidArgument, "max_len must be >= 1");
  struct Ctx {
    DecodeState state;
    std::vector<StepRecord> steps;
    std::vector<Real> last_logp;
    VtacrProfile last_profile;
  };
  std::size_t passes = 0;
  const auto& params = model.params();
  auto expand = [&](Ctx& c) {
    ++passes;
    StepOutput out = forward_step(params, c.state);
    c.last_profile = profile_step(out.records, c.state.partition(options.intervention.self_in_text),
                                  params.config.layers);
    c.last_profile.step = c.steps.size();
    c.last_logp = log_softmax_row(out.logits);
    return c.last_logp;
  };
  auto advance = [&](Ctx& c, int tok) {
    VtacrProfile prof = c.last_profile;
    prof.token = tok;
    c.steps.push_back({tok, top_k(c.last_logp, options.top_k), std::move(prof), {}});
    if (tok != options.eos && c.steps.size() < options.max_len) c.state.push(params, tok);
  };
  Ctx root{DecodeState(params, inputs.features, inputs.prompt), {}, {}, {}};
  auto best = beam_search(std::move(root), expand, advance, options.beam_width, options.max_len,
                          options.eos);
  DecodeOutcome outcome;
  outcome.strategy = Strategy::kBeam;
  outcome.seed = options.seed;
  outcome.tokens = best.tokens;
  outcome.steps = std::move(best.ctx.steps);
  outcome.forward_passes = passes;
  outcome.log_prob = best.log_prob;
  return outcome;
}

std::vector<Real> floored_log_probs(std::span<const Real> logits, Real floor) {
  std::vector<Real> p = softmax_row(logits);
  for (auto& v : p) v = std::log(std::max(v, floor));
  return p;
}

std::vector<Real> dcd_fuse(std::span<const Real> logp_visual, std::span<const Real> logp_text,
                           Real lambda) {
  require(logp_visual.size() == logp_text.size(), ErrorKind::kDimensionMismatch,
          "dcd_fuse: path distributions differ in length");
  require(!logp_visual.empty(), ErrorKind::kInvalidArgument, "dcd_fuse of empty distributions");
  std::vector<Real> z(logp_visual.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    require(std::isfinite(logp_visual[i]) && std::isfinite(logp_text[i]), ErrorKind::kNumeric,
            "dcd_fuse needs finite log-probabilities");
    z[i] = (1.0 + lambda) * logp_visual[i] - lambda * logp_text[i];
  }
  softmax_inplace(z);
  return z;
}

void check_calibration(const Model& model, const CalibrationTable& table, bool force) {
  require(table.layers.size() == model.config().layers, ErrorKind::kIntegrity,
          "calibration table has " + std::to_string(table.layers.size()) +
              " layers, model has " + std::to_string(model.config().layers));
  if (!force && table.model_hash != model.fingerprint()) {
    fail(ErrorKind::kIntegrity, "calibration table was fit for model " + table.model_hash +
                                    " but the loaded model is " + model.fingerprint() +
                                    " (pass --force to override)");
  }
}

DecodeOutcome decode_dcd(const Model& model, const DecodeInputs& inputs,
                         const CalibrationTable* table, const DecodeOptions& options) {
  check_intervention_inputs(model, table, options);
  const auto& cfg = options.intervention;
  const std::size_t layers = model.config().layers;
  Session s(model, inputs, options, Strategy::kDcd);
  Rng rng(options.seed);
  for (;;) {
    StepOutput probe = s.pass();
    VtacrProfile prof = s.profile(probe);
    LayerCoefficients coeffs = coefficients_for(prof, table, cfg, layers);
    const TokenPartition part = s.state().partition(cfg.self_in_text);
    const AttentionHook vis_hook = make_path_hook(PathKind::kVisualFavored, coeffs, part, cfg.renormalize);
    const AttentionHook txt_hook = make_path_hook(PathKind::kTextFavored, coeffs, part, cfg.renormalize);
    const StepOutput vis = s.pass(&vis_hook);
    const StepOutput txt = s.pass(&txt_hook);
    const auto fused = dcd_fuse(floored_log_probs(vis.logits), floored_log_probs(txt.logits), cfg.lambda);
    const int tok = options.dcd_sample ? sample_from(fused, rng) : argmax_token(fused);
    std::vector<Real> fused_logp(fused.size());
    for (std::size_t i = 0; i < fused.size(); ++i) fused_logp[i] = std::log(std::max(fused[i], 1e-300));
    if (s.emit(tok, fused_logp, log_softmax_row(probe.logits), std::move(prof), std::move(coeffs))) break;
  }
  return s.finish();
}

DecodeOutcome decode_single_path(const Model& model, const DecodeInputs& inputs,
                                 const CalibrationTable* table, const DecodeOptions& options,
                                 PathKind kind) {
  check_intervention_inputs(model, table, options);
  const auto& cfg = options.intervention;
  const std::size_t layers = model.config().layers;
  Session s(model, inputs, options,
            kind == PathKind::kVisualFavored ? Strategy::kVisualPath : Strategy::kTextPath);
  for (;;) {
    StepOutput probe = s.pass();
    VtacrProfile prof = s.profile(probe);
    LayerCoefficients coeffs = coefficients_for(prof, table, cfg, layers);
    const AttentionHook hook =
        make_path_hook(kind, coeffs, s.state().partition(cfg.self_in_text), cfg.renormalize);
    const StepOutput path = s.pass(&hook);
    const auto logp = log_softmax_row(path.logits);
    const int tok = argmax_token(path.logits);
    if (s.emit(tok, logp, log_softmax_row(probe.logits), std::move(prof), std::move(coeffs))) break;
  }
  return s.finish();
}

DecodeOutcome decode(Strategy strategy, const Model& model, const DecodeInputs& inputs,
                     const CalibrationTable* table, const DecodeOptions& options) {
  switch (strategy) {
    case Strategy::kGreedy: return decode_greedy(model, inputs, options);
    case Strategy::kNucleus: return decode_nucleus(model, inputs, options);
    case Strategy::kBeam: return decode_beam(model, inputs, options);
    case Strategy::kDcd: return decode_dcd(model, inputs, table, options);
    case Strategy::kVisualPath:
      return decode_single_path(model, inputs, table, options, PathKind::kVisualFavored);
    case Strategy::kTextPath:
      return decode_single_path(model, inputs, table, options, PathKind::kTextFavored);
  }
  fail(ErrorKind::kInvalidArgument, "unknown strategy");
}

}  // namespace owl
