#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "owl/calibrate.hpp"
#include "owl/intervene.hpp"
#include "owl/model.hpp"
#include "owl/strategy.hpp"
#include "owl/vtacr.hpp"

namespace owl {

// Immutable parameters plus their checkpoint fingerprint.
class Model {
 public:
  explicit Model(ModelParams params);

  const ModelParams& params() const { return params_; }
  const ModelConfig& config() const { return params_.config; }
  const std::string& fingerprint() const { return fingerprint_; }

 private:
  ModelParams params_;
  std::string fingerprint_;
};

struct DecodeInputs {
  Matrix features;
  std::vector<int> prompt;
};

struct DecodeOptions {
  std::size_t max_len = 64;
  int eos = 1;
  Real top_p = 0.9;
  Real temperature = 1.0;
  std::size_t beam_width = 3;
  std::uint64_t seed = 0;
  InterventionConfig intervention;
  bool dcd_sample = false;  // sample from the fused distribution instead of argmax
  bool force = false;       // ignore calibration fingerprint mismatches
  std::size_t top_k = 8;
};

struct StepRecord {
  int token = -1;
  std::vector<std::pair<int, Real>> top;  // top-k (token, log-prob) of the decision distribution
  VtacrProfile profile;                   // from the uninterfered pass
  LayerCoefficients coefficients;         // empty for baseline decoders
};

struct DecodeOutcome {
  std::vector<int> tokens;
  std::vector<StepRecord> steps;  // one per emitted token
  Strategy strategy = Strategy::kGreedy;
  std::uint64_t seed = 0;
  std::size_t forward_passes = 0;
  Real log_prob = 0.0;  // sum of base-model log-probs of the emitted tokens
  bool ended_with_eos() const;
  // Caption length excluding a trailing EOS.
  std::size_t content_length() const;
};

// Argmax with ties to the lowest id.
int argmax_token(std::span<const Real> v);

DecodeOutcome decode_greedy(const Model& model, const DecodeInputs& inputs,
                            const DecodeOptions& options = {});
DecodeOutcome decode_nucleus(const Model& model, const DecodeInputs& inputs,
                             const DecodeOptions& options);
DecodeOutcome decode_beam(const Model& model, const DecodeInputs& inputs,
                          const DecodeOptions& options);

// softmax((1 + lambda) * logp_visual - lambda * logp_text).
std::vector<Real> dcd_fuse(std::span<const Real> logp_visual, std::span<const Real> logp_text,
                           Real lambda);
// log(max(softmax(logits), floor)).
std::vector<Real> floored_log_probs(std::span<const Real> logits, Real floor = 1e-9);

// Per step: probe pass -> VTACR profile -> coefficients -> visual-favored and
// text-favored passes -> fusion -> pick. `table` may be null only when the
// modulation coefficient T is 0.
DecodeOutcome decode_dcd(const Model& model, const DecodeInputs& inputs,
                         const CalibrationTable* table, const DecodeOptions& options);

// Greedy decoding from one intervened path (probe pass + hooked pass).
DecodeOutcome decode_single_path(const Model& model, const DecodeInputs& inputs,
                                 const CalibrationTable* table, const DecodeOptions& options,
                                 PathKind kind);

DecodeOutcome decode(Strategy strategy, const Model& model, const DecodeInputs& inputs,
                     const CalibrationTable* table, const DecodeOptions& options);

// Throws kIntegrity unless the table was fit against this model (or force).
void check_calibration(const Model& model, const CalibrationTable& table, bool force);

}  // namespace owl
