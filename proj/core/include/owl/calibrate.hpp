#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "owl/scene.hpp"
#include "owl/strategy.hpp"
#include "owl/tensor.hpp"

namespace owl {

class Model;

struct CalibrationLayer {
  std::size_t layer = 0;
  Real base_score = 0.0;  // V_b
  std::size_t samples = 0;
  friend bool operator==(const CalibrationLayer&, const CalibrationLayer&) = default;
};

struct CalibrationTable {
  static constexpr int kVersion = 1;
  Real tau_pct = 80.0;
  std::vector<CalibrationLayer> layers;
  std::size_t min_samples = 50;
  bool reliable = true;
  std::string model_hash;
  std::string corpus_hash;

  friend bool operator==(const CalibrationTable&, const CalibrationTable&) = default;
};

using LayerSamples = std::vector<std::vector<Real>>;  // [layer][sample]

struct CollectOptions {
  Strategy decoder = Strategy::kGreedy;
  std::size_t max_len = 64;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

// Decodes every scene with the collector strategy and records, for each
// emitted token naming an absent object, that step's per-layer VTACR.
// Scenes are merged in corpus order. Throws kDegenerate if no hallucinated
// token is found.
LayerSamples collect_hallucinated_vtacr(const Model& model, const std::vector<CorpusEntry>& corpus,
                                        const SceneGrammar& grammar, const CollectOptions& options);
LayerSamples collect_hallucinated_vtacr(const Model& model, const std::vector<CorpusEntry>& corpus,
                                        const SceneGrammar& grammar);

// V_b per layer = nearest-rank tau_pct percentile of that layer's samples.
CalibrationTable fit_base_scores(const LayerSamples& samples, Real tau_pct,
                                 std::size_t min_samples = 50);

std::string calibration_to_json(const CalibrationTable& table);
CalibrationTable calibration_from_json(const std::string& text);

}  // namespace owl
