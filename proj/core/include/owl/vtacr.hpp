#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "owl/attention.hpp"

namespace owl {

// nu: head-averaged attention mass per visual token,
//   (1 / (N |V|)) * sum_{j in V} sum_i A[i][j].
Real visual_contribution(const AttentionRecord& record, const TokenPartition& part);
// tau: the same average over the text index set.
Real textual_contribution(const AttentionRecord& record, const TokenPartition& part);
// nu / tau. Throws kDegenerate when tau == 0.
Real vtacr_layer(Real nu, Real tau);

struct LayerVtacr {
  Real nu = 0.0;
  Real tau = 0.0;
  // Empty when tau == 0 (unmeasurable layer).
  std::optional<Real> ratio;

  bool degenerate() const { return !ratio.has_value(); }
};

struct VtacrProfile {
  std::size_t step = 0;
  int token = -1;  // token emitted at this step (-1 until known)
  std::vector<LayerVtacr> layers;

  // Mean ratio over measurable layers; nullopt if none.
  std::optional<Real> layer_mean() const;
};

VtacrProfile profile_step(std::span<const AttentionRecord> records, const TokenPartition& part,
                          std::size_t expected_layers);

}  // namespace owl
