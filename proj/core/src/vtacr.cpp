#include "owl/vtacr.hpp"

#include <string>

#include "owl/error.hpp"

namespace owl {
namespace {

Real mean_mass(const AttentionRecord& record, std::span<const std::size_t> indices,
               const char* which) {
  require(!indices.empty(), ErrorKind::kInvalidArgument,
          std::string("empty ") + which + " index set");
  const std::size_t n = record.heads();
  require(n > 0, ErrorKind::kInvalidArgument, "attention record has no heads");
  Real total = 0.0;
  for (std::size_t j : indices) {
    require(j < record.context(), ErrorKind::kInvalidArgument,
            std::string(which) + " index " + std::to_string(j) + " beyond record length");
    for (std::size_t i = 0; i < n; ++i) total += record.weights(i, j);
  }
  return total / (static_cast<Real>(n) * static_cast<Real>(indices.size()));
}

}  // namespace

Real visual_contribution(const AttentionRecord& record, const TokenPartition& part) {
  return mean_mass(record, part.visual, "visual");
}

Real textual_contribution(const AttentionRecord& record, const TokenPartition& part) {
  return mean_mass(record, part.text, "text");
}

Real vtacr_layer(Real nu, Real tau) {
  require(nu >= 0.0 && tau >= 0.0, ErrorKind::kInvalidArgument,
          "VTACR needs non-negative contributions");
  require(tau > 0.0, ErrorKind::kDegenerate, "VTACR undefined: text contribution is zero");
  return nu / tau;
}

std::optional<Real> VtacrProfile::layer_mean() const {
  Real total = 0.0;
  std::size_t n = 0;
  for (const auto& l : layers) {
    if (l.ratio) {
      total += *l.ratio;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<Real>(n);
}

VtacrProfile profile_step(std::span<const AttentionRecord> records, const TokenPartition& part,
                          std::size_t expected_layers) {
  require(records.size() == expected_layers, ErrorKind::kDimensionMismatch,
          "profile_step: got " + std::to_string(records.size()) + " records for " +
              std::to_string(expected_layers) + " layers");
  VtacrProfile profile;
  profile.layers.reserve(records.size());
  for (const auto& rec : records) {
    part.validate(rec.context());
    LayerVtacr l;
    l.nu = visual_contribution(rec, part);
    l.tau = textual_contribution(rec, part);
    if (l.tau > 0.0) l.ratio = vtacr_layer(l.nu, l.tau);
    profile.layers.push_back(l);
  }
  return profile;
}

}  // namespace owl
