#pragma once

#include <utility>
#include <vector>

#include "owl/attention.hpp"
#include "owl/calibrate.hpp"
#include "owl/vtacr.hpp"

namespace owl {

// How the modulation delta treats a VTACR deficit. kIntent boosts by the
// deficit magnitude; kLiteral keeps the signed (negative) value.
enum class DeltaMode { kIntent, kLiteral };

const char* to_string(DeltaMode mode);
DeltaMode delta_mode_from_string(const std::string& s);

struct InterventionConfig {
  Real alpha = 0.4;
  Real beta = 0.5;
  Real lambda = 0.2;
  Real modulation = 0.2;  // T
  Real tau_pct = 80.0;
  DeltaMode delta_mode = DeltaMode::kIntent;
  bool renormalize = true;
  bool self_in_text = true;

  void validate() const;
  friend bool operator==(const InterventionConfig&, const InterventionConfig&) = default;
};

struct LayerCoefficients {
  std::vector<Real> delta;  // T~
  std::vector<Real> alpha;  // alpha~
  std::vector<Real> beta;   // beta~
};

// 0 when vtacr >= base. Below the base score, intent mode gives
// min(T * |V - V_b| / V_b, T); literal mode min(T * (V - V_b) / V_b, T).
Real modulation_delta(Real vtacr, Real base, Real modulation, DeltaMode mode);

// (alpha + delta, beta + delta). Throws when beta~ >= 1.
std::pair<Real, Real> effective_coefficients(Real alpha, Real beta, Real delta);

// Visual entries become A + alpha~|A|, text entries A - beta~|A|, others are
// untouched; rows optionally rescaled to sum 1.
AttentionRecord rewrite_visual_favored(const AttentionRecord& record, const TokenPartition& part,
                                       Real alpha, Real beta, bool renormalize);
// Visual entries become A - alpha~|A|, text entries A + beta~|A|.
AttentionRecord rewrite_text_favored(const AttentionRecord& record, const TokenPartition& part,
                                     Real alpha, Real beta, bool renormalize);

// Per layer: modulation_delta then effective_coefficients. Degenerate
// (tau == 0) layers keep delta 0.
LayerCoefficients step_coefficients(const VtacrProfile& profile, const CalibrationTable& table,
                                    const InterventionConfig& config);
// Coefficients without a calibration table (delta 0 everywhere).
LayerCoefficients fixed_coefficients(std::size_t layers, const InterventionConfig& config);

enum class PathKind { kVisualFavored, kTextFavored };

// Hook applying the chosen rewrite at every layer with that layer's
// coefficients.
AttentionHook make_path_hook(PathKind kind, const LayerCoefficients& coefficients,
                             const TokenPartition& part, bool renormalize);

}  // namespace owl
