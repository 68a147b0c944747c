#include "owl/intervene.hpp"

#include <cmath>
#include <string>

#include "owl/error.hpp"

namespace owl {

const char* to_string(DeltaMode mode) {
  return mode == DeltaMode::kIntent ? "intent" : "literal";
}

DeltaMode delta_mode_from_string(const std::string& s) {
  if (s == "intent") return DeltaMode::kIntent;
  if (s == "literal") return DeltaMode::kLiteral;
  fail(ErrorKind::kInvalidArgument, "unknown delta mode '" + s + "' (intent|literal)");
}

void InterventionConfig::validate() const {
  require(std::isfinite(alpha) && alpha >= 0.0, ErrorKind::kInvalidArgument, "alpha must be >= 0");
  require(std::isfinite(beta) && beta >= 0.0 && beta < 1.0, ErrorKind::kInvalidArgument,
          "beta must lie in [0,1)");
  require(std::isfinite(lambda) && lambda >= 0.0, ErrorKind::kInvalidArgument, "lambda must be >= 0");
  require(std::isfinite(modulation) && modulation >= 0.0, ErrorKind::kInvalidArgument,
          "modulation coefficient T must be >= 0");
  require(tau_pct >= 0.0 && tau_pct <= 100.0, ErrorKind::kInvalidArgument,
          "tau percentile must lie in [0,100]");
}

Real modulation_delta(Real vtacr, Real base, Real modulation, DeltaMode mode) {
  require(base > 0.0, ErrorKind::kInvalidArgument, "base score V_b must be > 0");
  require(vtacr >= 0.0 && modulation >= 0.0, ErrorKind::kInvalidArgument,
          "modulation_delta needs V >= 0 and T >= 0");
  if (vtacr >= base) return 0.0;
  const Real deficit = (vtacr - base) / base;
  const Real scaled = mode == DeltaMode::kIntent ? modulation * std::abs(deficit)
                                                 : modulation * deficit;
  return std::min(scaled, modulation);
}

std::pair<Real, Real> effective_coefficients(Real alpha, Real beta, Real delta) {
  require(std::isfinite(alpha) && std::isfinite(beta) && std::isfinite(delta),
          ErrorKind::kInvalidArgument, "effective_coefficients needs finite inputs");
  const Real a = alpha + delta;
  const Real b = beta + delta;
  require(b < 1.0, ErrorKind::kInvalidArgument,
          "effective beta " + std::to_string(b) + " >= 1 would flip text weights");
  return {a, b};
}

namespace {

AttentionRecord rewrite(const AttentionRecord& record, const TokenPartition& part,
                        Real visual_sign_coeff, Real text_sign_coeff, bool renormalize) {
  part.validate(record.context());
  AttentionRecord out = record;
  if (visual_sign_coeff == 0.0 && text_sign_coeff == 0.0) return out;
  for (std::size_t h = 0; h < out.heads(); ++h) {
    auto row = out.weights.row(h);
    for (std::size_t j : part.visual) row[j] = row[j] + visual_sign_coeff * std::abs(row[j]);
    for (std::size_t k : part.text) row[k] = row[k] + text_sign_coeff * std::abs(row[k]);
    if (renormalize) {
      const Real total = sum(row);
      require(total > 0.0, ErrorKind::kDegenerate, "rewritten attention row has zero mass");
      for (auto& w : row) w /= total;
    }
  }
  return out;
}

}  // namespace

AttentionRecord rewrite_visual_favored(const AttentionRecord& record, const TokenPartition& part,
                                       Real alpha, Real beta, bool renormalize) {
  require(alpha >= 0.0, ErrorKind::kInvalidArgument, "visual-favored alpha~ must be >= 0");
  require(beta >= 0.0 && beta < 1.0, ErrorKind::kInvalidArgument,
          "visual-favored beta~ must lie in [0,1)");
  return rewrite(record, part, alpha, -beta, renormalize);
}

AttentionRecord rewrite_text_favored(const AttentionRecord& record, const TokenPartition& part,
                                     Real alpha, Real beta, bool renormalize) {
  require(alpha >= 0.0 && alpha < 1.0, ErrorKind::kInvalidArgument,
          "text-favored alpha~ must lie in [0,1)");
  require(beta >= 0.0 && beta < 1.0, ErrorKind::kInvalidArgument,
          "text-favored beta~ must lie in [0,1)");
  return rewrite(record, part, -alpha, beta, renormalize);
}

LayerCoefficients step_coefficients(const VtacrProfile& profile, const CalibrationTable& table,
                                    const InterventionConfig& config) {
  require(profile.layers.size() == table.layers.size(), ErrorKind::kDimensionMismatch,
          "profile has " + std::to_string(profile.layers.size()) + " layers, calibration table " +
              std::to_string(table.layers.size()));
  LayerCoefficients c;
  for (std::size_t l = 0; l < profile.layers.size(); ++l) {
    const auto& layer = profile.layers[l];
    const Real delta = layer.degenerate()
                           ? 0.0
                           : modulation_delta(*layer.ratio, table.layers[l].base_score,
                                              config.modulation, config.delta_mode);
    const auto [a, b] = effective_coefficients(config.alpha, config.beta, delta);
    c.delta.push_back(delta);
    c.alpha.push_back(a);
    c.beta.push_back(b);
  }
  return c;
}

LayerCoefficients fixed_coefficients(std::size_t layers, const InterventionConfig& config) {
  LayerCoefficients c;
  c.delta.assign(layers, 0.0);
  c.alpha.assign(layers, config.alpha);
  c.beta.assign(layers, config.beta);
  return c;
}

AttentionHook make_path_hook(PathKind kind, const LayerCoefficients& coefficients,
                             const TokenPartition& part, bool renormalize) {
  AttentionHook hook;
  hook.allow_unnormalized = !renormalize;
  hook.rewrite = [kind, coefficients, part, renormalize](std::size_t layer, Matrix& rows) {
    AttentionRecord rec{layer, std::move(rows)};
    const Real a = coefficients.alpha.at(layer);
    const Real b = coefficients.beta.at(layer);
    rec = kind == PathKind::kVisualFavored ? rewrite_visual_favored(rec, part, a, b, renormalize)
                                           : rewrite_text_favored(rec, part, a, b, renormalize);
    rows = std::move(rec.weights);
  };
  return hook;
}

}  // namespace owl
