#pragma once

#include <string>

namespace owl {

// kVisualPath / kTextPath decode greedily from a single intervened path
// (ablations of the dual-path decoder).
enum class Strategy { kGreedy, kNucleus, kBeam, kDcd, kVisualPath, kTextPath };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

}  // namespace owl
