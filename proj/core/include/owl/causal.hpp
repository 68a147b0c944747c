#pragma once

#include <array>
#include <string>
#include <vector>

#include "owl/intervene.hpp"
#include "owl/strategy.hpp"

namespace owl {

enum class ScmNode { kXV, kXT, kPV, kPT, kAV, kAT, kYT };

const char* to_string(ScmNode node);
ScmNode scm_node_from_string(const std::string& s);

struct ScmEdge {
  ScmNode from;
  ScmNode to;
  friend bool operator==(const ScmEdge&, const ScmEdge&) = default;
};

// The fixed hallucination SCM: inputs and priors feed the attention
// mediators, which feed the output. Priors are unobservable.
class ScmGraph {
 public:
  ScmGraph();

  const std::vector<ScmEdge>& edges() const { return edges_; }
  static constexpr std::array<ScmNode, 7> nodes() {
    return {ScmNode::kXV, ScmNode::kXT, ScmNode::kPV, ScmNode::kPT,
            ScmNode::kAV, ScmNode::kAT, ScmNode::kYT};
  }
  bool observable(ScmNode node) const;
  bool manipulable(ScmNode node) const;
  bool acyclic() const;

 private:
  std::vector<ScmEdge> edges_;
};

enum class InterventionDirection { kBoost, kSuppress };

struct InterventionRecord {
  ScmNode node = ScmNode::kAV;
  std::string path;  // "visual-favored" or "text-favored"
  InterventionDirection direction = InterventionDirection::kBoost;
  InterventionConfig config;
  friend bool operator==(const InterventionRecord&, const InterventionRecord&) = default;
};

// do(node = node*). Only the attention mediators accept interventions.
InterventionRecord register_intervention(const ScmGraph& graph, ScmNode node,
                                         const std::string& path, InterventionDirection direction,
                                         const InterventionConfig& config);

// Two records per path used by the strategy; none for baselines.
std::vector<InterventionRecord> strategy_interventions(const ScmGraph& graph, Strategy strategy,
                                                       const InterventionConfig& config);

// JSON fragment stored under "scm" in run manifests.
std::string scm_manifest_json(const ScmGraph& graph, const std::vector<InterventionRecord>& records);
std::vector<InterventionRecord> scm_manifest_records(const std::string& json);

}  // namespace owl
