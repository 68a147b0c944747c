#include "owl/causal.hpp"

#include <nlohmann/json.hpp>

#include "owl/error.hpp"

namespace owl {

namespace {

const char* direction_name(InterventionDirection d) {
  return d == InterventionDirection::kBoost ? "boost" : "suppress";
}

InterventionDirection direction_from(const std::string& s) {
  if (s == "boost") return InterventionDirection::kBoost;
  if (s == "suppress") return InterventionDirection::kSuppress;
  fail(ErrorKind::kIntegrity, "unknown intervention direction '" + s + "'");
}

nlohmann::ordered_json config_json(const InterventionConfig& c) {
  return {{"alpha", c.alpha},           {"beta", c.beta},
          {"lambda", c.lambda},         {"mod_t", c.modulation},
          {"tau_pct", c.tau_pct},       {"delta_mode", to_string(c.delta_mode)},
          {"renormalize", c.renormalize}, {"self_in_text", c.self_in_text}};
}

InterventionConfig config_from(const nlohmann::json& j) {
  InterventionConfig c;
  c.alpha = j.at("alpha").get<Real>();
  c.beta = j.at("beta").get<Real>();
  c.lambda = j.at("lambda").get<Real>();
  c.modulation = j.at("mod_t").get<Real>();
  c.tau_pct = j.at("tau_pct").get<Real>();
  c.delta_mode = delta_mode_from_string(j.at("delta_mode").get<std::string>());
  c.renormalize = j.at("renormalize").get<bool>();
  c.self_in_text = j.at("self_in_text").get<bool>();
  return c;
}

}  // namespace

const char* to_string(ScmNode node) {
  switch (node) {
    case ScmNode::kXV: return "X_V";
    case ScmNode::kXT: return "X_T";
    case ScmNode::kPV: return "P_V";
    case ScmNode::kPT: return "P_T";
    case ScmNode::kAV: return "A_V";
    case ScmNode::kAT: return "A_T";
    case ScmNode::kYT: return "Y_T";
  }
  return "?";
}

ScmNode scm_node_from_string(const std::string& s) {
  for (ScmNode n : ScmGraph::nodes()) {
    if (s == to_string(n)) return n;
  }
  fail(ErrorKind::kInvalidArgument, "unknown SCM node '" + s + "'");
}

ScmGraph::ScmGraph()
    : edges_{{ScmNode::kXV, ScmNode::kAV}, {ScmNode::kPV, ScmNode::kAV},
             {ScmNode::kAV, ScmNode::kYT}, {ScmNode::kXT, ScmNode::kAT},
             {ScmNode::kPT, ScmNode::kAT}, {ScmNode::kAT, ScmNode::kYT}} {}

bool ScmGraph::observable(ScmNode node) const {
  return node != ScmNode::kPV && node != ScmNode::kPT;
}

bool ScmGraph::manipulable(ScmNode node) const {
  return node == ScmNode::kAV || node == ScmNode::kAT;
}

bool ScmGraph::acyclic() const {
  // Kahn's algorithm over the 7 nodes.
  std::array<int, 7> indeg{};
  for (const auto& e : edges_) ++indeg[static_cast<std::size_t>(e.to)];
  std::vector<ScmNode> ready;
  for (ScmNode n : nodes()) {
    if (indeg[static_cast<std::size_t>(n)] == 0) ready.push_back(n);
  }
  std::size_t seen = 0;
  while (!ready.empty()) {
    const ScmNode n = ready.back();
    ready.pop_back();
    ++seen;
    for (const auto& e : edges_) {
      if (e.from == n && --indeg[static_cast<std::size_t>(e.to)] == 0) ready.push_back(e.to);
    }
  }
  return seen == nodes().size();
}

InterventionRecord register_intervention(const ScmGraph& graph, ScmNode node,
                                         const std::string& path, InterventionDirection direction,
                                         const InterventionConfig& config) {
  require(graph.manipulable(node), ErrorKind::kInvalidArgument,
          std::string("cannot intervene on ") + to_string(node) +
              ": node is unobservable or non-manipulable");
  return {node, path, direction, config};
}

std::vector<InterventionRecord> strategy_interventions(const ScmGraph& graph, Strategy strategy,
                                                       const InterventionConfig& config) {
  using D = InterventionDirection;
  std::vector<InterventionRecord> out;
  const bool visual = strategy == Strategy::kDcd || strategy == Strategy::kVisualPath;
  const bool text = strategy == Strategy::kDcd || strategy == Strategy::kTextPath;
  if (visual) {
    out.push_back(register_intervention(graph, ScmNode::kAV, "visual-favored", D::kBoost, config));
    out.push_back(register_intervention(graph, ScmNode::kAT, "visual-favored", D::kSuppress, config));
  }
  if (text) {
    out.push_back(register_intervention(graph, ScmNode::kAV, "text-favored", D::kSuppress, config));
    out.push_back(register_intervention(graph, ScmNode::kAT, "text-favored", D::kBoost, config));
  }
  return out;
}

std::string scm_manifest_json(const ScmGraph& graph, const std::vector<InterventionRecord>& records) {
  nlohmann::ordered_json j;
  auto& nodes = j["nodes"] = nlohmann::ordered_json::array();
  for (ScmNode n : ScmGraph::nodes()) {
    nodes.push_back({{"name", to_string(n)},
                     {"observable", graph.observable(n)},
                     {"manipulable", graph.manipulable(n)}});
  }
  auto& edges = j["edges"] = nlohmann::ordered_json::array();
  for (const auto& e : graph.edges()) edges.push_back({to_string(e.from), to_string(e.to)});
  auto& ivs = j["interventions"] = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    ivs.push_back({{"node", to_string(r.node)},
                   {"path", r.path},
                   {"direction", direction_name(r.direction)},
                   {"config", config_json(r.config)}});
  }
  return j.dump();
}

std::vector<InterventionRecord> scm_manifest_records(const std::string& json) {
  std::vector<InterventionRecord> out;
  try {
    const auto j = nlohmann::json::parse(json);
    for (const auto& r : j.at("interventions")) {
      out.push_back({scm_node_from_string(r.at("node").get<std::string>()),
                     r.at("path").get<std::string>(),
                     direction_from(r.at("direction").get<std::string>()),
                     config_from(r.at("config"))});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIntegrity, std::string("malformed SCM manifest: ") + e.what());
  }
  return out;
}

}  // namespace owl
