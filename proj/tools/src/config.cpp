#include "owl_cli/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "owl/error.hpp"
#include "owl/rng.hpp"

namespace owl::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  fail(ErrorKind::kInvalidArgument, "config key '" + key + "': '" + value + "' is not " + what);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "a boolean (true|false)");
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Shortest representation that round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char shorter[32];
    std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, double>) {
      out += fmt_double(v[i]);
    } else {
      out += v[i];
    }
  }
  return out;
}

struct Binding {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Binding bind_field(T RunConfig::*field) {
  Binding b;
  b.set = [field](RunConfig& c, const std::string& key, const std::string& v) {
    if constexpr (std::is_same_v<T, std::string>) {
      c.*field = v;
    } else if constexpr (std::is_same_v<T, bool>) {
      c.*field = to_bool(key, v);
    } else if constexpr (std::is_same_v<T, double>) {
      c.*field = to_double(key, v);
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      c.*field = split_list(v);
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      std::vector<double> out;
      for (const auto& item : split_list(v)) out.push_back(to_double(key, item));
      c.*field = out;
    } else {
      c.*field = static_cast<T>(to_u64(key, v));
    }
  };
  b.get = [field](const RunConfig& c) -> std::string {
    if constexpr (std::is_same_v<T, std::string>) {
      return c.*field;
    } else if constexpr (std::is_same_v<T, bool>) {
      return c.*field ? "true" : "false";
    } else if constexpr (std::is_same_v<T, double>) {
      return fmt_double(c.*field);
    } else if constexpr (std::is_same_v<T, std::vector<std::string>> ||
                         std::is_same_v<T, std::vector<double>>) {
      return join(c.*field);
    } else {
      return std::to_string(c.*field);
    }
  };
  return b;
}

const std::vector<std::pair<std::string, Binding>>& bindings() {
  static const std::vector<std::pair<std::string, Binding>> table = {
      {"seed", bind_field(&RunConfig::seed)},
      {"workdir", bind_field(&RunConfig::workdir)},
      {"grammar_path", bind_field(&RunConfig::grammar_path)},
      {"train_corpus", bind_field(&RunConfig::train_corpus)},
      {"eval_corpus", bind_field(&RunConfig::eval_corpus)},
      {"model_path", bind_field(&RunConfig::model_path)},
      {"calibration_path", bind_field(&RunConfig::calibration_path)},
      {"train_size", bind_field(&RunConfig::train_size)},
      {"eval_size", bind_field(&RunConfig::eval_size)},
      {"bias", bind_field(&RunConfig::bias)},
      {"hallucination_rate", bind_field(&RunConfig::hallucination_rate)},
      {"feature_noise", bind_field(&RunConfig::feature_noise)},
      {"attribute_prob", bind_field(&RunConfig::attribute_prob)},
      {"layers", bind_field(&RunConfig::layers)},
      {"heads", bind_field(&RunConfig::heads)},
      {"dim", bind_field(&RunConfig::dim)},
      {"mlp_dim", bind_field(&RunConfig::mlp_dim)},
      {"epochs", bind_field(&RunConfig::epochs)},
      {"learning_rate", bind_field(&RunConfig::learning_rate)},
      {"batch_size", bind_field(&RunConfig::batch_size)},
      {"calib_size", bind_field(&RunConfig::calib_size)},
      {"collector", bind_field(&RunConfig::collector)},
      {"strategy", bind_field(&RunConfig::strategy)},
      {"strategies", bind_field(&RunConfig::strategies)},
      {"max_len", bind_field(&RunConfig::max_len)},
      {"top_p", bind_field(&RunConfig::top_p)},
      {"temperature", bind_field(&RunConfig::temperature)},
      {"beam_width", bind_field(&RunConfig::beam_width)},
      {"alpha", bind_field(&RunConfig::alpha)},
      {"beta", bind_field(&RunConfig::beta)},
      {"lambda", bind_field(&RunConfig::lambda)},
      {"mod_t", bind_field(&RunConfig::mod_t)},
      {"tau_pct", bind_field(&RunConfig::tau_pct)},
      {"delta_mode", bind_field(&RunConfig::delta_mode)},
      {"renormalize", bind_field(&RunConfig::renormalize)},
      {"self_in_text", bind_field(&RunConfig::self_in_text)},
      {"force", bind_field(&RunConfig::force)},
      {"suites", bind_field(&RunConfig::suites)},
      {"suite", bind_field(&RunConfig::suite)},
      {"dump_vtacr", bind_field(&RunConfig::dump_vtacr)},
      {"dump_outcomes", bind_field(&RunConfig::dump_outcomes)},
      {"scene_id", bind_field(&RunConfig::scene_id)},
      {"sweep_alpha", bind_field(&RunConfig::sweep_alpha)},
      {"sweep_beta", bind_field(&RunConfig::sweep_beta)},
      {"sweep_lambda", bind_field(&RunConfig::sweep_lambda)},
      {"sweep_mod_t", bind_field(&RunConfig::sweep_mod_t)},
      {"sweep_out", bind_field(&RunConfig::sweep_out)},
  };
  return table;
}

const Binding& binding(const std::string& key) {
  for (const auto& [k, b] : bindings()) {
    if (k == key) return b;
  }
  fail(ErrorKind::kInvalidArgument, "unknown config key '" + key + "'");
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> out = [] {
    std::vector<std::string> k;
    for (const auto& [key, b] : bindings()) k.push_back(key);
    return k;
  }();
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  binding(key).set(*this, key, value);
}

std::string RunConfig::get(const std::string& key) const { return binding(key).get(*this); }

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [key, b] : bindings()) out += key + " = " + b.get(*this) + "\n";
  return out;
}

void RunConfig::merge(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::kInvalidArgument,
            "config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    require(seen.insert(key).second, ErrorKind::kInvalidArgument,
            "config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    set(key, trim(line.substr(eq + 1)));
  }
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  c.merge(text);
  return c;
}

void RunConfig::validate() const {
  grammar().validate();
  require(train_size >= 1 && eval_size >= 1, ErrorKind::kInvalidArgument,
          "train_size and eval_size must be >= 1");
  require(calib_size >= 1, ErrorKind::kInvalidArgument, "calib_size must be >= 1");
  require(batch_size >= 1, ErrorKind::kInvalidArgument, "batch_size must be >= 1");
  require(learning_rate >= 0.0, ErrorKind::kInvalidArgument, "learning_rate must be >= 0");
  require(max_len >= 1, ErrorKind::kInvalidArgument, "max_len must be >= 1");
  strategy_from_string(strategy);
  strategy_from_string(collector);
  for (const auto& s : strategies) strategy_from_string(s);
  for (const auto& s : suites) {
    require(s == "chair" || s == "pope" || s == "tce", ErrorKind::kInvalidArgument,
            "unknown suite '" + s + "' (chair|pope|tce)");
  }
  require(suite == "chair" || suite == "pope" || suite == "tce", ErrorKind::kInvalidArgument,
          "unknown suite '" + suite + "' (chair|pope|tce)");
  require(scene_id.find_first_not_of("0123456789") == std::string::npos, ErrorKind::kInvalidArgument,
          "scene_id must be a non-negative integer");
  intervention().validate();
  for (const auto* grid : {&sweep_alpha, &sweep_beta, &sweep_lambda, &sweep_mod_t}) {
    require(!grid->empty(), ErrorKind::kInvalidArgument, "sweep grids must be non-empty");
  }
}

std::filesystem::path RunConfig::path_or(const std::string& explicit_path, const char* name) const {
  if (!explicit_path.empty()) return explicit_path;
  return std::filesystem::path(workdir) / name;
}

SceneGrammar RunConfig::grammar() const {
  SceneGrammar g = SceneGrammar::default_grammar();
  g.bias = bias;
  g.hallucination_rate = hallucination_rate;
  g.feature_noise = feature_noise;
  g.attribute_prob = attribute_prob;
  return g;
}

ModelConfig RunConfig::model_config(const SceneGrammar& g) const {
  ModelConfig c;
  c.layers = layers;
  c.heads = heads;
  c.dim = dim;
  c.mlp_dim = mlp_dim;
  c.vocab = g.vocabulary().size();
  c.feature_dim = g.object_count();
  c.visual_slots = g.visual_slots;
  return c;
}

TrainOptions RunConfig::train_options() const {
  TrainOptions o;
  o.epochs = epochs;
  o.learning_rate = learning_rate;
  o.batch_size = batch_size;
  o.seed = derive_seed(seed, "train-order");
  return o;
}

InterventionConfig RunConfig::intervention() const {
  InterventionConfig c;
  c.alpha = alpha;
  c.beta = beta;
  c.lambda = lambda;
  c.modulation = mod_t;
  c.tau_pct = tau_pct;
  c.delta_mode = delta_mode_from_string(delta_mode);
  c.renormalize = renormalize;
  c.self_in_text = self_in_text;
  return c;
}

DecodeOptions RunConfig::decode_options() const {
  DecodeOptions o;
  o.max_len = max_len;
  o.top_p = top_p;
  o.temperature = temperature;
  o.beam_width = beam_width;
  o.intervention = intervention();
  o.force = force;
  return o;
}

}  // namespace owl::cli
