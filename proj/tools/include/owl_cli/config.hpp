#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "owl/decode.hpp"
#include "owl/model.hpp"
#include "owl/scene.hpp"

namespace owl::cli {

// Every knob of every subcommand. The file format is one `key = value` per
// line; `#` starts a comment; blank lines are ignored; unknown keys and
// duplicate keys are errors. Lists are comma separated.
struct RunConfig {
  std::uint64_t seed = 7;
  std::string workdir = "owl_run";

  // Artifact paths; empty means <workdir>/<default name>.
  std::string grammar_path;
  std::string train_corpus;
  std::string eval_corpus;
  std::string model_path;
  std::string calibration_path;

  // Testbed
  std::size_t train_size = 2000;
  std::size_t eval_size = 500;
  double bias = 0.8;
  double hallucination_rate = 0.3;
  double feature_noise = 0.1;
  double attribute_prob = 0.2;

  // Model and training
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t dim = 32;
  std::size_t mlp_dim = 64;
  std::size_t epochs = 12;
  double learning_rate = 3e-3;
  std::size_t batch_size = 32;

  // Calibration
  std::size_t calib_size = 500;
  std::string collector = "greedy";

  // Decoding
  std::string strategy = "dcd";
  std::vector<std::string> strategies = {"greedy", "nucleus", "beam", "dcd", "visual-path", "text-path"};
  std::size_t max_len = 64;
  double top_p = 0.9;
  double temperature = 1.0;
  std::size_t beam_width = 3;
  double alpha = 0.4;
  double beta = 0.5;
  double lambda = 0.2;
  double mod_t = 0.2;
  double tau_pct = 80.0;
  std::string delta_mode = "intent";
  bool renormalize = true;
  bool self_in_text = true;
  bool force = false;

  // Evaluation
  std::vector<std::string> suites = {"chair", "pope", "tce"};
  std::string suite = "chair";
  std::string dump_vtacr;
  std::string dump_outcomes;  // JSONL, one object per generation with per-step diagnostics
  std::string scene_id;       // caption a single eval scene (empty = whole split)

  // Sweep grid
  std::vector<double> sweep_alpha = {0.4};
  std::vector<double> sweep_beta = {0.5};
  std::vector<double> sweep_lambda = {0.2};
  std::vector<double> sweep_mod_t = {0.2};
  std::string sweep_out;

  // Keys in serialization order.
  static const std::vector<std::string>& keys();

  // Strict setters shared by the file parser and the command line.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  std::string serialize() const;
  static RunConfig parse(const std::string& text);
  // Applies `text` on top of this config.
  void merge(const std::string& text);

  void validate() const;

  // Derived views.
  std::filesystem::path path_or(const std::string& explicit_path, const char* name) const;
  std::filesystem::path grammar_file() const { return path_or(grammar_path, "grammar.json"); }
  std::filesystem::path train_file() const { return path_or(train_corpus, "train.jsonl"); }
  std::filesystem::path eval_file() const { return path_or(eval_corpus, "eval.jsonl"); }
  std::filesystem::path model_file() const { return path_or(model_path, "model.owlm"); }
  std::filesystem::path calibration_file() const {
    return path_or(calibration_path, "calibration.json");
  }

  SceneGrammar grammar() const;
  ModelConfig model_config(const SceneGrammar& grammar) const;
  TrainOptions train_options() const;
  DecodeOptions decode_options() const;
  InterventionConfig intervention() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

}  // namespace owl::cli
