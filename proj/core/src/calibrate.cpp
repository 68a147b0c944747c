#include "owl/calibrate.hpp"

#include <nlohmann/json.hpp>

#include "owl/decode.hpp"
#include "owl/error.hpp"
#include "owl/parallel.hpp"
#include "owl/rng.hpp"

namespace owl {

LayerSamples collect_hallucinated_vtacr(const Model& model, const std::vector<CorpusEntry>& corpus,
                                        const SceneGrammar& grammar) {
  return collect_hallucinated_vtacr(model, corpus, grammar, CollectOptions{});
}

LayerSamples collect_hallucinated_vtacr(const Model& model, const std::vector<CorpusEntry>& corpus,
                                        const SceneGrammar& grammar, const CollectOptions& options) {
  require(!corpus.empty(), ErrorKind::kInvalidArgument, "calibration corpus is empty");
  require(options.decoder != Strategy::kDcd && options.decoder != Strategy::kVisualPath &&
              options.decoder != Strategy::kTextPath,
          ErrorKind::kInvalidArgument, "collector decoder must be a baseline strategy");
  const Vocabulary vocab = grammar.vocabulary();
  const std::size_t layers = model.config().layers;

  std::vector<LayerSamples> per_scene(corpus.size(), LayerSamples(layers));
  parallel_for(corpus.size(), options.threads, [&](std::size_t i) {
    const Scene& scene = corpus[i].scene;
    DecodeOptions opts;
    opts.max_len = options.max_len;
    opts.seed = derive_seed(options.seed, "collect", scene.id);
    const DecodeOutcome out =
        decode(options.decoder, model, {scene.features, caption_prompt()}, nullptr, opts);
    for (const auto& step : out.steps) {
      const int object = vocab.object_of(step.token);
      if (object < 0 || scene.contains(object)) continue;
      for (std::size_t l = 0; l < layers; ++l) {
        if (const auto& r = step.profile.layers[l].ratio) per_scene[i][l].push_back(*r);
      }
    }
  });

  LayerSamples merged(layers);
  for (const auto& s : per_scene) {
    for (std::size_t l = 0; l < layers; ++l) merged[l].insert(merged[l].end(), s[l].begin(), s[l].end());
  }
  std::size_t total = 0;
  for (const auto& l : merged) total += l.size();
  require(total > 0, ErrorKind::kDegenerate,
          "no hallucinated tokens found during calibration; train the testbed model on a corpus "
          "with stronger co-occurrence bias or hallucination rate");
  return merged;
}

CalibrationTable fit_base_scores(const LayerSamples& samples, Real tau_pct, std::size_t min_samples) {
  require(!samples.empty(), ErrorKind::kInvalidArgument, "no layers to calibrate");
  CalibrationTable table;
  table.tau_pct = tau_pct;
  table.min_samples = min_samples;
  for (std::size_t l = 0; l < samples.size(); ++l) {
    require(!samples[l].empty(), ErrorKind::kInvalidArgument,
            "layer " + std::to_string(l) + " has no VTACR samples");
    table.layers.push_back({l, percentile(samples[l], tau_pct), samples[l].size()});
    if (samples[l].size() < min_samples) table.reliable = false;
  }
  return table;
}

std::string calibration_to_json(const CalibrationTable& table) {
  nlohmann::ordered_json j;
  j["version"] = CalibrationTable::kVersion;
  j["tau_pct"] = table.tau_pct;
  auto& layers = j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : table.layers) {
    layers.push_back({{"layer", l.layer}, {"v_b", l.base_score}, {"n_samples", l.samples}});
  }
  j["min_samples"] = table.min_samples;
  j["reliable"] = table.reliable;
  j["model_hash"] = table.model_hash;
  j["corpus_hash"] = table.corpus_hash;
  return j.dump(2) + "\n";
}

CalibrationTable calibration_from_json(const std::string& text) {
  CalibrationTable t;
  try {
    const auto j = nlohmann::json::parse(text);
    require(j.at("version").get<int>() == CalibrationTable::kVersion, ErrorKind::kIntegrity,
            "unsupported calibration version");
    t.tau_pct = j.at("tau_pct").get<Real>();
    for (const auto& l : j.at("layers")) {
      t.layers.push_back({l.at("layer").get<std::size_t>(), l.at("v_b").get<Real>(),
                          l.at("n_samples").get<std::size_t>()});
    }
    t.min_samples = j.value("min_samples", std::size_t{50});
    t.reliable = j.value("reliable", true);
    t.model_hash = j.at("model_hash").get<std::string>();
    t.corpus_hash = j.at("corpus_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIntegrity, std::string("malformed calibration JSON: ") + e.what());
  }
  for (std::size_t i = 0; i < t.layers.size(); ++i) {
    require(t.layers[i].layer == i && t.layers[i].base_score >= 0.0, ErrorKind::kIntegrity,
            "calibration layers must be ordered with V_b >= 0");
  }
  return t;
}

}  // namespace owl
