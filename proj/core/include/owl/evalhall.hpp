#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "owl/decode.hpp"
#include "owl/scene.hpp"

namespace owl {

struct ChairResult {
  Real chair_s = 0.0;
  Real chair_i = 0.0;
  Real avg_len = 0.0;
  std::size_t n_captions = 0;
  std::size_t mentioned = 0;
  std::size_t hallucinated = 0;
  bool no_mentions = false;  // chair_i forced to 0 because nothing was mentioned
};

enum class ChairPooling { kPooled, kPerCaption };

// chair_i = sum |hallucinated| / sum |mentioned| (pooled) or the mean of
// per-caption ratios over captions with mentions (kPerCaption).
// chair_s = captions with >= 1 hallucination / n. Length excludes EOS.
ChairResult chair(std::span<const CaptionRecord> records,
                  ChairPooling pooling = ChairPooling::kPooled);

enum class PopeSetting { kRandom, kPopular, kAdversarial };
const char* to_string(PopeSetting s);
PopeSetting pope_setting_from_string(const std::string& s);

struct PopeQuery {
  std::size_t scene_index = 0;  // index into the corpus
  std::uint64_t scene_id = 0;
  int object = -1;
  bool label = false;  // true = object present
};

struct PopeSplit {
  PopeSetting setting = PopeSetting::kRandom;
  std::vector<PopeQuery> queries;
  std::size_t skipped_scenes = 0;
};

// Positives are every present object; each scene gets as many negatives:
// random (uniform over absent), popular (most frequent objects corpus-wide),
// adversarial (highest corpus co-occurrence with the present objects).
PopeSplit pope_build_split(const std::vector<CorpusEntry>& corpus, std::size_t object_count,
                           PopeSetting setting, std::uint64_t seed);

struct PopeAnswer {
  bool yes = false;
  bool flagged = false;  // model answered neither yes nor no
  int token = -1;
};

// Asks "is there a <object> in the image ?" and decodes one token with the
// given strategy.
PopeAnswer pope_probe(const Model& model, const Scene& scene, int object,
                      const SceneGrammar& grammar, Strategy strategy,
                      const CalibrationTable* table, const DecodeOptions& options);

struct PopeResult {
  PopeSetting setting = PopeSetting::kRandom;
  Real accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
  Real yes_ratio = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0, flagged = 0;
};

PopeResult pope_score(PopeSetting setting, std::span<const PopeQuery> queries,
                      std::span<const PopeAnswer> answers);

// 2 * [h_before > h_after] - 1.
int psi(Real h_before, Real h_after);

// Per-caption hallucination score: |hallucinated| / |mentioned| (0 when
// nothing is mentioned).
Real caption_hallucination(const CaptionRecord& record);

struct TcePair {
  CaptionRecord baseline;
  CaptionRecord intervened;
};

Real tce(std::span<const TcePair> pairs);

}  // namespace owl
