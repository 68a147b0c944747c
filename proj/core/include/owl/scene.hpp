#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "owl/model.hpp"
#include "owl/rng.hpp"
#include "owl/tensor.hpp"

namespace owl {

// Token layout: fixed template words, then attributes, then objects.
class Vocabulary {
 public:
  static constexpr int kBos = 0, kEos = 1, kDescribe = 2, kA = 3, kPhoto = 4, kOf = 5,
                       kAnd = 6, kIs = 7, kThere = 8, kIn = 9, kThe = 10, kImage = 11,
                       kQuestion = 12, kYes = 13, kNo = 14;
  static constexpr int kTemplateCount = 15;

  Vocabulary(const std::vector<std::string>& attributes, const std::vector<std::string>& objects);

  std::size_t size() const { return tokens_.size(); }
  const std::string& text(int id) const;
  int id(const std::string& token) const;  // throws on unknown tokens
  const std::vector<std::string>& tokens() const { return tokens_; }

  int attribute_token(std::size_t attribute) const;
  int object_token(std::size_t object) const;
  // Object index of a token id, or -1 if it is not an object noun.
  int object_of(int token) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::size_t attribute_count_;
  std::size_t object_count_;
};

struct SceneGrammar {
  std::vector<std::string> objects;
  std::vector<std::string> attributes;
  Matrix cooccurrence;             // C[o1][o2], symmetric, unit diagonal
  double bias = 0.8;               // b
  double hallucination_rate = 0.3; // h, used by biased_caption in training corpora
  double feature_noise = 0.1;      // sigma of per-slot Gaussian noise
  double attribute_prob = 0.2;     // chance an object mention carries an attribute
  std::size_t visual_slots = 8;
  std::size_t max_objects = 5;
  std::uint64_t embedding_seed = 1;
  double embedding_jitter = 0.1;

  // 24 objects in 12 strongly co-occurring pairs with weaker links between
  // neighbouring pairs.
  static SceneGrammar default_grammar();

  void validate() const;
  std::size_t object_count() const { return objects.size(); }
  Vocabulary vocabulary() const;
  // Per-object feature vectors: one-hot plus a fixed seeded Gaussian jitter.
  Matrix object_embeddings() const;
  int object_index(const std::string& name) const;  // -1 if unknown
};

struct Scene {
  std::uint64_t id = 0;
  std::vector<int> present;  // sorted object indices
  Matrix features;           // visual_slots x object_count

  bool contains(int object) const;
};

struct CaptionRecord {
  std::uint64_t scene_id = 0;
  std::vector<int> tokens;        // caption only, ends with <eos>
  std::vector<int> mentioned;     // sorted object indices
  std::vector<int> hallucinated;  // mentioned - present, sorted
};

// Object count in [1, max_objects]. Objects are added in groups: a candidate
// (uniform, or with probability b drawn proportional to its summed
// co-occurrence with objects already present) together with its closure:
// each group member pulls in every other absent y that passes an independent
// draw with probability b * C[member][y]. Groups that would overflow
// max_objects are rejected (64 attempts). Each visual slot holds
// the mean embedding of the present objects plus N(0, sigma^2) noise.
Scene sample_scene(const SceneGrammar& grammar, Rng& rng, std::uint64_t id = 0);

// "a photo of [attr] X and [attr] Y ... <eos>" over the present objects in a
// seeded order.
std::vector<int> gold_caption(const Scene& scene, const SceneGrammar& grammar, Rng& rng);

// Gold caption; with probability h one absent object is appended, drawn
// proportional to C[p][.] for a uniformly chosen present object p.
CaptionRecord biased_caption(const Scene& scene, const SceneGrammar& grammar, Rng& rng,
                             double hallucination_rate);

std::vector<int> mention_extract(std::span<const int> tokens, const SceneGrammar& grammar);

// Builds a CaptionRecord for generated tokens against the scene's ground truth.
CaptionRecord label_caption(const Scene& scene, std::vector<int> tokens,
                            const SceneGrammar& grammar);

std::vector<int> caption_prompt();
std::vector<int> probe_prompt(const SceneGrammar& grammar, int object);

struct CorpusEntry {
  Scene scene;
  CaptionRecord caption;
};

// Scene i uses Rng(derive_seed(seed, "scene", i)); ids are first_id + i.
std::vector<CorpusEntry> generate_corpus(const SceneGrammar& grammar, std::uint64_t seed,
                                         std::size_t size, double hallucination_rate,
                                         std::uint64_t first_id = 0);

// Caption example plus two presence probes (one positive, one negative) per
// scene, answered from ground truth.
std::vector<TrainingExample> training_examples(const std::vector<CorpusEntry>& corpus,
                                               const SceneGrammar& grammar,
                                               std::uint64_t seed);

// JSON / JSONL
std::string grammar_to_json(const SceneGrammar& grammar);
SceneGrammar grammar_from_json(const std::string& text);
std::string corpus_to_jsonl(const std::vector<CorpusEntry>& corpus, const SceneGrammar& grammar);
std::vector<CorpusEntry> corpus_from_jsonl(const std::string& text, const SceneGrammar& grammar);

}  // namespace owl
