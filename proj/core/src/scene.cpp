#include "owl/scene.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "owl/error.hpp"

namespace owl {
namespace {

using json = nlohmann::ordered_json;

const std::vector<std::string>& template_words() {
  static const std::vector<std::string> words = {
      "<bos>", "<eos>", "describe", "a",     "photo", "of",  "and", "is",
      "there", "in",    "the",      "image", "?",     "yes", "no"};
  return words;
}

// Samples an index with probability proportional to weights (all >= 0,
// positive total).
std::size_t sample_weighted(Rng& rng, std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  std::size_t last = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last = i;
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return last;
}

std::vector<int> absent_objects(const std::vector<char>& present_mask) {
  std::vector<int> out;
  for (std::size_t i = 0; i < present_mask.size(); ++i) {
    if (!present_mask[i]) out.push_back(static_cast<int>(i));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(const std::vector<std::string>& attributes,
                       const std::vector<std::string>& objects)
    : attribute_count_(attributes.size()), object_count_(objects.size()) {
  tokens_ = template_words();
  tokens_.insert(tokens_.end(), attributes.begin(), attributes.end());
  tokens_.insert(tokens_.end(), objects.begin(), objects.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const bool fresh = index_.emplace(tokens_[i], static_cast<int>(i)).second;
    require(fresh, ErrorKind::kInvalidArgument, "duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

const std::string& Vocabulary::text(int id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(), ErrorKind::kInvalidArgument,
          "token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::id(const std::string& token) const {
  const auto it = index_.find(token);
  require(it != index_.end(), ErrorKind::kInvalidArgument, "unknown token '" + token + "'");
  return it->second;
}

int Vocabulary::attribute_token(std::size_t attribute) const {
  return kTemplateCount + static_cast<int>(attribute);
}

int Vocabulary::object_token(std::size_t object) const {
  return kTemplateCount + static_cast<int>(attribute_count_ + object);
}

int Vocabulary::object_of(int token) const {
  const int first = kTemplateCount + static_cast<int>(attribute_count_);
  if (token < first || token >= first + static_cast<int>(object_count_)) return -1;
  return token - first;
}

// ---------------------------------------------------------------------------
// Grammar

SceneGrammar SceneGrammar::default_grammar() {
  SceneGrammar g;
  g.objects = {"dog",  "frisbee", "cat",    "sofa",   "fork",   "knife",
               "cup",  "saucer",  "car",    "road",   "boat",   "water",
               "bird", "tree",    "horse",  "saddle", "pizza",  "oven",
               "laptop", "mouse", "kite",   "beach",  "clock",  "tower"};
  g.attributes = {"red", "blue", "green", "small", "large", "old"};
  const std::size_t n = g.objects.size();
  g.cooccurrence = Matrix(n, n, 0.02);
  const auto link = [&](std::size_t a, std::size_t b, double v) {
    g.cooccurrence(a, b) = v;
    g.cooccurrence(b, a) = v;
  };
  for (std::size_t p = 0; p < n / 2; ++p) {
    link(2 * p, 2 * p + 1, 0.8);
    link(2 * p + 1, (2 * p + 2) % n, 0.2);
  }
  for (std::size_t i = 0; i < n; ++i) g.cooccurrence(i, i) = 1.0;
  return g;
}

void SceneGrammar::validate() const {
  const std::size_t n = objects.size();
  require(n >= 2, ErrorKind::kInvalidArgument, "grammar needs at least two objects");
  require(cooccurrence.rows() == n && cooccurrence.cols() == n, ErrorKind::kDimensionMismatch,
          "co-occurrence matrix must be objects x objects");
  for (std::size_t i = 0; i < n; ++i) {
    require(cooccurrence(i, i) == 1.0, ErrorKind::kInvalidArgument,
            "co-occurrence diagonal must be 1");
    for (std::size_t j = 0; j < n; ++j) {
      const double c = cooccurrence(i, j);
      require(c >= 0.0 && c <= 1.0, ErrorKind::kInvalidArgument,
              "co-occurrence entries must lie in [0,1]");
      require(c == cooccurrence(j, i), ErrorKind::kInvalidArgument,
              "co-occurrence matrix must be symmetric");
    }
  }
  require(bias >= 0.0 && bias <= 1.0, ErrorKind::kInvalidArgument, "bias must lie in [0,1]");
  require(hallucination_rate >= 0.0 && hallucination_rate <= 1.0, ErrorKind::kInvalidArgument,
          "hallucination rate must lie in [0,1]");
  require(feature_noise >= 0.0, ErrorKind::kInvalidArgument, "feature noise must be >= 0");
  require(attribute_prob >= 0.0 && attribute_prob <= 1.0, ErrorKind::kInvalidArgument,
          "attribute probability must lie in [0,1]");
  require(visual_slots >= 1, ErrorKind::kInvalidArgument, "need at least one visual slot");
  require(max_objects >= 1 && max_objects < n, ErrorKind::kInvalidArgument,
          "max_objects must lie in [1, objects)");
}

Vocabulary SceneGrammar::vocabulary() const { return Vocabulary(attributes, objects); }

Matrix SceneGrammar::object_embeddings() const {
  const std::size_t n = objects.size();
  Matrix e(n, n);
  Rng rng(embedding_seed);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      e(i, j) = (i == j ? 1.0 : 0.0) + embedding_jitter * rng.normal();
    }
  }
  return e;
}

int SceneGrammar::object_index(const std::string& name) const {
  const auto it = std::find(objects.begin(), objects.end(), name);
  return it == objects.end() ? -1 : static_cast<int>(it - objects.begin());
}

bool Scene::contains(int object) const {
  return std::binary_search(present.begin(), present.end(), object);
}

// ---------------------------------------------------------------------------
// Sampling

Scene sample_scene(const SceneGrammar& grammar, Rng& rng, std::uint64_t id) {
  const std::size_t n = grammar.object_count();
  Scene scene;
  scene.id = id;
  const std::size_t target = 1 + rng.uniform_int(grammar.max_objects);
  std::vector<char> mask(n, 0);
  std::size_t count = 0;
  std::vector<double> weights(n);
  std::vector<int> fallback;  // smallest closed group that fits on its own

  for (int attempt = 0; attempt < 64 && count < target; ++attempt) {
    const std::vector<int> absent = absent_objects(mask);
    int candidate = -1;
    if (count > 0 && rng.bernoulli(grammar.bias)) {
      weights.assign(absent.size(), 0.0);
      double total = 0.0;
      for (std::size_t a = 0; a < absent.size(); ++a) {
        for (std::size_t p = 0; p < n; ++p) {
          if (mask[p]) weights[a] += grammar.cooccurrence(p, static_cast<std::size_t>(absent[a]));
        }
        total += weights[a];
      }
      if (total > 0.0) {
        candidate = absent[sample_weighted(rng, std::span<const double>(weights.data(), absent.size()))];
      }
    }
    if (candidate < 0) candidate = absent[rng.uniform_int(absent.size())];

    // Closure: every member pulls in each outside absent object with
    // probability b * C[member][y].
    std::vector<char> in_group(n, 0);
    std::vector<int> group = {candidate};
    in_group[static_cast<std::size_t>(candidate)] = 1;
    for (std::size_t g = 0; g < group.size(); ++g) {
      for (int y : absent) {
        if (in_group[static_cast<std::size_t>(y)]) continue;
        const double p = grammar.bias * grammar.cooccurrence(static_cast<std::size_t>(group[g]),
                                                             static_cast<std::size_t>(y));
        if (rng.uniform() < p) {
          in_group[static_cast<std::size_t>(y)] = 1;
          group.push_back(y);
        }
      }
    }
    if (count + group.size() > grammar.max_objects) {
      if (count == 0 && group.size() <= grammar.max_objects &&
          (fallback.empty() || group.size() < fallback.size())) {
        fallback = group;
      }
      continue;
    }
    for (int o : group) mask[static_cast<std::size_t>(o)] = 1;
    count += group.size();
  }
  if (count == 0) {
    if (fallback.empty()) fallback = {static_cast<int>(rng.uniform_int(n))};
    for (int o : fallback) mask[static_cast<std::size_t>(o)] = 1;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i]) scene.present.push_back(static_cast<int>(i));
  }

  const Matrix emb = grammar.object_embeddings();
  scene.features = Matrix(grammar.visual_slots, n);
  const double inv = 1.0 / static_cast<double>(scene.present.size());
  for (std::size_t s = 0; s < grammar.visual_slots; ++s) {
    auto row = scene.features.row(s);
    for (int o : scene.present) {
      const auto e = emb.row(static_cast<std::size_t>(o));
      for (std::size_t j = 0; j < n; ++j) row[j] += e[j] * inv;
    }
    for (auto& v : row) v += grammar.feature_noise * rng.normal();
  }
  return scene;
}

std::vector<int> gold_caption(const Scene& scene, const SceneGrammar& grammar, Rng& rng) {
  const Vocabulary vocab = grammar.vocabulary();
  std::vector<int> order = scene.present;
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.uniform_int(i)]);
  }
  std::vector<int> tokens = {Vocabulary::kA, Vocabulary::kPhoto, Vocabulary::kOf};
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i > 0) tokens.push_back(Vocabulary::kAnd);
    if (!grammar.attributes.empty() && rng.bernoulli(grammar.attribute_prob)) {
      tokens.push_back(vocab.attribute_token(rng.uniform_int(grammar.attributes.size())));
    }
    tokens.push_back(vocab.object_token(static_cast<std::size_t>(order[i])));
  }
  tokens.push_back(Vocabulary::kEos);
  return tokens;
}

CaptionRecord biased_caption(const Scene& scene, const SceneGrammar& grammar, Rng& rng,
                             double hallucination_rate) {
  require(hallucination_rate >= 0.0 && hallucination_rate <= 1.0, ErrorKind::kInvalidArgument,
          "hallucination rate must lie in [0,1]");
  std::vector<int> tokens = gold_caption(scene, grammar, rng);
  if (rng.bernoulli(hallucination_rate)) {
    const std::size_t n = grammar.object_count();
    std::vector<char> mask(n, 0);
    for (int o : scene.present) mask[static_cast<std::size_t>(o)] = 1;
    const std::vector<int> absent = absent_objects(mask);
    if (!absent.empty()) {
      const int anchor = scene.present[rng.uniform_int(scene.present.size())];
      std::vector<double> weights(absent.size());
      double total = 0.0;
      for (std::size_t a = 0; a < absent.size(); ++a) {
        weights[a] = grammar.cooccurrence(static_cast<std::size_t>(anchor),
                                          static_cast<std::size_t>(absent[a]));
        total += weights[a];
      }
      const int extra = total > 0.0 ? absent[sample_weighted(rng, weights)]
                                    : absent[rng.uniform_int(absent.size())];
      const Vocabulary vocab = grammar.vocabulary();
      tokens.pop_back();
      tokens.push_back(Vocabulary::kAnd);
      tokens.push_back(vocab.object_token(static_cast<std::size_t>(extra)));
      tokens.push_back(Vocabulary::kEos);
    }
  }
  return label_caption(scene, std::move(tokens), grammar);
}

std::vector<int> mention_extract(std::span<const int> tokens, const SceneGrammar& grammar) {
  const Vocabulary vocab = grammar.vocabulary();
  std::vector<int> out;
  for (int t : tokens) {
    const int o = vocab.object_of(t);
    if (o >= 0) out.push_back(o);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

CaptionRecord label_caption(const Scene& scene, std::vector<int> tokens,
                            const SceneGrammar& grammar) {
  CaptionRecord rec;
  rec.scene_id = scene.id;
  rec.mentioned = mention_extract(tokens, grammar);
  for (int o : rec.mentioned) {
    if (!scene.contains(o)) rec.hallucinated.push_back(o);
  }
  rec.tokens = std::move(tokens);
  return rec;
}

std::vector<int> caption_prompt() { return {Vocabulary::kBos, Vocabulary::kDescribe}; }

std::vector<int> probe_prompt(const SceneGrammar& grammar, int object) {
  require(object >= 0 && static_cast<std::size_t>(object) < grammar.object_count(),
          ErrorKind::kInvalidArgument,
          "probe object " + std::to_string(object) + " not in the grammar");
  const Vocabulary vocab = grammar.vocabulary();
  return {Vocabulary::kBos, Vocabulary::kIs,  Vocabulary::kThere,
          Vocabulary::kA,   vocab.object_token(static_cast<std::size_t>(object)),
          Vocabulary::kIn,  Vocabulary::kThe, Vocabulary::kImage,
          Vocabulary::kQuestion};
}

std::vector<CorpusEntry> generate_corpus(const SceneGrammar& grammar, std::uint64_t seed,
                                         std::size_t size, double hallucination_rate,
                                         std::uint64_t first_id) {
  grammar.validate();
  std::vector<CorpusEntry> out(size);
  for (std::size_t i = 0; i < size; ++i) {
    Rng rng(derive_seed(seed, "scene", i));
    out[i].scene = sample_scene(grammar, rng, first_id + i);
    out[i].caption = biased_caption(out[i].scene, grammar, rng, hallucination_rate);
  }
  return out;
}

std::vector<TrainingExample> training_examples(const std::vector<CorpusEntry>& corpus,
                                               const SceneGrammar& grammar,
                                               std::uint64_t seed) {
  std::vector<TrainingExample> out;
  out.reserve(corpus.size() * 3);
  const std::size_t n = grammar.object_count();
  const auto add = [&](const Matrix& features, std::vector<int> prompt,
                       const std::vector<int>& continuation) {
    std::vector<int> seq = std::move(prompt);
    const std::size_t first_target = seq.size();
    seq.insert(seq.end(), continuation.begin(), continuation.end());
    TrainingExample ex;
    ex.features = features;
    ex.input.assign(seq.begin(), seq.end() - 1);
    ex.target.assign(ex.input.size(), -1);
    for (std::size_t i = first_target; i < seq.size(); ++i) ex.target[i - 1] = seq[i];
    out.push_back(std::move(ex));
  };
  for (const auto& entry : corpus) {
    const Scene& s = entry.scene;
    add(s.features, caption_prompt(), entry.caption.tokens);

    Rng rng(derive_seed(seed, "probe", s.id));
    const int positive = s.present[rng.uniform_int(s.present.size())];
    add(s.features, probe_prompt(grammar, positive), {Vocabulary::kYes, Vocabulary::kEos});

    std::vector<char> mask(n, 0);
    for (int o : s.present) mask[static_cast<std::size_t>(o)] = 1;
    const std::vector<int> absent = absent_objects(mask);
    int negative = absent[rng.uniform_int(absent.size())];
    if (rng.bernoulli(0.5)) {
      std::vector<double> w(absent.size(), 0.0);
      double total = 0.0;
      for (std::size_t a = 0; a < absent.size(); ++a) {
        for (int o : s.present) {
          w[a] += grammar.cooccurrence(static_cast<std::size_t>(o), static_cast<std::size_t>(absent[a]));
        }
        total += w[a];
      }
      if (total > 0.0) negative = absent[sample_weighted(rng, w)];
    }
    add(s.features, probe_prompt(grammar, negative), {Vocabulary::kNo, Vocabulary::kEos});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

std::string grammar_to_json(const SceneGrammar& g) {
  json j;
  j["version"] = 1;
  j["vocab"] = g.vocabulary().tokens();
  j["objects"] = g.objects;
  j["attributes"] = g.attributes;
  json c = json::array();
  for (std::size_t r = 0; r < g.cooccurrence.rows(); ++r) {
    const auto row = g.cooccurrence.row(r);
    c.push_back(std::vector<double>(row.begin(), row.end()));
  }
  j["cooccurrence"] = std::move(c);
  j["b"] = g.bias;
  j["h"] = g.hallucination_rate;
  j["feature_noise"] = g.feature_noise;
  j["attribute_prob"] = g.attribute_prob;
  j["visual_slots"] = g.visual_slots;
  j["max_objects"] = g.max_objects;
  j["embedding_seed"] = g.embedding_seed;
  j["embedding_jitter"] = g.embedding_jitter;
  return j.dump(2) + "\n";
}

SceneGrammar grammar_from_json(const std::string& text) {
  SceneGrammar g;
  try {
    const json j = json::parse(text);
    require(j.at("version").get<int>() == 1, ErrorKind::kIntegrity, "unsupported grammar version");
    g.objects = j.at("objects").get<std::vector<std::string>>();
    g.attributes = j.at("attributes").get<std::vector<std::string>>();
    const auto rows = j.at("cooccurrence").get<std::vector<std::vector<double>>>();
    g.cooccurrence = Matrix(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      require(rows[r].size() == g.cooccurrence.cols(), ErrorKind::kDimensionMismatch,
              "ragged co-occurrence matrix");
      std::copy(rows[r].begin(), rows[r].end(), g.cooccurrence.row(r).begin());
    }
    g.bias = j.at("b").get<double>();
    g.hallucination_rate = j.at("h").get<double>();
    g.feature_noise = j.at("feature_noise").get<double>();
    g.attribute_prob = j.at("attribute_prob").get<double>();
    g.visual_slots = j.at("visual_slots").get<std::size_t>();
    g.max_objects = j.at("max_objects").get<std::size_t>();
    g.embedding_seed = j.at("embedding_seed").get<std::uint64_t>();
    g.embedding_jitter = j.at("embedding_jitter").get<double>();
    if (j.contains("vocab")) {
      require(j.at("vocab").get<std::vector<std::string>>() == g.vocabulary().tokens(),
              ErrorKind::kIntegrity, "grammar vocab does not match its objects/attributes");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIntegrity, std::string("malformed grammar JSON: ") + e.what());
  }
  g.validate();
  return g;
}

std::string corpus_to_jsonl(const std::vector<CorpusEntry>& corpus, const SceneGrammar& grammar) {
  const Vocabulary vocab = grammar.vocabulary();
  std::string out;
  for (const auto& e : corpus) {
    json j;
    j["scene_id"] = e.scene.id;
    auto names = [&](const std::vector<int>& ids) {
      std::vector<std::string> v;
      for (int o : ids) v.push_back(grammar.objects[static_cast<std::size_t>(o)]);
      return v;
    };
    j["present"] = names(e.scene.present);
    std::vector<std::string> toks;
    for (int t : e.caption.tokens) toks.push_back(vocab.text(t));
    j["caption_tokens"] = toks;
    j["hallucinated"] = names(e.caption.hallucinated);
    json feats = json::array();
    for (std::size_t r = 0; r < e.scene.features.rows(); ++r) {
      const auto row = e.scene.features.row(r);
      feats.push_back(std::vector<double>(row.begin(), row.end()));
    }
    j["features"] = std::move(feats);
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<CorpusEntry> corpus_from_jsonl(const std::string& text, const SceneGrammar& grammar) {
  const Vocabulary vocab = grammar.vocabulary();
  std::vector<CorpusEntry> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      CorpusEntry e;
      e.scene.id = j.at("scene_id").get<std::uint64_t>();
      for (const auto& name : j.at("present").get<std::vector<std::string>>()) {
        const int o = grammar.object_index(name);
        require(o >= 0, ErrorKind::kIntegrity, "unknown object '" + name + "'");
        e.scene.present.push_back(o);
      }
      std::sort(e.scene.present.begin(), e.scene.present.end());
      require(!e.scene.present.empty(), ErrorKind::kIntegrity, "scene with no objects");
      const auto feats = j.at("features").get<std::vector<std::vector<double>>>();
      require(feats.size() == grammar.visual_slots, ErrorKind::kIntegrity,
              "scene feature slot count mismatch");
      e.scene.features = Matrix(feats.size(), grammar.object_count());
      for (std::size_t r = 0; r < feats.size(); ++r) {
        require(feats[r].size() == grammar.object_count(), ErrorKind::kIntegrity,
                "scene feature width mismatch");
        std::copy(feats[r].begin(), feats[r].end(), e.scene.features.row(r).begin());
      }
      std::vector<int> tokens;
      for (const auto& t : j.at("caption_tokens").get<std::vector<std::string>>()) {
        tokens.push_back(vocab.id(t));
      }
      e.caption = label_caption(e.scene, std::move(tokens), grammar);
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorKind::kIntegrity,
           "malformed corpus line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

}  // namespace owl
