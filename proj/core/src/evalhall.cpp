#include "owl/evalhall.hpp"

#include <algorithm>
#include <numeric>

#include "owl/error.hpp"
#include "owl/rng.hpp"

namespace owl {

ChairResult chair(std::span<const CaptionRecord> records, ChairPooling pooling) {
  require(!records.empty(), ErrorKind::kInvalidArgument, "CHAIR needs at least one caption");
  ChairResult r;
  r.n_captions = records.size();
  std::size_t with_halluc = 0, tokens = 0, scored = 0;
  Real ratio_sum = 0.0;
  for (const auto& rec : records) {
    r.mentioned += rec.mentioned.size();
    r.hallucinated += rec.hallucinated.size();
    if (!rec.hallucinated.empty()) ++with_halluc;
    tokens += (!rec.tokens.empty() && rec.tokens.back() == Vocabulary::kEos) ? rec.tokens.size() - 1
                                                                            : rec.tokens.size();
    if (!rec.mentioned.empty()) {
      ratio_sum += static_cast<Real>(rec.hallucinated.size()) / static_cast<Real>(rec.mentioned.size());
      ++scored;
    }
  }
  const auto n = static_cast<Real>(records.size());
  r.chair_s = static_cast<Real>(with_halluc) / n;
  r.avg_len = static_cast<Real>(tokens) / n;
  if (r.mentioned == 0) {
    r.no_mentions = true;
    r.chair_i = 0.0;
  } else if (pooling == ChairPooling::kPooled) {
    r.chair_i = static_cast<Real>(r.hallucinated) / static_cast<Real>(r.mentioned);
  } else {
    r.chair_i = ratio_sum / static_cast<Real>(scored);
  }
  return r;
}

const char* to_string(PopeSetting s) {
  switch (s) {
    case PopeSetting::kRandom: return "random";
    case PopeSetting::kPopular: return "popular";
    case PopeSetting::kAdversarial: return "adversarial";
  }
  return "unknown";
}

PopeSetting pope_setting_from_string(const std::string& s) {
  for (PopeSetting p : {PopeSetting::kRandom, PopeSetting::kPopular, PopeSetting::kAdversarial}) {
    if (s == to_string(p)) return p;
  }
  fail(ErrorKind::kInvalidArgument, "unknown POPE setting '" + s + "'");
}

PopeSplit pope_build_split(const std::vector<CorpusEntry>& corpus, std::size_t object_count,
                           PopeSetting setting, std::uint64_t seed) {
  require(!corpus.empty(), ErrorKind::kInvalidArgument, "POPE split needs a non-empty corpus");
  std::vector<std::size_t> freq(object_count, 0);
  Matrix cooc(object_count, object_count);
  for (const auto& e : corpus) {
    for (int a : e.scene.present) {
      ++freq[static_cast<std::size_t>(a)];
      for (int b : e.scene.present) {
        if (a != b) cooc(static_cast<std::size_t>(a), static_cast<std::size_t>(b)) += 1.0;
      }
    }
  }

  PopeSplit split;
  split.setting = setting;
  for (std::size_t si = 0; si < corpus.size(); ++si) {
    const Scene& scene = corpus[si].scene;
    std::vector<int> absent;
    for (std::size_t o = 0; o < object_count; ++o) {
      if (!scene.contains(static_cast<int>(o))) absent.push_back(static_cast<int>(o));
    }
    if (absent.empty()) {
      ++split.skipped_scenes;
      continue;
    }
    const std::size_t k = std::min(scene.present.size(), absent.size());
    std::vector<int> negatives;
    switch (setting) {
      case PopeSetting::kRandom: {
        Rng rng(derive_seed(seed, "pope-random", scene.id));
        for (std::size_t i = 0; i < k; ++i) {
          const std::size_t j = i + rng.uniform_int(absent.size() - i);
          std::swap(absent[i], absent[j]);
          negatives.push_back(absent[i]);
        }
        break;
      }
      case PopeSetting::kPopular:
        std::stable_sort(absent.begin(), absent.end(), [&](int a, int b) {
          return freq[static_cast<std::size_t>(a)] > freq[static_cast<std::size_t>(b)];
        });
        negatives.assign(absent.begin(), absent.begin() + static_cast<std::ptrdiff_t>(k));
        break;
      case PopeSetting::kAdversarial: {
        std::vector<Real> score(object_count, 0.0);
        for (int a : absent) {
          for (int p : scene.present) {
            score[static_cast<std::size_t>(a)] += cooc(static_cast<std::size_t>(p), static_cast<std::size_t>(a));
          }
        }
        std::stable_sort(absent.begin(), absent.end(), [&](int a, int b) {
          return score[static_cast<std::size_t>(a)] > score[static_cast<std::size_t>(b)];
        });
        negatives.assign(absent.begin(), absent.begin() + static_cast<std::ptrdiff_t>(k));
        break;
      }
    }
    for (std::size_t i = 0; i < k; ++i) {
      split.queries.push_back({si, scene.id, scene.present[i], true});
      split.queries.push_back({si, scene.id, negatives[i], false});
    }
  }
  return split;
}

PopeAnswer pope_probe(const Model& model, const Scene& scene, int object,
                      const SceneGrammar& grammar, Strategy strategy,
                      const CalibrationTable* table, const DecodeOptions& options) {
  DecodeOptions opts = options;
  opts.max_len = 1;
  const DecodeOutcome out =
      decode(strategy, model, {scene.features, probe_prompt(grammar, object)}, table, opts);
  PopeAnswer a;
  a.token = out.tokens.front();
  a.yes = a.token == Vocabulary::kYes;
  a.flagged = a.token != Vocabulary::kYes && a.token != Vocabulary::kNo;
  return a;
}

PopeResult pope_score(PopeSetting setting, std::span<const PopeQuery> queries,
                      std::span<const PopeAnswer> answers) {
  require(queries.size() == answers.size(), ErrorKind::kDimensionMismatch,
          "POPE answers do not match queries");
  require(!queries.empty(), ErrorKind::kInvalidArgument, "POPE scoring needs queries");
  PopeResult r;
  r.setting = setting;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const bool yes = answers[i].yes;
    if (answers[i].flagged) ++r.flagged;
    if (queries[i].label) {
      yes ? ++r.tp : ++r.fn;
    } else {
      yes ? ++r.fp : ++r.tn;
    }
  }
  const auto n = static_cast<Real>(queries.size());
  r.accuracy = static_cast<Real>(r.tp + r.tn) / n;
  r.precision = (r.tp + r.fp) == 0 ? 0.0 : static_cast<Real>(r.tp) / static_cast<Real>(r.tp + r.fp);
  r.recall = (r.tp + r.fn) == 0 ? 0.0 : static_cast<Real>(r.tp) / static_cast<Real>(r.tp + r.fn);
  r.f1 = (r.precision + r.recall) == 0.0 ? 0.0
                                         : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  r.yes_ratio = static_cast<Real>(r.tp + r.fp) / n;
  return r;
}

int psi(Real h_before, Real h_after) { return h_before > h_after ? 1 : -1; }

Real caption_hallucination(const CaptionRecord& record) {
  if (record.mentioned.empty()) return 0.0;
  return static_cast<Real>(record.hallucinated.size()) / static_cast<Real>(record.mentioned.size());
}

Real tce(std::span<const TcePair> pairs) {
  require(!pairs.empty(), ErrorKind::kInvalidArgument, "TCE needs at least one pair");
  long total = 0;
  for (const auto& p : pairs) {
    total += psi(caption_hallucination(p.baseline), caption_hallucination(p.intervened));
  }
  return static_cast<Real>(total) / static_cast<Real>(pairs.size());
}

}  // namespace owl
