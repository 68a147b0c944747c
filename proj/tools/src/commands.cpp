#include "owl_cli/commands.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "owl/calibrate.hpp"
#include "owl/causal.hpp"
#include "owl/checkpoint.hpp"
#include "owl/error.hpp"
#include "owl/evalhall.hpp"
#include "owl/io.hpp"
#include "owl/parallel.hpp"
#include "owl/rng.hpp"

namespace owl::cli {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

struct Workspace {
  SceneGrammar grammar;
  std::string grammar_hash;
};

Workspace load_grammar(const RunConfig& c) {
  const std::string text = read_file(c.grammar_file());
  return {grammar_from_json(text), bytes_fingerprint(text)};
}

struct LoadedCorpus {
  std::vector<CorpusEntry> entries;
  std::string hash;
};

LoadedCorpus load_corpus(const fs::path& path, const SceneGrammar& g) {
  const std::string text = read_file(path);
  return {corpus_from_jsonl(text, g), bytes_fingerprint(text)};
}

Model load_model(const RunConfig& c) { return Model(load_checkpoint(c.model_file())); }

bool needs_calibration(Strategy s) {
  return s == Strategy::kDcd || s == Strategy::kVisualPath || s == Strategy::kTextPath;
}

// Calibration table for intervened strategies (null when T == 0 and no table
// exists). Fingerprint checks happen in decode.
std::optional<CalibrationTable> load_calibration(const RunConfig& c, Strategy s) {
  if (!needs_calibration(s)) return std::nullopt;
  if (c.mod_t == 0.0 && !fs::exists(c.calibration_file())) return std::nullopt;
  CalibrationTable t = calibration_from_json(read_file(c.calibration_file()));
  return t;
}

std::vector<std::string> names(const SceneGrammar& g, const std::vector<int>& ids) {
  std::vector<std::string> out;
  for (int o : ids) out.push_back(g.objects[static_cast<std::size_t>(o)]);
  return out;
}

ojson scm_fragment(Strategy s, const InterventionConfig& cfg) {
  const ScmGraph graph;
  return ojson::parse(scm_manifest_json(graph, strategy_interventions(graph, s, cfg)));
}

std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

struct CaptionRun {
  std::vector<DecodeOutcome> outcomes;
  std::vector<CaptionRecord> records;
};

CaptionRun run_captions(const Model& model, const std::vector<CorpusEntry>& eval,
                        const SceneGrammar& g, Strategy strategy, const CalibrationTable* table,
                        const RunConfig& c, const DecodeOptions& base) {
  CaptionRun run;
  run.outcomes.resize(eval.size());
  run.records.resize(eval.size());
  parallel_for(eval.size(), worker_count(), [&](std::size_t i) {
    DecodeOptions o = base;
    o.seed = derive_seed(c.seed, "decode", eval[i].scene.id);
    run.outcomes[i] = decode(strategy, model, {eval[i].scene.features, caption_prompt()}, table, o);
    run.records[i] = label_caption(eval[i].scene, run.outcomes[i].tokens, g);
  });
  return run;
}

std::string captions_line_tokens(const CaptionRecord& r, const Vocabulary& vocab) {
  nlohmann::json toks = nlohmann::json::array();
  for (int t : r.tokens) toks.push_back(vocab.text(t));
  return toks.dump();
}

std::string captions_jsonl(const CaptionRun& run, const SceneGrammar& g, Strategy s) {
  const Vocabulary vocab = g.vocabulary();
  std::string out;
  for (std::size_t i = 0; i < run.records.size(); ++i) {
    const auto& r = run.records[i];
    std::vector<std::string> toks;
    for (int t : r.tokens) toks.push_back(vocab.text(t));
    ojson j;
    j["scene_id"] = r.scene_id;
    j["strategy"] = to_string(s);
    j["tokens"] = toks;
    j["mentioned"] = names(g, r.mentioned);
    j["hallucinated"] = names(g, r.hallucinated);
    j["forward_passes"] = run.outcomes[i].forward_passes;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<CaptionRecord> read_captions(const fs::path& path, const SceneGrammar& g,
                                         const std::vector<CorpusEntry>& eval) {
  std::map<std::uint64_t, const Scene*> scenes;
  for (const auto& e : eval) scenes[e.scene.id] = &e.scene;
  const Vocabulary vocab = g.vocabulary();
  std::vector<CaptionRecord> out;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto id = j.at("scene_id").get<std::uint64_t>();
      const auto it = scenes.find(id);
      require(it != scenes.end(), ErrorKind::kIntegrity,
              "captions reference scene " + std::to_string(id) + " missing from the eval corpus");
      std::vector<int> toks;
      for (const auto& t : j.at("tokens")) toks.push_back(vocab.id(t.get<std::string>()));
      out.push_back(label_caption(*it->second, std::move(toks), g));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kIntegrity, path.string() + ": " + e.what());
    }
  }
  require(!out.empty(), ErrorKind::kIntegrity, path.string() + " holds no captions");
  return out;
}

ojson chair_json(const ChairResult& r) {
  ojson j;
  j["chair_s"] = r.chair_s;
  j["chair_i"] = r.chair_i;
  j["avg_len"] = r.avg_len;
  j["n_captions"] = r.n_captions;
  j["mentioned"] = r.mentioned;
  j["hallucinated"] = r.hallucinated;
  j["no_mentions_warning"] = r.no_mentions;
  return j;
}

ojson pope_json(const PopeResult& r) {
  ojson j;
  j["setting"] = to_string(r.setting);
  j["accuracy"] = r.accuracy;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["yes_ratio"] = r.yes_ratio;
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["tn"] = r.tn;
  j["fn"] = r.fn;
  j["flagged"] = r.flagged;
  return j;
}

struct PopeRun {
  std::vector<PopeResult> results;
  std::vector<std::string> samples_jsonl;  // per setting
};

PopeRun run_pope(const Model& model, const std::vector<CorpusEntry>& eval, const SceneGrammar& g,
                 Strategy strategy, const CalibrationTable* table, const RunConfig& c,
                 const DecodeOptions& base) {
  PopeRun run;
  for (PopeSetting setting : {PopeSetting::kRandom, PopeSetting::kPopular, PopeSetting::kAdversarial}) {
    const PopeSplit split =
        pope_build_split(eval, g.object_count(), setting, derive_seed(c.seed, "pope"));
    std::vector<PopeAnswer> answers(split.queries.size());
    parallel_for(split.queries.size(), worker_count(), [&](std::size_t i) {
      const auto& q = split.queries[i];
      DecodeOptions o = base;
      o.seed = derive_seed(c.seed, "pope-decode", q.scene_id * 64 + static_cast<std::uint64_t>(q.object));
      answers[i] = pope_probe(model, eval[q.scene_index].scene, q.object, g, strategy, table, o);
    });
    std::string samples;
    for (std::size_t i = 0; i < answers.size(); ++i) {
      const auto& q = split.queries[i];
      ojson j;
      j["setting"] = to_string(setting);
      j["scene_id"] = q.scene_id;
      j["object"] = g.objects[static_cast<std::size_t>(q.object)];
      j["label"] = q.label ? "yes" : "no";
      j["answer"] = answers[i].yes ? "yes" : "no";
      j["flagged"] = answers[i].flagged;
      samples += j.dump() + "\n";
    }
    run.samples_jsonl.push_back(std::move(samples));
    run.results.push_back(pope_score(setting, split.queries, answers));
  }
  return run;
}

void ensure_workdir(const RunConfig& c) { fs::create_directories(c.workdir); }

}  // namespace

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIntegrity: return 2;
    case ErrorKind::kNumeric: return 3;
    default: return 1;
  }
}

fs::path captions_file(const RunConfig& c, const std::string& strategy) {
  return fs::path(c.workdir) / ("captions_" + strategy + ".jsonl");
}

fs::path eval_dir(const RunConfig& c, const std::string& strategy) {
  return fs::path(c.workdir) / "eval" / strategy;
}

void cmd_gen_corpus(const RunConfig& c, std::ostream& out) {
  c.validate();
  ensure_workdir(c);
  const SceneGrammar g = c.grammar();
  const auto train = generate_corpus(g, derive_seed(c.seed, "train"), c.train_size,
                                     g.hallucination_rate, 0);
  // Evaluation captions are gold (h = 0); ids continue after the train split.
  const auto eval = generate_corpus(g, derive_seed(c.seed, "eval"), c.eval_size, 0.0, c.train_size);
  const std::string gtext = grammar_to_json(g);
  const std::string ttext = corpus_to_jsonl(train, g);
  const std::string etext = corpus_to_jsonl(eval, g);
  write_file_atomic(c.grammar_file(), gtext);
  write_file_atomic(c.train_file(), ttext);
  write_file_atomic(c.eval_file(), etext);
  out << "grammar " << c.grammar_file().string() << " " << bytes_fingerprint(gtext) << "\n";
  out << "train   " << c.train_file().string() << " " << bytes_fingerprint(ttext) << " ("
      << train.size() << " scenes)\n";
  out << "eval    " << c.eval_file().string() << " " << bytes_fingerprint(etext) << " ("
      << eval.size() << " scenes)\n";
}

void cmd_train(const RunConfig& c, std::ostream& out) {
  c.validate();
  ensure_workdir(c);
  const Workspace ws = load_grammar(c);
  const LoadedCorpus train = load_corpus(c.train_file(), ws.grammar);
  const auto examples = training_examples(train.entries, ws.grammar, derive_seed(c.seed, "examples"));
  const ModelConfig mc = c.model_config(ws.grammar);
  mc.validate();
  TrainOptions opts = c.train_options();
  opts.threads = worker_count();
  const TrainResult result =
      owl::train(ModelParams::init(mc, derive_seed(c.seed, "init")), examples, opts);
  save_checkpoint(result.params, c.model_file());
  const std::string model_hash = params_fingerprint(result.params);

  ojson log;
  log["model_hash"] = model_hash;
  log["corpus_hash"] = train.hash;
  log["grammar_hash"] = ws.grammar_hash;
  log["examples"] = examples.size();
  log["steps"] = result.loss_trace.size();
  log["initial_loss"] = result.loss_trace.empty() ? 0.0 : result.loss_trace.front();
  log["final_loss"] = result.loss_trace.empty() ? 0.0 : result.loss_trace.back();
  log["loss_trace"] = result.loss_trace;
  write_file_atomic(fs::path(c.workdir) / "train_log.json", dump(log));
  out << "model " << c.model_file().string() << " " << model_hash << " ("
      << result.loss_trace.size() << " steps, loss " << fmt(log["initial_loss"].get<double>())
      << " -> " << fmt(log["final_loss"].get<double>()) << ")\n";
}

void cmd_calibrate(const RunConfig& c, std::ostream& out) {
  c.validate();
  ensure_workdir(c);
  const Workspace ws = load_grammar(c);
  const LoadedCorpus train = load_corpus(c.train_file(), ws.grammar);
  const Model model = load_model(c);
  const std::size_t n = std::min(c.calib_size, train.entries.size());
  const std::vector<CorpusEntry> calib(train.entries.begin(),
                                       train.entries.begin() + static_cast<std::ptrdiff_t>(n));
  CollectOptions opts;
  opts.decoder = strategy_from_string(c.collector);
  opts.max_len = c.max_len;
  opts.seed = derive_seed(c.seed, "collect");
  opts.threads = worker_count();
  const LayerSamples samples = collect_hallucinated_vtacr(model, calib, ws.grammar, opts);
  CalibrationTable table = fit_base_scores(samples, c.tau_pct);
  table.model_hash = model.fingerprint();
  table.corpus_hash = train.hash;
  write_file_atomic(c.calibration_file(), calibration_to_json(table));
  out << "calibration " << c.calibration_file().string() << " tau_pct=" << c.tau_pct;
  for (const auto& l : table.layers) out << " V_b[" << l.layer << "]=" << fmt(l.base_score) << " (n=" << l.samples << ")";
  out << (table.reliable ? "" : " UNRELIABLE: fewer than min_samples") << "\n";
}

namespace {

ojson outcome_json(const DecodeOutcome& o, const CaptionRecord& rec, const SceneGrammar& g) {
  const Vocabulary vocab = g.vocabulary();
  ojson j;
  j["scene_id"] = rec.scene_id;
  j["strategy"] = to_string(o.strategy);
  j["seed"] = o.seed;
  j["forward_passes"] = o.forward_passes;
  j["log_prob"] = o.log_prob;
  ojson steps = ojson::array();
  for (const auto& st : o.steps) {
    ojson sj;
    sj["step"] = st.profile.step;
    sj["token"] = vocab.text(st.token);
    ojson top = ojson::array();
    for (const auto& [tok, lp] : st.top) top.push_back({{"token", vocab.text(tok)}, {"log_prob", lp}});
    sj["top"] = top;
    ojson layers = ojson::array();
    for (std::size_t l = 0; l < st.profile.layers.size(); ++l) {
      const auto& lv = st.profile.layers[l];
      ojson lj;
      lj["layer"] = l;
      lj["nu"] = lv.nu;
      lj["tau"] = lv.tau;
      lj["vtacr"] = lv.ratio ? ojson(*lv.ratio) : ojson(nullptr);
      if (l < st.coefficients.alpha.size()) {
        lj["delta"] = st.coefficients.delta[l];
        lj["alpha"] = st.coefficients.alpha[l];
        lj["beta"] = st.coefficients.beta[l];
      }
      layers.push_back(lj);
    }
    sj["layers"] = layers;
    steps.push_back(sj);
  }
  j["steps"] = steps;
  j["tokens"] = nlohmann::json::parse(captions_line_tokens(rec, vocab));
  j["mentioned"] = names(g, rec.mentioned);
  j["hallucinated"] = names(g, rec.hallucinated);
  return j;
}

void write_csv_mirror(const fs::path& path, const std::vector<ojson>& rows) {
  std::string csv;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (r == 0) {
      bool first = true;
      for (const auto& [k, v] : rows[r].items()) {
        csv += (first ? "" : ",") + k;
        first = false;
      }
      csv += "\n";
    }
    bool first = true;
    for (const auto& [k, v] : rows[r].items()) {
      csv += first ? "" : ",";
      first = false;
      if (v.is_number_float()) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
        csv += buf;
      } else if (v.is_string()) {
        csv += v.get<std::string>();
      } else {
        csv += v.dump();
      }
    }
    csv += "\n";
  }
  write_file_atomic(path, csv);
}

const std::vector<std::string>& suite_files(const std::string& suite) {
  static const std::vector<std::string> chair{"chair.json"};
  static const std::vector<std::string> pope{"pope_random.json", "pope_popular.json",
                                             "pope_adversarial.json"};
  static const std::vector<std::string> tce{"tce.json"};
  return suite == "chair" ? chair : suite == "pope" ? pope : tce;
}

}  // namespace

void cmd_caption(const RunConfig& c, std::ostream& out) {
  c.validate();
  ensure_workdir(c);
  const Workspace ws = load_grammar(c);
  const LoadedCorpus eval = load_corpus(c.eval_file(), ws.grammar);
  const Model model = load_model(c);
  const Strategy s = strategy_from_string(c.strategy);
  const auto table = load_calibration(c, s);

  std::vector<CorpusEntry> scenes;
  if (c.scene_id.empty()) {
    scenes = eval.entries;
  } else {
    const auto id = std::stoull(c.scene_id);
    for (const auto& e : eval.entries) {
      if (e.scene.id == id) scenes.push_back(e);
    }
    require(!scenes.empty(), ErrorKind::kInvalidArgument,
            "scene " + c.scene_id + " is not in " + c.eval_file().string());
  }
  const CaptionRun run = run_captions(model, scenes, ws.grammar, s, table ? &*table : nullptr, c,
                                      c.decode_options());
  // A single-scene run never replaces the split-wide captions file.
  if (c.scene_id.empty()) {
    write_file_atomic(captions_file(c, c.strategy), captions_jsonl(run, ws.grammar, s));
  }

  if (!c.dump_outcomes.empty()) {
    std::string text;
    for (std::size_t i = 0; i < run.outcomes.size(); ++i) {
      text += outcome_json(run.outcomes[i], run.records[i], ws.grammar).dump() + "\n";
    }
    write_file_atomic(c.dump_outcomes, text);
  }
  if (!c.dump_vtacr.empty()) {
    const Vocabulary vocab = ws.grammar.vocabulary();
    std::string csv = "scene_id,step,token,layer,nu,tau,vtacr\n";
    char buf[160];
    for (std::size_t i = 0; i < run.outcomes.size(); ++i) {
      for (const auto& step : run.outcomes[i].steps) {
        for (std::size_t l = 0; l < step.profile.layers.size(); ++l) {
          const auto& lv = step.profile.layers[l];
          std::snprintf(buf, sizeof buf, ",%zu,%s,%zu,%.17g,%.17g,", step.profile.step,
                        vocab.text(step.token).c_str(), l, lv.nu, lv.tau);
          csv += std::to_string(run.records[i].scene_id) + buf;
          if (lv.ratio) {
            std::snprintf(buf, sizeof buf, "%.17g", *lv.ratio);
            csv += buf;
          } else {
            csv += "inf";
          }
          csv += "\n";
        }
      }
    }
    write_file_atomic(c.dump_vtacr, csv);
  }

  if (!c.scene_id.empty()) {
    const Vocabulary vocab = ws.grammar.vocabulary();
    const auto& rec = run.records.front();
    out << "scene " << rec.scene_id << " [" << c.strategy << "]:";
    for (int t : rec.tokens) out << " " << vocab.text(t);
    out << "\n  hallucinated:";
    for (const auto& n : names(ws.grammar, rec.hallucinated)) out << " " << n;
    out << (rec.hallucinated.empty() ? " none" : "") << "\n";
    return;
  }
  const ChairResult r = chair(run.records);
  out << "captions " << captions_file(c, c.strategy).string() << " (" << run.records.size()
      << " scenes) chair_s=" << fmt(r.chair_s) << " chair_i=" << fmt(r.chair_i)
      << " avg_len=" << fmt(r.avg_len) << "\n";
}

void cmd_evaluate(const RunConfig& c, std::ostream& out) {
  c.validate();
  ensure_workdir(c);
  const Workspace ws = load_grammar(c);
  const LoadedCorpus eval = load_corpus(c.eval_file(), ws.grammar);
  const Strategy s = strategy_from_string(c.strategy);
  const fs::path dir = eval_dir(c, c.strategy);
  fs::create_directories(dir);

  ojson head;
  head["suite"] = c.suite;
  head["strategy"] = c.strategy;
  head["seed"] = c.seed;
  head["eval_corpus_hash"] = eval.hash;
  const ojson scm = scm_fragment(s, c.intervention());

  if (c.suite == "chair") {
    const auto path = captions_file(c, c.strategy);
    require(fs::exists(path), ErrorKind::kIo,
            path.string() + " not found; run `owl caption --strategy " + c.strategy + "` first");
    const auto records = read_captions(path, ws.grammar, eval.entries);
    const ChairResult r = chair(records);
    ojson j = head;
    j["samples"] = fs::relative(path, dir).generic_string();
    j["captions_hash"] = file_fingerprint(path);
    j["metrics"] = chair_json(r);
    j["scm"] = scm;
    write_file_atomic(dir / "chair.json", dump(j));
    write_csv_mirror(dir / "chair.csv", {j["metrics"]});
    out << "chair " << c.strategy << ": chair_s=" << fmt(r.chair_s) << " chair_i=" << fmt(r.chair_i)
        << " avg_len=" << fmt(r.avg_len) << (r.no_mentions ? " WARNING: no objects mentioned" : "")
        << "\n";
  } else if (c.suite == "pope") {
    const Model model = load_model(c);
    const auto table = load_calibration(c, s);
    const PopeRun run = run_pope(model, eval.entries, ws.grammar, s, table ? &*table : nullptr, c,
                                 c.decode_options());
    std::vector<ojson> csv_rows;
    for (std::size_t k = 0; k < run.results.size(); ++k) {
      const auto& r = run.results[k];
      const std::string setting = to_string(r.setting);
      write_file_atomic(dir / ("pope_" + setting + ".jsonl"), run.samples_jsonl[k]);
      ojson j = head;
      j["setting"] = setting;
      j["model_hash"] = model.fingerprint();
      j["samples"] = "pope_" + setting + ".jsonl";
      j["metrics"] = pope_json(r);
      j["scm"] = scm;
      write_file_atomic(dir / ("pope_" + setting + ".json"), dump(j));
      csv_rows.push_back(j["metrics"]);
      out << "pope " << c.strategy << " " << setting << ": acc=" << fmt(r.accuracy)
          << " f1=" << fmt(r.f1) << " yes=" << fmt(r.yes_ratio) << " flagged=" << r.flagged << "\n";
    }
    write_csv_mirror(dir / "pope.csv", csv_rows);
  } else {
    const auto base_path = captions_file(c, "greedy");
    const auto path = captions_file(c, c.strategy);
    for (const auto& p : {base_path, path}) {
      require(fs::exists(p), ErrorKind::kIo, p.string() + " not found; run `owl caption` first");
    }
    const auto before = read_captions(base_path, ws.grammar, eval.entries);
    const auto after = read_captions(path, ws.grammar, eval.entries);
    require(before.size() == after.size(), ErrorKind::kIntegrity,
            "baseline and intervened caption files cover different scenes");
    std::vector<TcePair> pairs;
    std::string samples_jsonl;
    for (std::size_t i = 0; i < before.size(); ++i) {
      require(before[i].scene_id == after[i].scene_id, ErrorKind::kIntegrity,
              "caption files are not aligned by scene");
      pairs.push_back({before[i], after[i]});
      const Real hb = caption_hallucination(before[i]), ha = caption_hallucination(after[i]);
      ojson row;
      row["scene_id"] = before[i].scene_id;
      row["h_before"] = hb;
      row["h_after"] = ha;
      row["psi"] = psi(hb, ha);
      samples_jsonl += row.dump() + "\n";
    }
    write_file_atomic(dir / "tce.jsonl", samples_jsonl);
    const Real t = tce(pairs);
    ojson j = head;
    j["baseline"] = fs::relative(base_path, dir).generic_string();
    j["intervened"] = fs::relative(path, dir).generic_string();
    j["samples"] = "tce.jsonl";
    j["metrics"] = {{"tce", t}, {"pairs", pairs.size()}};
    j["scm"] = scm;
    write_file_atomic(dir / "tce.json", dump(j));
    write_csv_mirror(dir / "tce.csv", {j["metrics"]});
    out << "tce " << c.strategy << " vs greedy: " << fmt(t) << " over " << pairs.size() << " pairs\n";
  }
}

void cmd_report(const RunConfig& c, std::ostream& out) {
  c.validate();
  ojson rows = ojson::array();
  std::vector<ojson> flat;
  out << "strategy      suite  metrics\n";
  for (const auto& s : c.strategies) {
    for (const auto& suite : c.suites) {
      ojson metrics;
      std::size_t interventions = 0;
      for (const auto& file : suite_files(suite)) {
        const auto path = eval_dir(c, s) / file;
        require(fs::exists(path), ErrorKind::kIo,
                path.string() + " not found; run `owl evaluate --suite " + suite + " --strategy " + s + "`");
        const ojson e = ojson::parse(read_file(path));
        interventions = e.at("scm").at("interventions").size();
        if (suite == "pope") {
          metrics[e.at("setting").get<std::string>()] = e.at("metrics");
        } else {
          metrics = e.at("metrics");
        }
      }
      std::string line = s;
      line.resize(14, ' ');
      line += suite;
      line.resize(21, ' ');
      ojson f;
      f["strategy"] = s;
      f["suite"] = suite;
      if (suite == "chair") {
        f["chair_s"] = metrics.at("chair_s");
        f["chair_i"] = metrics.at("chair_i");
        f["avg_len"] = metrics.at("avg_len");
        line += "chair_s=" + fmt(metrics.at("chair_s").get<double>()) +
                " chair_i=" + fmt(metrics.at("chair_i").get<double>()) +
                " len=" + fmt(metrics.at("avg_len").get<double>());
      } else if (suite == "pope") {
        for (const char* setting : {"random", "popular", "adversarial"}) {
          const double f1 = metrics.at(setting).at("f1").get<double>();
          const double acc = metrics.at(setting).at("accuracy").get<double>();
          f[std::string(setting) + "_acc"] = acc;
          f[std::string(setting) + "_f1"] = f1;
          line += std::string(setting).substr(0, 3) + " acc=" + fmt(acc) + " f1=" + fmt(f1) + "  ";
        }
      } else {
        f["tce"] = metrics.at("tce");
        line += "tce=" + fmt(metrics.at("tce").get<double>());
      }
      ojson row;
      row["strategy"] = s;
      row["suite"] = suite;
      row["interventions"] = interventions;
      row["metrics"] = metrics;
      rows.push_back(row);
      flat.push_back(f);
      out << line << "\n";
    }
  }
  ojson report;
  report["seed"] = c.seed;
  report["rows"] = rows;
  write_file_atomic(fs::path(c.workdir) / "report.json", dump(report));
  // Flat mirror: one line per (strategy, suite); columns differ per suite.
  std::string csv = "strategy,suite,metric,value\n";
  for (const auto& f : flat) {
    for (const auto& [k, v] : f.items()) {
      if (k == "strategy" || k == "suite") continue;
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
      csv += f["strategy"].get<std::string>() + "," + f["suite"].get<std::string>() + "," + k + "," + buf + "\n";
    }
  }
  write_file_atomic(fs::path(c.workdir) / "report.csv", csv);
}

void cmd_sweep(const RunConfig& c, std::ostream& out) {
  c.validate();
  ensure_workdir(c);
  const Workspace ws = load_grammar(c);
  const LoadedCorpus eval = load_corpus(c.eval_file(), ws.grammar);
  const Model model = load_model(c);
  const Strategy s = strategy_from_string(c.strategy);
  const auto table = load_calibration(c, s);
  const fs::path csv_path = c.sweep_out.empty() ? fs::path(c.workdir) / "sweep.csv" : fs::path(c.sweep_out);

  const std::string header = "key,strategy,alpha,beta,lambda,mod_t,chair_s,chair_i,f1,len\n";
  std::string csv = header;
  std::set<std::string> done;
  if (fs::exists(csv_path)) {
    std::istringstream in(read_file(csv_path));
    std::string line;
    std::getline(in, line);
    require(line + "\n" == header, ErrorKind::kIntegrity, csv_path.string() + " has an unexpected header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      done.insert(line.substr(0, line.find(',')));
      csv += line + "\n";
    }
  }

  std::size_t computed = 0, skipped = 0;
  for (double a : c.sweep_alpha) {
    for (double b : c.sweep_beta) {
      for (double l : c.sweep_lambda) {
        for (double t : c.sweep_mod_t) {
          RunConfig point = c;
          point.alpha = a;
          point.beta = b;
          point.lambda = l;
          point.mod_t = t;
          const std::string params = point.get("alpha") + "," + point.get("beta") + "," +
                                     point.get("lambda") + "," + point.get("mod_t");
          const std::string key = bytes_fingerprint(model.fingerprint() + "|" + eval.hash + "|" +
                                                    c.strategy + "|" + params);
          if (done.count(key)) {
            ++skipped;
            continue;
          }
          const DecodeOptions opts = point.decode_options();
          const CaptionRun run = run_captions(model, eval.entries, ws.grammar, s,
                                              table ? &*table : nullptr, point, opts);
          const ChairResult cr = chair(run.records);
          const PopeRun pr = run_pope(model, eval.entries, ws.grammar, s, table ? &*table : nullptr,
                                      point, opts);
          char buf[200];
          std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g\n", cr.chair_s, cr.chair_i,
                        pr.results.front().f1, cr.avg_len);
          csv += key + "," + c.strategy + "," + params + buf;
          done.insert(key);
          ++computed;
          // Persist after every point so an interrupted sweep resumes here.
          write_file_atomic(csv_path, csv);
        }
      }
    }
  }
  write_file_atomic(csv_path, csv);
  out << "sweep " << csv_path.string() << ": " << computed << " computed, " << skipped
      << " already present\n";
}

void cmd_pipeline(const RunConfig& c, std::ostream& out) {
  c.validate();
  cmd_gen_corpus(c, out);
  cmd_train(c, out);
  cmd_calibrate(c, out);
  std::vector<std::string> order = c.strategies;
  // TCE needs greedy captions as its baseline.
  if (std::find(order.begin(), order.end(), "greedy") == order.end()) order.insert(order.begin(), "greedy");
  for (const auto& s : order) {
    RunConfig sc = c;
    sc.strategy = s;
    cmd_caption(sc, out);
  }
  for (const auto& s : c.strategies) {
    for (const auto& suite : c.suites) {
      RunConfig ec = c;
      ec.strategy = s;
      ec.suite = suite;
      cmd_evaluate(ec, out);
    }
  }
  cmd_report(c, out);
}

}  // namespace owl::cli
