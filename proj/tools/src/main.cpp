#include <CLI11.hpp>

#include <iostream>
#include <map>

#include "owl/error.hpp"
#include "owl/io.hpp"
#include "owl_cli/commands.hpp"

namespace {

std::string flag_name(std::string key) {
  for (auto& ch : key) {
    if (ch == '_') ch = '-';
  }
  return "--" + key;
}

}  // namespace

int main(int argc, char** argv) {
  using owl::cli::RunConfig;
  CLI::App app{"owl: VTACR-guided dual-path contrastive decoding testbed"};
  app.require_subcommand(1);

  std::string config_file;
  app.add_option("-c,--config", config_file, "key = value config file");

  // Every config key is also a flag; explicit flags override the file.
  std::map<std::string, std::string> overrides;
  std::vector<std::pair<std::string, CLI::Option*>> options;
  std::map<std::string, std::string> aliases = {{"mod_t", "--mod-t"},
                                                {"collector", "--collector-decoder"},
                                                {"model_path", "--model-path,--model"},
                                                {"calibration_path", "--calibration-path,--calib"}};
  for (const auto& key : RunConfig::keys()) {
    if (key == "force") continue;  // plain flag below
    auto* opt = app.add_option(aliases.count(key) ? aliases[key] : flag_name(key), overrides[key],
                               "config key " + key);
    opt->group("Config keys");
    options.emplace_back(key, opt);
  }
  bool no_renorm = false;
  app.add_flag("--no-renorm", no_renorm, "skip row renormalization after attention rewrites");
  bool force_flag = false;
  app.add_flag("--force", force_flag, "ignore calibration fingerprint mismatches");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-corpus", "generate grammar.json, train.jsonl and eval.jsonl"},
      {"train", "train the testbed model"},
      {"calibrate", "fit per-layer VTACR base scores"},
      {"caption", "caption the eval split with --strategy"},
      {"evaluate", "score a strategy with --suite chair|pope|tce"},
      {"report", "aggregate evaluation JSONs into report.json"},
      {"sweep", "grid over alpha/beta/lambda/T, resumable CSV"},
      {"pipeline", "gen-corpus, train, calibrate, caption, evaluate, report"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

  // Per-command shorthands: --corpus is the corpus the command reads,
  // --out the primary file it writes.
  std::string calib_corpus, calib_out, caption_corpus, caption_out;
  auto* calibrate = app.get_subcommand("calibrate");
  auto* calib_corpus_opt = calibrate->add_option("--corpus", calib_corpus, "training corpus (train_corpus)");
  auto* calib_out_opt = calibrate->add_option("--out", calib_out, "calibration JSON (calibration_path)");
  auto* caption = app.get_subcommand("caption");
  auto* caption_corpus_opt = caption->add_option("--corpus", caption_corpus, "eval corpus (eval_corpus)");
  auto* caption_out_opt = caption->add_option("--out", caption_out, "per-generation JSONL (dump_outcomes)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    RunConfig config;
    if (!config_file.empty()) config.merge(owl::read_file(config_file));
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) config.set(key, overrides[key]);
    }
    if (calib_corpus_opt->count()) config.train_corpus = calib_corpus;
    if (calib_out_opt->count()) config.calibration_path = calib_out;
    if (caption_corpus_opt->count()) config.eval_corpus = caption_corpus;
    if (caption_out_opt->count()) config.dump_outcomes = caption_out;
    if (no_renorm) config.renormalize = false;
    if (force_flag) config.force = true;

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen-corpus") owl::cli::cmd_gen_corpus(config, std::cout);
    else if (cmd == "train") owl::cli::cmd_train(config, std::cout);
    else if (cmd == "calibrate") owl::cli::cmd_calibrate(config, std::cout);
    else if (cmd == "caption") owl::cli::cmd_caption(config, std::cout);
    else if (cmd == "evaluate") owl::cli::cmd_evaluate(config, std::cout);
    else if (cmd == "report") owl::cli::cmd_report(config, std::cout);
    else if (cmd == "sweep") owl::cli::cmd_sweep(config, std::cout);
    else owl::cli::cmd_pipeline(config, std::cout);
  } catch (const owl::Error& e) {
    std::cerr << "owl: " << e.what() << "\n";
    return owl::cli::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "owl: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
