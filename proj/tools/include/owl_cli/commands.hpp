#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "owl/error.hpp"
#include "owl_cli/config.hpp"

namespace owl::cli {

// Each command reads its inputs from the paths named by the config, writes
// its outputs atomically and prints a short summary to `out`. Errors are
// thrown as owl::Error; exit_code_for maps them to process exit codes.
void cmd_gen_corpus(const RunConfig& config, std::ostream& out);
void cmd_train(const RunConfig& config, std::ostream& out);
void cmd_calibrate(const RunConfig& config, std::ostream& out);
void cmd_caption(const RunConfig& config, std::ostream& out);
void cmd_evaluate(const RunConfig& config, std::ostream& out);
void cmd_report(const RunConfig& config, std::ostream& out);
void cmd_sweep(const RunConfig& config, std::ostream& out);
void cmd_pipeline(const RunConfig& config, std::ostream& out);

// 0 ok, 1 usage/IO, 2 integrity or fingerprint mismatch, 3 numeric failure.
int exit_code_for(ErrorKind kind);

std::filesystem::path captions_file(const RunConfig& config, const std::string& strategy);
// Per-strategy evaluation directory: chair.json, pope_<setting>.json,
// tce.json, their per-sample logs and CSV mirrors.
std::filesystem::path eval_dir(const RunConfig& config, const std::string& strategy);

}  // namespace owl::cli
