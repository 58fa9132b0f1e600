#pragma once

#include <exception>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "robustssm/config.hpp"
#include "robustssm/dataset.hpp"
#include "robustssm/report.hpp"

namespace rssm {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitConfig = 3,
  kExitMissingCheckpoint = 4,
  kExitDataFormat = 5,
  kExitIo = 6,
};

// Exit code for an exception escaping a subcommand.
int exit_code_for(const std::exception& e) noexcept;
// Human-readable table of exit codes (used by --help).
std::string exit_code_table();

const std::vector<std::string>& subcommands();

// Train/val/test splits described by the config (archive or synthetic).
DatasetSplits load_data(const ExperimentConfig& cfg);
std::string dataset_name(const ExperimentConfig& cfg);

struct RunRequest {
  std::string subcommand;
  ExperimentConfig config;
  // report-merge: CSV inputs, merged into <out>/merged.{csv,md} unless
  // merge_output names another stem.
  std::vector<std::string> inputs;
  std::string merge_output;
};

// Runs one subcommand and writes its report under config.out. Throws on
// failure; see run() for the exception-to-exit-code mapping.
EvalReport execute(const RunRequest& req, std::ostream& log);

// execute() with errors reported on `err` and mapped to an exit code.
int run(const RunRequest& req, std::ostream& log, std::ostream& err);

}  // namespace rssm
