#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ialstm/data.hpp"
#include "ialstm/eval.hpp"
#include "ialstm/training.hpp"

namespace ialstm {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

struct ExperimentConfig {
  std::filesystem::path manifest;
  std::string holdout = "zara01";
  TrainConfig train;
  std::size_t runs = 50;
  RolloutMode mode = RolloutMode::sampled;
  Feedback feedback = Feedback::targets_only;
  std::filesystem::path out = "runs";
};

// Loads every manifest dataset and normalizes each scene on its own.
std::vector<Scene> load_scenes(const std::filesystem::path& manifest);

// Name of the cached checkpoint for a held-out set and sigma.
std::string checkpoint_name(const std::string& holdout, const TrainConfig& config);

// Entry point behind the `ialstm` binary. args excludes the program name.
// IALSTM_THREADS sets the worker count.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ialstm
