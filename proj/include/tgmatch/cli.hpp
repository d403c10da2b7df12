#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tgmatch/config.hpp"
#include "tgmatch/data.hpp"
#include "tgmatch/trainer.hpp"

namespace tgmatch::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Entry point: `tgmatch <gen-data|train|eval|ablate> [flags]`.
int run(int argc, const char* const* argv);
/// Same, with the arguments after the program name.
int run(const std::vector<std::string>& args);

struct TrainingRun {
  config::RunConfig config;
  data::DatasetManifest train;  // with the labeled subset drawn
  std::optional<data::DatasetManifest> test;
  std::shared_ptr<data::VideoStore> store;
  std::unique_ptr<trainer::Trainer> trainer;
  trainer::FitResult fit;
};

/// What `train` does after flag handling: split, fit, echo the config to out_dir.
TrainingRun run_training(const config::RunConfig& config, bool quiet = true);

/// One grid axis: a config key (or "tricks") and its values.
struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

/// Parses "key=v1/v2/v3".
GridAxis parse_grid_axis(const std::string& spec);
/// Cartesian product of the axes, first axis slowest. Throws on an empty grid.
std::vector<std::vector<std::pair<std::string, std::string>>> expand_grid(
    const std::vector<GridAxis>& axes);

}  // namespace tgmatch::cli
