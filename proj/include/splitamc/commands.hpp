#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "splitamc/config.hpp"
#include "splitamc/metrics.hpp"

namespace splitamc {

/// Process exit codes; stable.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitInvalidConfig = 2,
  kExitIo = 3,
  kExitMissingDataset = 4,
  kExitNonFiniteLoss = 5,
};

struct MissingDataset : Error {
  using Error::Error;
};

struct CommandOptions {
  std::filesystem::path config;  ///< empty: defaults only
  std::filesystem::path out;     ///< empty: config out_dir
  std::filesystem::path data;    ///< train: dataset directory (overrides dataset.dir)
  std::vector<std::string> overrides;
};

/// Loads the config file, applies overrides and validates.
ExperimentConfig resolve_config(const CommandOptions& opts);

/// Dataset generated from the config's modem/dataset sections at the given
/// gamma_data, with normalization targets applied.
Dataset generate_dataset(const ExperimentConfig& cfg, double gamma_data_db, unsigned threads = 1);

struct RunOutcome {
  TrainResult result;
  double pcc_local = 0.0;
  double pcc_remote = 0.0;
  double mean_round_latency_s = 0.0;
  ScaleReport scale;
};

/// Split, partition, train and evaluate in both inference modes.
RunOutcome run_experiment(const TrainConfig& train, const ExperimentConfig& cfg, const Dataset& ds,
                          const TrainHooks& hooks = {});

/// Mean of round_latency over the records' actual payloads.
double mean_round_latency(const TrainConfig& train, const SplitModel& model, std::span<const RoundRecord> records,
                          const LatencySettings& lat);

/// Thread cap for grid runs: SPLITAMC_THREADS if set, else hardware concurrency.
unsigned grid_threads();

int cmd_gen_data(const CommandOptions& opts, std::ostream& log);
int cmd_train(const CommandOptions& opts, std::ostream& log);
int cmd_latency(const CommandOptions& opts, std::ostream& log);
int cmd_compare(const CommandOptions& opts, std::ostream& log);

/// Dispatches by subcommand name and maps exceptions to exit codes.
int run_command(const std::string& name, const CommandOptions& opts, std::ostream& log);

}  // namespace splitamc
