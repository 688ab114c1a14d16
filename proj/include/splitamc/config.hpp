#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitamc/dataset.hpp"
#include "splitamc/latency.hpp"
#include "splitamc/trainers.hpp"

namespace splitamc {

using json = nlohmann::json;

/// Invalid or unknown configuration entry; `key` is the dotted path.
struct ConfigError : Error {
  ConfigError(std::string key_, const std::string& what) : Error(what), key(std::move(key_)) {}
  std::string key;
};

/// Channel SNR: a finite dB value or "noiseless".
struct ChannelSnr {
  std::optional<double> db;  ///< nullopt = noiseless

  std::string label() const;
  bool operator==(const ChannelSnr&) const = default;
};

struct LatencySettings {
  LatencyConfig base;  ///< payloads and lambda are filled from the model
  double tau_comp_s = 1e-3;
  std::vector<double> ratios{10.0, 1.0, 0.1};
  std::vector<int> cuts{1};
  int rounds = 50;
};

struct CompareSettings {
  std::vector<Method> methods{Method::SplitAmc, Method::FedeAmc, Method::CentAmc};
  std::vector<double> gamma_data_db{10.0, 15.0};
  std::vector<ChannelSnr> channel_snr{{std::nullopt}, {-10.0}};
  std::vector<FadingMode> fading{FadingMode::Fixed};
  std::vector<std::uint64_t> seeds{1};
};

struct ExperimentConfig {
  json resolved;  ///< defaults expanded; enough to reproduce the run
  std::uint64_t seed = 1;
  std::string out_dir;
  ModemConfig modem;
  BuildOptions build;
  double test_fraction = 0.2;
  Normalization target;  ///< normalize_dataset targets
  std::string dataset_dir;
  TrainConfig train;
  ChannelSnr channel;
  LatencySettings latency;
  CompareSettings compare;
};

/// Every accepted key with its default value.
json default_config();

/// Merges `user` over the defaults. Unknown keys and ill-typed values throw
/// ConfigError naming the dotted key.
ExperimentConfig parse_config(const json& user);

json load_config_file(const std::filesystem::path& path);

/// Applies "a.b.c=value"; value is parsed as JSON, falling back to a string.
void apply_override(json& user, const std::string& assignment);

/// Link budget for a channel SNR under the given base (P, d, alpha, flags).
LinkBudget make_link(const ChannelSnr& snr, FadingMode fading, const LinkBudget& base);

std::string fading_name(FadingMode m);
FadingMode fading_from_name(const std::string& name);

}  // namespace splitamc
