#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldlva/data.hpp"
#include "ldlva/training.hpp"

namespace ldlva::config {

struct ExperimentParams {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<double> ratios{0.1, 0.2, 0.3};
  std::vector<std::string> methods{"baseline_ce", "ldlva"};
  std::vector<std::size_t> k_values{2, 4, 8, 16, 32};
  double noisy_ratio = 0.3;
  bool record_timing = true;
  std::uint64_t data_seed = 7;  // gen
  double noise_ratio = 0.0;     // gen: labels flipped in the written training file
};

// Everything a command can be configured with. File layout:
//   {"synthetic": {...}, "train": {...}, "experiment": {...}}
struct CliConfig {
  data::SyntheticSpec synthetic;
  training::TrainConfig train;
  ExperimentParams experiment;
};

nlohmann::json to_json(const CliConfig& config);
nlohmann::json to_json(const ExperimentParams& params);

// Unknown keys at any level raise ConfigError. Missing keys keep `base`.
CliConfig cli_config_from_json(const nlohmann::json& j, CliConfig base = {});
CliConfig load_cli_config(const std::filesystem::path& path, CliConfig base = {});

}  // namespace ldlva::config
