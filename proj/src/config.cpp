#include "ldlva/config.hpp"

#include <fstream>

namespace ldlva::config {

using json = nlohmann::json;

json to_json(const ExperimentParams& p) {
  return json{{"seeds", p.seeds},         {"ratios", p.ratios},
              {"methods", p.methods},     {"k_values", p.k_values},
              {"noisy_ratio", p.noisy_ratio}, {"record_timing", p.record_timing},
              {"data_seed", p.data_seed}, {"noise_ratio", p.noise_ratio}};
}

json to_json(const CliConfig& c) {
  return json{{"synthetic", data::to_json(c.synthetic)},
              {"train", training::to_json(c.train)},
              {"experiment", to_json(c.experiment)}};
}

namespace {

ExperimentParams experiment_from_json(const json& j, ExperimentParams p) {
  if (!j.is_object()) throw ConfigError("experiment", "experiment section must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "seeds") p.seeds = value.get<std::vector<std::uint64_t>>();
      else if (key == "ratios") p.ratios = value.get<std::vector<double>>();
      else if (key == "methods") p.methods = value.get<std::vector<std::string>>();
      else if (key == "k_values") p.k_values = value.get<std::vector<std::size_t>>();
      else if (key == "noisy_ratio") p.noisy_ratio = value.get<double>();
      else if (key == "record_timing") p.record_timing = value.get<bool>();
      else if (key == "data_seed") p.data_seed = value.get<std::uint64_t>();
      else if (key == "noise_ratio") p.noise_ratio = value.get<double>();
      else throw ConfigError(key, "unknown experiment key '" + key + "'");
    } catch (const json::exception& e) {
      throw ConfigError(key, "bad value for '" + key + "': " + e.what());
    }
  }
  return p;
}

}  // namespace

CliConfig cli_config_from_json(const json& j, CliConfig base) {
  if (!j.is_object()) throw ConfigError("config", "config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "synthetic") base.synthetic = data::synthetic_spec_from_json(value, base.synthetic);
    else if (key == "train") base.train = training::train_config_from_json(value, base.train);
    else if (key == "experiment") base.experiment = experiment_from_json(value, base.experiment);
    else throw ConfigError(key, "unknown config section '" + key + "'");
  }
  return base;
}

CliConfig load_cli_config(const std::filesystem::path& path, CliConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config", "cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("config file is not valid JSON: ") + e.what());
  }
  return cli_config_from_json(j, std::move(base));
}

}  // namespace ldlva::config
