#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldlva/data.hpp"
#include "ldlva/losses.hpp"
#include "ldlva/model.hpp"
#include "ldlva/neighborhood.hpp"

namespace ldlva::training {

inline constexpr const char* kToolVersion = "ldlva 0.1.0";

enum class PredictionRefresh { kPerEpoch, kPerStep };

struct TrainConfig {
  std::size_t k = 8;
  double delta = 0.5;
  double gamma = 0.1;
  double lr = 1e-3;
  double center_lr = 0.5;
  double lambda_lr = 0.05;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;

  bool ld_on = true;
  bool as_on = true;
  bool uf_on = true;
  bool dl_on = true;
  double shared_lambda = 0.5;  // used when uf_on is false

  losses::LambdaGradMode lambda_grad_mode = losses::LambdaGradMode::kClsOnly;
  losses::NeighborGradMode neighbor_grad_mode = losses::NeighborGradMode::kDetached;
  PredictionRefresh prediction_refresh = PredictionRefresh::kPerEpoch;

  std::vector<std::size_t> encoder_hidden{128};
  std::size_t feature_dim = 64;
  std::size_t calibration_hidden1 = 32;
  std::size_t calibration_hidden2 = 16;

  double eval_fraction = 0.2;
  // Mean per-instance batch loss above this raises NumericError; 0 disables.
  double divergence_threshold = 1e6;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // Throws ConfigError naming the offending field.
  void validate() const;
  losses::LossOptions loss_options() const;
  model::ModelDims model_dims(std::size_t input_dim, std::size_t num_classes) const;
};

nlohmann::json to_json(const TrainConfig& config);
// Rejects unknown keys; missing keys keep the values from `base`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// Named component settings from the ablation table:
//   i: nothing, ii: LD+AS, iii: LD+AS+UF, iv: LD+UF+DL, v: LD+AS+UF+DL.
enum class Setting { kI, kII, kIII, kIV, kV };
Setting parse_setting(const std::string& name);
std::string setting_name(Setting s);
TrainConfig apply_setting(TrainConfig config, Setting s);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double l_cls = 0.0;
  double l_d = 0.0;
  double l_total = 0.0;
  double acc_train = 0.0;
  double acc_eval = 0.0;  // NaN without an eval set
  double lambda_clean_mean = 0.0;
  double lambda_flipped_mean = 0.0;  // NaN without flipped instances
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

// CSV with a leading '#' provenance line carrying the tool version and config.
std::string history_csv(const TrainHistory& history, const nlohmann::json& config);

struct TrainResult {
  model::Checkpoint checkpoint;
  TrainHistory history;
};

struct TrainOptions {
  const model::Checkpoint* resume = nullptr;             // continue from this state
  const neighborhood::NeighborTable* neighbors = nullptr;  // precomputed table for the train set
  std::size_t stop_after_epoch = 0;                      // 0: run to config.epochs
  std::function<void(const EpochRecord&)> on_epoch;
  // Called after every optimizer step with the current lambda vector.
  std::function<void(const ldl::LambdaStore&)> on_step;
};

TrainResult train(const data::Dataset& train_set, const data::Dataset* eval_set, const TrainConfig& config,
                  const TrainOptions& options = {});

// Features and predictions for every instance (OpenMP over rows).
model::PredictionCache refresh_prediction_cache(const model::ModelParams& params, const data::Dataset& dataset,
                                                std::size_t epoch = 0, std::size_t step = 0);
model::PredictionCache refresh_prediction_cache_serial(const model::ModelParams& params,
                                                       const data::Dataset& dataset, std::size_t epoch = 0,
                                                       std::size_t step = 0);

// argmax of the classifier output; needs nothing but parameters and features.
std::vector<std::size_t> eval_inference(const model::ModelParams& params,
                                        std::span<const data::Instance> instances);

}  // namespace ldlva::training
