#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldlva/data.hpp"
#include "ldlva/model.hpp"
#include "ldlva/training.hpp"

namespace ldlva::evaluation {

inline constexpr double kJeffreyEps = 1e-9;

// Fraction of exact matches.
double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);

// sum_j (d_j - f_j) log(d_j / f_j) after adding eps to every entry of both
// arguments and renormalizing. Symmetric and >= 0.
double jeffrey_divergence(std::span<const double> f, std::span<const double> d, double eps = kJeffreyEps);

struct EvalReport {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;  // NaN for classes absent from the data
  double jeffrey = 0.0;                    // mean over instances with gt; NaN if none
  double jeffrey_ambiguous = 0.0;          // mean over instances whose gt is not one-hot
  std::size_t n = 0;
  std::size_t n_with_gt = 0;
  std::size_t n_ambiguous = 0;
  std::string config_fingerprint;
};

// Scores predictions against clean labels.
EvalReport evaluate(const model::ModelParams& params, const data::Dataset& dataset,
                    const nlohmann::json& config = nlohmann::json::object());

nlohmann::json to_json(const EvalReport& report);

// FNV-1a of the compact JSON dump, hex.
std::string fingerprint(const nlohmann::json& config);

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double acc = 0.0;
  double jeffrey = 0.0;
  double jeffrey_ambiguous = 0.0;
  double lambda_clean_mean = 0.0;
  double lambda_flipped_mean = 0.0;
  double wall_time_s = 0.0;
};

struct ExperimentCell {
  std::string method;     // trained variant
  std::string level;      // noise ratio, setting id or K
  std::string condition;  // data condition
  std::vector<SeedResult> runs;
  std::size_t succeeded = 0;
  double mean_acc = 0.0;
  double stderr_acc = 0.0;
  double mean_jeffrey = 0.0;
  double mean_jeffrey_ambiguous = 0.0;
};

// Mean and standard error (sample std / sqrt(runs)) over successful runs.
void summarize(ExperimentCell& cell);

struct ExperimentMatrix {
  std::string kind;
  std::vector<ExperimentCell> cells;
  std::vector<std::string> warnings;
  nlohmann::json config = nlohmann::json::object();

  const ExperimentCell* find(const std::string& method, const std::string& level,
                             const std::string& condition) const;
};

nlohmann::json to_json(const ExperimentMatrix& matrix);
// Columns: method,ratio_or_setting_or_k,seed,acc,jeffrey,wall_time_s,condition,
//          jeffrey_ambiguous,lambda_clean_mean,lambda_flipped_mean,error
std::string to_csv(const ExperimentMatrix& matrix);

struct ExperimentSettings {
  data::SyntheticSpec spec;
  training::TrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  bool record_timing = true;
};

// baseline_ce (setting i), ldlva (setting v), setting_ii, setting_iii, setting_iv.
training::TrainConfig configure_method(const training::TrainConfig& base, const std::string& method);
bool is_known_method(const std::string& method);

// Paired design: for a seed, every method sees the same data, noise and init.
ExperimentMatrix run_noise_benchmark(const ExperimentSettings& settings, std::span<const double> ratios,
                                     std::span<const std::string> methods);

// Settings i-v on clean data and at `noisy_ratio`.
ExperimentMatrix run_ablation(const ExperimentSettings& settings, double noisy_ratio = 0.3);

// LDLVA across neighbor counts on clean data and at `noisy_ratio`. K >= n is
// clamped to n-1 and recorded in warnings.
ExperimentMatrix sweep_k(const ExperimentSettings& settings, std::span<const std::size_t> k_values,
                         double noisy_ratio = 0.3);

// Data for one seed of an experiment; exposed for tests.
data::SplitDatasets experiment_data(const data::SyntheticSpec& spec, std::uint64_t seed, double ratio);
std::uint64_t experiment_train_seed(std::uint64_t seed);

}  // namespace ldlva::evaluation
