#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldlva/numerics.hpp"

namespace ldlva::model {

using numerics::Matrix;
using numerics::Rng;
using numerics::Vector;

struct Dense {
  Matrix weight;  // out x in
  Vector bias;

  std::size_t in() const noexcept { return weight.cols(); }
  std::size_t out() const noexcept { return weight.rows(); }
  bool operator==(const Dense&) const = default;
};

struct LayerNormParams {
  Vector gain;
  Vector bias;
  bool operator==(const LayerNormParams&) const = default;
};

// Dense stack R^F -> R^V with ReLU after every layer except the last.
struct EncoderParams {
  std::vector<Dense> layers;
  bool operator==(const EncoderParams&) const = default;
};

// Dense R^V -> R^m; softmax is applied by classify().
struct ClassifierParams {
  Dense head;
  bool operator==(const ClassifierParams&) const = default;
};

// g over [v_i, v_k]: Dense -> LayerNorm -> ReLU -> Dense -> LayerNorm -> ReLU -> Dense(1), then sigmoid.
struct CalibrationParams {
  Dense hidden1;
  LayerNormParams norm1;
  Dense hidden2;
  LayerNormParams norm2;
  Dense out;
  bool operator==(const CalibrationParams&) const = default;
};

inline constexpr double kLayerNormEps = 1e-5;

struct ModelDims {
  std::size_t input_dim = 16;
  std::vector<std::size_t> encoder_hidden{32};
  std::size_t feature_dim = 16;
  std::size_t num_classes = 3;
  std::size_t calibration_hidden1 = 32;
  std::size_t calibration_hidden2 = 16;

  bool operator==(const ModelDims&) const = default;
};

nlohmann::json to_json(const ModelDims& dims);
ModelDims model_dims_from_json(const nlohmann::json& j);

struct ModelParams {
  EncoderParams encoder;
  ClassifierParams classifier;
  CalibrationParams calibration;
  bool operator==(const ModelParams&) const = default;
};

enum class Component { kEncoder, kClassifier, kCalibration };

struct TensorRef {
  std::string name;
  Component component;
  std::span<double> data;
  std::size_t rows;
  std::size_t cols;
};

struct ConstTensorRef {
  std::string name;
  Component component;
  std::span<const double> data;
  std::size_t rows;
  std::size_t cols;
};

// Every parameter tensor in a fixed order; gradients and optimizer states
// use the same order.
std::vector<TensorRef> tensors(ModelParams& params);
std::vector<ConstTensorRef> tensors(const ModelParams& params);

// Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; layer norm gain 1, bias 0.
ModelParams init_model(const ModelDims& dims, Rng& rng);

// Same shapes, all zeros.
ModelParams zeros_like(const ModelParams& params);

// Forward intermediates.
struct EncoderTrace {
  std::vector<Vector> inputs;  // input to each layer
  std::vector<Vector> pre;     // pre-activation of each layer
};

struct CalibrationTrace {
  Vector input;
  Vector pre1;
  numerics::LayerNormTrace norm1;
  Vector normed1;
  Vector pre2;
  numerics::LayerNormTrace norm2;
  Vector normed2;
  Vector act2;
  Vector act1;
  double logit = 0.0;
  double zeta = 0.0;
};

Vector encode(const EncoderParams& enc, std::span<const double> x);
Vector encode_forward(const EncoderParams& enc, std::span<const double> x, EncoderTrace& trace);
// Accumulates into grad; returns dL/dx.
Vector encode_backward(const EncoderParams& enc, const EncoderTrace& trace,
                       std::span<const double> grad_v, EncoderParams& grad);

Vector logits(const ClassifierParams& cls, std::span<const double> v);
Vector classify(const ClassifierParams& cls, std::span<const double> v);
// Accumulates into grad; returns dL/dv.
Vector classify_backward(const ClassifierParams& cls, std::span<const double> v,
                         std::span<const double> grad_logits, ClassifierParams& grad);

double calibration_score(const CalibrationParams& cal, std::span<const double> v_i,
                         std::span<const double> v_k);
double calibration_forward(const CalibrationParams& cal, std::span<const double> v_i,
                           std::span<const double> v_k, CalibrationTrace& trace);
// grad_logit is dL/d(pre-sigmoid output). Returns (dL/dv_i, dL/dv_k).
std::pair<Vector, Vector> calibration_backward(const CalibrationParams& cal,
                                               const CalibrationTrace& trace, double grad_logit,
                                               CalibrationParams& grad);

// Full inference path: softmax(classifier(encoder(x))).
Vector predict(const ModelParams& params, std::span<const double> x);

// Features and softmax outputs for every training instance under one
// parameter snapshot. Consumers treat the rows as constants.
struct PredictionCache {
  Matrix features;  // n x V
  Matrix probs;     // n x m
  std::size_t epoch = 0;
  std::size_t step = 0;

  bool operator==(const PredictionCache&) const = default;
};

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  int version = kCheckpointVersion;
  std::string tool_version;
  nlohmann::json config = nlohmann::json::object();
  ModelDims dims;
  ModelParams params;
  Matrix centers;
  Vector lambda;
  std::size_t epoch = 0;
  std::vector<numerics::AdamState> param_adam;  // aligned with tensors()
  numerics::AdamState center_adam;
  numerics::SparseAdamState lambda_adam;
  Rng::State rng_state{};

  bool operator==(const Checkpoint&) const = default;
};

std::string serialize_checkpoint(const Checkpoint& ck);
Checkpoint parse_checkpoint(const std::string& text);

// Writes to a temporary sibling and renames over the target.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Little-endian f64 payload codec used by checkpoints.
std::string encode_f64_base64(std::span<const double> values);
Vector decode_f64_base64(std::string_view text);

}  // namespace ldlva::model
