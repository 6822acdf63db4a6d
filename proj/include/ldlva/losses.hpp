#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ldlva/data.hpp"
#include "ldlva/ldl.hpp"
#include "ldlva/model.hpp"
#include "ldlva/neighborhood.hpp"

namespace ldlva::losses {

using numerics::Matrix;
using numerics::Vector;

inline constexpr double kLogEps = 1e-12;

// One center per class, rows of an m x V matrix.
struct Centers {
  Matrix mu;

  static Centers zeros(std::size_t num_classes, std::size_t feature_dim) {
    return {Matrix(num_classes, feature_dim)};
  }
  bool operator==(const Centers&) const = default;
};

struct LossBreakdown {
  double cls = 0.0;
  double discriminative = 0.0;
  double total = 0.0;
  double gamma = 0.0;  // effective weight; 0 when the discriminative loss is off
};

// -sum_j d_j log(max(f_j, eps))
double cross_entropy(std::span<const double> d, std::span<const double> f, double eps = kLogEps);

// dL_cls/dlambda for one instance: CE(d_tilde, f) - CE(l, f).
double lambda_grad_closed_form(std::span<const double> logical, std::span<const double> aggregated,
                               std::span<const double> f, double eps = kLogEps);

// Uncertainty-weighted pull toward class centers plus repulsion between
// every ordered pair of centers:
//   1/2 sum_i (1 - lambda_i) |v_i - mu_{y_i}|^2 + sum_j sum_{k!=j} exp(-|mu_j - mu_k|^2 / sqrt(V))
double discriminative_loss(std::span<const Vector> features, std::span<const std::size_t> labels,
                           std::span<const double> lambdas, const Centers& centers);

// The two terms separately (pull, repulsion).
std::pair<double, double> discriminative_terms(std::span<const Vector> features,
                                               std::span<const std::size_t> labels,
                                               std::span<const double> lambdas, const Centers& centers);

double total_loss(double cls, double discriminative, double gamma);

enum class LambdaGradMode { kClsOnly, kFull };
enum class NeighborGradMode { kDetached, kCoupled };

// Switches that shape the objective.
struct LossOptions {
  bool ld_on = true;  // build target distributions (off: d = l)
  bool as_on = true;  // calibration scores (off: zeta = 1)
  bool uf_on = true;  // per-instance lambda (off: shared_lambda for everyone)
  bool dl_on = true;  // discriminative loss
  double gamma = 0.1;
  double shared_lambda = 0.5;
  LambdaGradMode lambda_grad = LambdaGradMode::kClsOnly;
  NeighborGradMode neighbor_grad = NeighborGradMode::kDetached;
  double log_eps = kLogEps;
};

// Everything needed to evaluate the objective on one batch.
struct BatchInputs {
  const data::Dataset* train = nullptr;
  const neighborhood::NeighborTable* table = nullptr;
  const model::PredictionCache* cache = nullptr;  // required when detached and ld_on
  std::span<const std::size_t> batch;
};

// Cached intermediates of one forward pass.
struct InstanceState {
  std::size_t id = 0;
  std::size_t live_row = 0;
  Vector logical;
  double lambda = 0.0;
  std::vector<model::CalibrationTrace> calibration;
  Vector zetas;
  std::vector<Vector> neighbor_probs;  // p_k used in aggregation
  ldl::DistributionRecord distribution;
};

struct ForwardPass {
  std::vector<std::size_t> batch;
  std::vector<std::size_t> live_ids;     // rows evaluated under current parameters
  std::vector<long> live_row_of;         // instance id -> live row or -1
  std::vector<model::EncoderTrace> encoder;
  std::vector<Vector> features;
  std::vector<Vector> probs;
  std::vector<InstanceState> instances;
  LossBreakdown loss;
  bool complete = false;
};

struct GradientSet {
  model::ModelParams model;
  Matrix centers;
  Vector lambda;                        // dense over training instances
  std::vector<std::size_t> lambda_ids;  // entries that received a gradient
};

ForwardPass forward(const model::ModelParams& params, const Centers& centers,
                    const ldl::LambdaStore& lambdas, const LossOptions& options, const BatchInputs& inputs);

GradientSet backward(const model::ModelParams& params, const Centers& centers,
                     const ldl::LambdaStore& lambdas, const LossOptions& options,
                     const BatchInputs& inputs, const ForwardPass& pass);

}  // namespace ldlva::losses
