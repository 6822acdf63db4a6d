#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ldlva/numerics.hpp"

namespace ldlva::ldl {

using numerics::Vector;

// Per-training-instance uncertainty factors, indexed by instance id.
struct LambdaStore {
  Vector values;

  static LambdaStore zeros(std::size_t n) { return {Vector(n, 0.0)}; }
  std::size_t size() const noexcept { return values.size(); }
  bool operator==(const LambdaStore&) const = default;
};

// c_k = zeta_k * s_k over the K neighbor slots of one row. Slots outside the
// row are implicitly zero.
Vector contribution_degrees(std::span<const double> similarities, std::span<const double> zetas);

// Sum below which the neighborhood is treated as empty.
inline constexpr double kMinContribution = 1e-12;

struct Aggregate {
  Vector distribution;
  double total_contribution = 0.0;
  bool used_fallback = false;
};

// Contribution-weighted average of neighbor predictions. Falls back to
// `fallback` (the logical label) when the contributions sum below
// kMinContribution. Empty fallback with no usable neighbors is an error.
Aggregate aggregate_distribution(std::span<const double> contributions,
                                 std::span<const std::span<const double>> neighbor_predictions,
                                 std::span<const double> fallback);

// d = (1 - lambda) l + lambda d_tilde
Vector construct_target(std::span<const double> logical, std::span<const double> aggregated, double lambda);

// Clamps every lambda into [0, 1]; NaN raises NumericError naming the instance.
LambdaStore project_lambda(LambdaStore store);
void project_lambda_inplace(LambdaStore& store);

// Everything the target construction produced for one instance.
struct DistributionRecord {
  Vector contributions;
  Vector aggregated;
  Vector target;
  bool used_fallback = false;
};

using DistributionBatch = std::vector<DistributionRecord>;

}  // namespace ldlva::ldl
