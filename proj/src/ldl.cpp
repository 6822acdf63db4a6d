#include "ldlva/ldl.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ldlva::ldl {

Vector contribution_degrees(std::span<const double> similarities, std::span<const double> zetas) {
  numerics::require_same_size(similarities.size(), zetas.size(), "contribution_degrees");
  Vector c(similarities.size());
  for (std::size_t k = 0; k < c.size(); ++k) c[k] = zetas[k] * similarities[k];
  return c;
}

Aggregate aggregate_distribution(std::span<const double> contributions,
                                 std::span<const std::span<const double>> neighbor_predictions,
                                 std::span<const double> fallback) {
  numerics::require_same_size(contributions.size(), neighbor_predictions.size(), "aggregate_distribution");
  double total = 0.0;
  for (double c : contributions) total += c;

  Aggregate out;
  out.total_contribution = total;
  if (contributions.empty() || total < kMinContribution) {
    if (fallback.empty()) {
      throw DegenerateInputError("aggregate_distribution: no usable neighbors and no fallback");
    }
    out.distribution.assign(fallback.begin(), fallback.end());
    out.used_fallback = true;
    return out;
  }
  const std::size_t m = neighbor_predictions.front().size();
  if (!fallback.empty()) numerics::require_same_size(fallback.size(), m, "aggregate_distribution fallback");
  out.distribution.assign(m, 0.0);
  for (std::size_t k = 0; k < contributions.size(); ++k) {
    numerics::require_same_size(neighbor_predictions[k].size(), m, "aggregate_distribution prediction");
    const double w = contributions[k] / total;
    for (std::size_t j = 0; j < m; ++j) out.distribution[j] += w * neighbor_predictions[k][j];
  }
  return out;
}

Vector construct_target(std::span<const double> logical, std::span<const double> aggregated, double lambda) {
  numerics::require_same_size(logical.size(), aggregated.size(), "construct_target");
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ValidationError("lambda", "construct_target: lambda must be in [0, 1]");
  }
  Vector d(logical.size());
  for (std::size_t j = 0; j < d.size(); ++j) d[j] = (1.0 - lambda) * logical[j] + lambda * aggregated[j];
  return d;
}

void project_lambda_inplace(LambdaStore& store) {
  for (std::size_t i = 0; i < store.values.size(); ++i) {
    double& v = store.values[i];
    if (std::isnan(v)) throw NumericError("lambda of instance " + std::to_string(i) + " is NaN");
    v = std::clamp(v, 0.0, 1.0);
  }
}

LambdaStore project_lambda(LambdaStore store) {
  project_lambda_inplace(store);
  return store;
}

}  // namespace ldlva::ldl
