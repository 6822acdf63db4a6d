#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "ldlva/data.hpp"

namespace ldlva::neighborhood {

// K nearest neighbors per instance in valence-arousal space, with their
// Gaussian-kernel similarities. Rows are sorted by ascending distance, ties
// by ascending index; an instance never lists itself.
class NeighborTable {
 public:
  NeighborTable() = default;
  NeighborTable(std::size_t n, std::size_t k, double delta)
      : n_(n), k_(k), delta_(delta), indices_(n * k), similarity_(n * k) {}

  std::size_t size() const noexcept { return n_; }
  std::size_t k() const noexcept { return k_; }
  double delta() const noexcept { return delta_; }

  std::span<const std::size_t> neighbors(std::size_t i) const { return {indices_.data() + i * k_, k_}; }
  std::span<const double> similarities(std::size_t i) const { return {similarity_.data() + i * k_, k_}; }
  std::span<std::size_t> neighbors(std::size_t i) { return {indices_.data() + i * k_, k_}; }
  std::span<double> similarities(std::size_t i) { return {similarity_.data() + i * k_, k_}; }

  bool operator==(const NeighborTable&) const = default;

 private:
  std::size_t n_ = 0;
  std::size_t k_ = 0;
  double delta_ = 0.0;
  std::vector<std::size_t> indices_;
  std::vector<double> similarity_;
};

// exp(-|a_i - a_k|^2 / delta^2)
double local_similarity(const data::VaPoint& a_i, const data::VaPoint& a_k, double delta);

// Effective K after clamping to n - 1.
std::size_t effective_k(std::size_t requested, std::size_t n);

// Row-parallel (OpenMP) exact KNN. Output does not depend on the thread count.
NeighborTable build_neighbor_table(const data::Dataset& dataset, std::size_t k, double delta);

// Single-threaded reference: full sort per row.
NeighborTable build_neighbor_table_serial(const data::Dataset& dataset, std::size_t k, double delta);

// JSON cache keyed by (dataset hash, K, delta). load returns false on key mismatch.
void save_neighbor_table(const NeighborTable& table, std::uint64_t dataset_hash,
                         const std::filesystem::path& path);
bool load_neighbor_table(const std::filesystem::path& path, std::uint64_t dataset_hash,
                         std::size_t k, double delta, NeighborTable& out);

}  // namespace ldlva::neighborhood
