#include "ldlva/neighborhood.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

namespace ldlva::neighborhood {

namespace {

struct Candidate {
  double dist2;
  std::size_t index;
  bool operator<(const Candidate& o) const {
    return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index);
  }
};

double va_distance2(const data::VaPoint& a, const data::VaPoint& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  return dx * dx + dy * dy;
}

void check_args(const data::Dataset& dataset, std::size_t k, double delta) {
  if (dataset.size() < 2) throw InsufficientDataError("neighbor table needs at least 2 instances");
  if (k < 1) throw ValidationError("K", "K must be >= 1");
  if (!(delta > 0.0)) throw ValidationError("delta", "delta must be > 0");
}

void fill_row(const data::Dataset& dataset, std::size_t i, std::size_t k, double delta,
              std::vector<Candidate>& scratch, NeighborTable& table) {
  const std::size_t n = dataset.size();
  scratch.clear();
  const auto& ai = dataset.instances[i].va;
  for (std::size_t j = 0; j < n; ++j) {
    if (j != i) scratch.push_back({va_distance2(ai, dataset.instances[j].va), j});
  }
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k), scratch.end());
  auto idx = table.neighbors(i);
  auto sim = table.similarities(i);
  const double inv_d2 = 1.0 / (delta * delta);
  for (std::size_t s = 0; s < k; ++s) {
    idx[s] = scratch[s].index;
    sim[s] = std::exp(-scratch[s].dist2 * inv_d2);
  }
}

}  // namespace

double local_similarity(const data::VaPoint& a_i, const data::VaPoint& a_k, double delta) {
  if (!(delta > 0.0)) throw ValidationError("delta", "delta must be > 0");
  return std::exp(-va_distance2(a_i, a_k) / (delta * delta));
}

std::size_t effective_k(std::size_t requested, std::size_t n) {
  return n == 0 ? 0 : std::min(requested, n - 1);
}

NeighborTable build_neighbor_table(const data::Dataset& dataset, std::size_t k, double delta) {
  check_args(dataset, k, delta);
  const std::size_t n = dataset.size();
  k = effective_k(k, n);
  NeighborTable table(n, k, delta);
  const auto rows = static_cast<long>(n);
#pragma omp parallel
  {
    std::vector<Candidate> scratch;
    scratch.reserve(n);
#pragma omp for schedule(static)
    for (long i = 0; i < rows; ++i) {
      fill_row(dataset, static_cast<std::size_t>(i), k, delta, scratch, table);
    }
  }
  return table;
}

NeighborTable build_neighbor_table_serial(const data::Dataset& dataset, std::size_t k, double delta) {
  check_args(dataset, k, delta);
  const std::size_t n = dataset.size();
  k = effective_k(k, n);
  NeighborTable table(n, k, delta);
  std::vector<Candidate> all;
  for (std::size_t i = 0; i < n; ++i) {
    all.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) all.push_back({va_distance2(dataset.instances[i].va, dataset.instances[j].va), j});
    }
    std::sort(all.begin(), all.end());
    for (std::size_t s = 0; s < k; ++s) {
      table.neighbors(i)[s] = all[s].index;
      table.similarities(i)[s] = std::exp(-all[s].dist2 / (delta * delta));
    }
  }
  return table;
}

void save_neighbor_table(const NeighborTable& table, std::uint64_t dataset_hash,
                         const std::filesystem::path& path) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto idx = table.neighbors(i);
    const auto sim = table.similarities(i);
    rows.push_back({{"idx", std::vector<std::size_t>(idx.begin(), idx.end())},
                    {"sim", std::vector<double>(sim.begin(), sim.end())}});
  }
  std::ostringstream hash;
  hash << std::hex << dataset_hash;
  const nlohmann::json j{{"format", "ldlva-neighbors"},
                         {"version", 1},
                         {"dataset_hash", hash.str()},
                         {"n", table.size()},
                         {"K", table.k()},
                         {"delta", table.delta()},
                         {"rows", rows}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write neighbor cache " + path.string());
  out << j.dump() << '\n';
}

bool load_neighbor_table(const std::filesystem::path& path, std::uint64_t dataset_hash,
                         std::size_t k, double delta, NeighborTable& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    std::ostringstream hash;
    hash << std::hex << dataset_hash;
    const std::size_t n = j.at("n").get<std::size_t>();
    if (j.at("dataset_hash").get<std::string>() != hash.str() ||
        j.at("K").get<std::size_t>() != effective_k(k, n) || j.at("delta").get<double>() != delta) {
      return false;
    }
    NeighborTable table(n, effective_k(k, n), delta);
    const auto& rows = j.at("rows");
    if (rows.size() != n) throw ParseError(0, "neighbor cache: row count mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      const auto idx = rows[i].at("idx").get<std::vector<std::size_t>>();
      const auto sim = rows[i].at("sim").get<std::vector<double>>();
      if (idx.size() != table.k() || sim.size() != table.k()) {
        throw ParseError(0, "neighbor cache: row width mismatch");
      }
      std::copy(idx.begin(), idx.end(), table.neighbors(i).begin());
      std::copy(sim.begin(), sim.end(), table.similarities(i).begin());
    }
    out = std::move(table);
    return true;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("neighbor cache: ") + e.what());
  }
}

}  // namespace ldlva::neighborhood
