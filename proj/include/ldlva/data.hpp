#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldlva/numerics.hpp"

namespace ldlva::data {

using numerics::Rng;
using numerics::Vector;

using VaPoint = std::array<double, 2>;  // (valence, arousal)

struct Instance {
  std::size_t id = 0;
  Vector x;
  VaPoint va{0.0, 0.0};
  std::size_t observed_label = 0;
  std::size_t clean_label = 0;  // hidden from training
  std::optional<Vector> gt_distribution;

  bool flipped() const noexcept { return observed_label != clean_label; }
  bool operator==(const Instance&) const = default;
};

struct Dataset {
  std::vector<Instance> instances;
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  nlohmann::json meta = nlohmann::json::object();

  std::size_t size() const noexcept { return instances.size(); }

  // Throws ValidationError on the first broken invariant.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

// Desk-scale stand-in for an emotion corpus: class VA anchors on a circle,
// Gaussian feature clusters around per-class prototypes, and a fraction of
// instances blended between adjacent classes.
struct SyntheticSpec {
  std::size_t num_classes = 3;
  std::size_t per_class = 50;
  std::size_t eval_per_class = 20;
  std::size_t feature_dim = 16;
  std::vector<VaPoint> anchors;  // empty: evenly spaced on a circle of anchor_radius
  double anchor_radius = 0.8;
  double prototype_scale = 3.0;
  double feature_spread = 3.0;
  double va_jitter = 0.08;
  double ambiguous_fraction = 0.3;
  double blend_min = 0.2;
  double blend_max = 0.45;

  void validate() const;
  std::vector<VaPoint> resolved_anchors() const;
};

nlohmann::json to_json(const SyntheticSpec& spec);
// Rejects unknown keys; missing keys keep their defaults.
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j, SyntheticSpec base = {});

struct SplitDatasets {
  Dataset train;
  Dataset eval;
};

// Draws class prototypes, then per_class training instances per class, then
// eval_per_class held-out instances per class from the same prototypes.
SplitDatasets generate_synthetic_split(const SyntheticSpec& spec, Rng& rng);

// Training portion only.
Dataset generate_synthetic(const SyntheticSpec& spec, Rng& rng);

// Flips exactly round(ratio * n) observed labels to a uniformly chosen other class.
Dataset inject_noise(const Dataset& dataset, double ratio, Rng& rng);

// Deterministic random holdout; ids are re-densified in both parts.
SplitDatasets split_dataset(const Dataset& dataset, double eval_fraction, Rng& rng);

// One header line {"m","F","meta"} followed by one instance per line.
void write_jsonl(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_jsonl(const std::filesystem::path& path);

std::string to_jsonl(const Dataset& dataset);
Dataset parse_jsonl(std::string_view text);

// FNV-1a over dims, VA and labels; keys neighbor-table caches.
std::uint64_t dataset_hash(const Dataset& dataset);

Vector one_hot(std::size_t label, std::size_t num_classes);

}  // namespace ldlva::data
