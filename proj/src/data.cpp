#include "ldlva/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>

namespace ldlva::data {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

void check_field(bool ok, const char* field, const std::string& message) {
  if (!ok) throw ValidationError(field, message);
}

}  // namespace

Vector one_hot(std::size_t label, std::size_t num_classes) {
  if (label >= num_classes) throw DimensionError("one_hot: label out of range");
  Vector v(num_classes, 0.0);
  v[label] = 1.0;
  return v;
}

void Dataset::validate() const {
  check_field(num_classes >= 1, "m", "num_classes must be >= 1");
  check_field(feature_dim >= 1, "F", "feature_dim must be >= 1");
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const Instance& inst = instances[i];
    const std::string where = "instance " + std::to_string(i) + ": ";
    check_field(inst.id == i, "id", where + "ids must be dense 0..n-1");
    check_field(inst.x.size() == feature_dim, "x",
                where + "feature vector has dim " + std::to_string(inst.x.size()) +
                    ", expected " + std::to_string(feature_dim));
    check_field(numerics::all_finite(inst.x), "x", where + "non-finite feature");
    for (double a : inst.va) {
      check_field(std::isfinite(a) && a >= -1.0 && a <= 1.0, "va",
                  where + "valence-arousal outside [-1, 1]");
    }
    check_field(inst.observed_label < num_classes, "y", where + "observed label out of range");
    check_field(inst.clean_label < num_classes, "y_clean", where + "clean label out of range");
    if (inst.gt_distribution) {
      const Vector& gt = *inst.gt_distribution;
      check_field(gt.size() == num_classes, "gt", where + "gt distribution has wrong length");
      double total = 0.0;
      for (double p : gt) {
        check_field(std::isfinite(p) && p >= 0.0, "gt", where + "gt entries must be >= 0");
        total += p;
      }
      check_field(std::abs(total - 1.0) <= 1e-9, "gt", where + "gt distribution must sum to 1");
    }
  }
}

void SyntheticSpec::validate() const {
  check_field(num_classes >= 1, "num_classes", "num_classes must be ≥ 1");
  check_field(per_class >= 1, "per_class", "per_class must be ≥ 1");
  check_field(feature_dim >= 1, "feature_dim", "feature_dim must be ≥ 1");
  check_field(prototype_scale > 0.0, "prototype_scale", "prototype_scale must be > 0");
  check_field(feature_spread > 0.0, "feature_spread", "feature_spread must be > 0");
  check_field(va_jitter > 0.0, "va_jitter", "va_jitter must be > 0");
  check_field(ambiguous_fraction >= 0.0 && ambiguous_fraction <= 1.0, "ambiguous_fraction",
              "ambiguous_fraction must be in [0, 1]");
  check_field(blend_min >= 0.0 && blend_min <= blend_max && blend_max <= 1.0, "blend_min",
              "blend range must satisfy 0 <= blend_min <= blend_max <= 1");
  if (anchors.empty()) {
    check_field(anchor_radius > 0.0 && anchor_radius <= 1.0, "anchor_radius",
                "anchor_radius must be in (0, 1]");
  } else {
    check_field(anchors.size() == num_classes, "anchors", "need one anchor per class");
    for (const auto& a : anchors) {
      check_field(std::abs(a[0]) <= 1.0 && std::abs(a[1]) <= 1.0, "anchors",
                  "anchors must lie inside [-1, 1]^2");
    }
  }
}

std::vector<VaPoint> SyntheticSpec::resolved_anchors() const {
  if (!anchors.empty()) return anchors;
  std::vector<VaPoint> out(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) /
                         static_cast<double>(num_classes);
    out[c] = {anchor_radius * std::cos(angle), anchor_radius * std::sin(angle)};
  }
  return out;
}

json to_json(const SyntheticSpec& spec) {
  json anchors = json::array();
  for (const auto& a : spec.anchors) anchors.push_back({a[0], a[1]});
  return json{{"num_classes", spec.num_classes},
              {"per_class", spec.per_class},
              {"eval_per_class", spec.eval_per_class},
              {"feature_dim", spec.feature_dim},
              {"anchors", anchors},
              {"anchor_radius", spec.anchor_radius},
              {"prototype_scale", spec.prototype_scale},
              {"feature_spread", spec.feature_spread},
              {"va_jitter", spec.va_jitter},
              {"ambiguous_fraction", spec.ambiguous_fraction},
              {"blend_min", spec.blend_min},
              {"blend_max", spec.blend_max}};
}

SyntheticSpec synthetic_spec_from_json(const json& j, SyntheticSpec base) {
  if (!j.is_object()) throw ConfigError("synthetic", "synthetic spec must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "num_classes") base.num_classes = value.get<std::size_t>();
      else if (key == "per_class") base.per_class = value.get<std::size_t>();
      else if (key == "eval_per_class") base.eval_per_class = value.get<std::size_t>();
      else if (key == "feature_dim") base.feature_dim = value.get<std::size_t>();
      else if (key == "anchors") {
        base.anchors.clear();
        for (const auto& a : value) base.anchors.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
      } else if (key == "anchor_radius") base.anchor_radius = value.get<double>();
      else if (key == "prototype_scale") base.prototype_scale = value.get<double>();
      else if (key == "feature_spread") base.feature_spread = value.get<double>();
      else if (key == "va_jitter") base.va_jitter = value.get<double>();
      else if (key == "ambiguous_fraction") base.ambiguous_fraction = value.get<double>();
      else if (key == "blend_min") base.blend_min = value.get<double>();
      else if (key == "blend_max") base.blend_max = value.get<double>();
      else throw ConfigError(key, "unknown synthetic spec key '" + key + "'");
    } catch (const json::exception& e) {
      throw ConfigError(key, "bad value for '" + key + "': " + e.what());
    }
  }
  return base;
}

namespace {

std::vector<Instance> draw_instances(const SyntheticSpec& spec,
                                     const std::vector<Vector>& prototypes,
                                     const std::vector<VaPoint>& anchors, std::size_t per_class,
                                     Rng& rng) {
  const std::size_t m = spec.num_classes;
  const auto ambiguous_count = static_cast<std::size_t>(
      std::llround(spec.ambiguous_fraction * static_cast<double>(per_class)));
  std::vector<Instance> out;
  out.reserve(m * per_class);
  for (std::size_t c = 0; c < m; ++c) {
    const std::size_t partner = (c + 1) % m;
    for (std::size_t j = 0; j < per_class; ++j) {
      const bool ambiguous = j < ambiguous_count;
      const double w = ambiguous ? rng.uniform(spec.blend_min, spec.blend_max) : 0.0;

      Instance inst;
      inst.id = out.size();
      inst.x.resize(spec.feature_dim);
      for (std::size_t f = 0; f < spec.feature_dim; ++f) {
        const double centre = (1.0 - w) * prototypes[c][f] + w * prototypes[partner][f];
        inst.x[f] = centre + spec.feature_spread * rng.normal();
      }
      for (std::size_t d = 0; d < 2; ++d) {
        const double centre = (1.0 - w) * anchors[c][d] + w * anchors[partner][d];
        inst.va[d] = std::clamp(centre + spec.va_jitter * rng.normal(), -1.0, 1.0);
      }
      Vector gt(m, 0.0);
      gt[c] += 1.0 - w;
      gt[partner] += w;
      inst.clean_label = numerics::argmax(gt);
      inst.observed_label = inst.clean_label;
      inst.gt_distribution = std::move(gt);
      out.push_back(std::move(inst));
    }
  }
  return out;
}

Dataset make_dataset(const SyntheticSpec& spec, std::vector<Instance> instances, std::uint64_t seed,
                     const char* split) {
  Dataset ds;
  ds.instances = std::move(instances);
  ds.num_classes = spec.num_classes;
  ds.feature_dim = spec.feature_dim;
  ds.meta = json{{"generator", "synthetic"},
                 {"spec", to_json(spec)},
                 {"seed", seed},
                 {"split", split},
                 {"noise_ratio", 0.0}};
  return ds;
}

}  // namespace

SplitDatasets generate_synthetic_split(const SyntheticSpec& spec, Rng& rng) {
  spec.validate();
  const std::uint64_t seed = rng.seed();
  std::vector<Vector> prototypes(spec.num_classes, Vector(spec.feature_dim));
  for (auto& p : prototypes) {
    for (double& v : p) v = spec.prototype_scale * rng.normal();
  }
  const auto anchors = spec.resolved_anchors();
  auto train = draw_instances(spec, prototypes, anchors, spec.per_class, rng);
  auto eval = draw_instances(spec, prototypes, anchors, spec.eval_per_class, rng);
  return {make_dataset(spec, std::move(train), seed, "train"),
          make_dataset(spec, std::move(eval), seed, "eval")};
}

Dataset generate_synthetic(const SyntheticSpec& spec, Rng& rng) {
  SyntheticSpec train_only = spec;
  train_only.eval_per_class = 0;
  auto split = generate_synthetic_split(train_only, rng);
  split.train.meta["spec"] = to_json(spec);
  return std::move(split.train);
}

Dataset inject_noise(const Dataset& dataset, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ValidationError("ratio", "noise ratio must be in [0, 1]");
  const std::size_t n = dataset.size();
  const auto flips = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  const std::size_t m = dataset.num_classes;
  if (flips > 0 && m < 2) {
    throw NoAlternativeError("inject_noise: need at least 2 classes to flip labels");
  }

  Dataset out = dataset;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t t = 0; t < flips; ++t) {
    const std::size_t j = t + rng.uniform_index(n - t);
    std::swap(order[t], order[j]);
  }
  for (std::size_t t = 0; t < flips; ++t) {
    Instance& inst = out.instances[order[t]];
    const std::size_t r = rng.uniform_index(m - 1);
    inst.observed_label = r < inst.observed_label ? r : r + 1;
  }
  out.meta["noise_ratio"] = ratio;
  out.meta["noise_seed"] = rng.seed();
  out.meta["noise_flips"] = flips;
  return out;
}

SplitDatasets split_dataset(const Dataset& dataset, double eval_fraction, Rng& rng) {
  if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) {
    throw ValidationError("eval_fraction", "eval_fraction must be in [0, 1)");
  }
  const std::size_t n = dataset.size();
  const auto n_eval = static_cast<std::size_t>(
      std::llround(eval_fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<bool> is_eval(n, false);
  for (std::size_t t = 0; t < n_eval; ++t) is_eval[order[t]] = true;

  SplitDatasets out;
  for (Dataset* part : {&out.train, &out.eval}) {
    part->num_classes = dataset.num_classes;
    part->feature_dim = dataset.feature_dim;
    part->meta = dataset.meta;
  }
  out.train.meta["split"] = "train";
  out.eval.meta["split"] = "eval";
  out.train.meta["split_seed"] = out.eval.meta["split_seed"] = rng.seed();
  for (std::size_t i = 0; i < n; ++i) {
    Dataset& part = is_eval[i] ? out.eval : out.train;
    Instance inst = dataset.instances[i];
    inst.id = part.instances.size();
    part.instances.push_back(std::move(inst));
  }
  return out;
}

std::string to_jsonl(const Dataset& dataset) {
  std::string out;
  ordered_json header;
  header["m"] = dataset.num_classes;
  header["F"] = dataset.feature_dim;
  header["meta"] = dataset.meta;
  out += header.dump();
  out += '\n';
  for (const Instance& inst : dataset.instances) {
    ordered_json line;
    line["id"] = inst.id;
    line["x"] = inst.x;
    line["va"] = {inst.va[0], inst.va[1]};
    line["y"] = inst.observed_label;
    line["y_clean"] = inst.clean_label;
    line["gt"] = inst.gt_distribution ? ordered_json(*inst.gt_distribution) : ordered_json(nullptr);
    out += line.dump();
    out += '\n';
  }
  return out;
}

Dataset parse_jsonl(std::string_view text) {
  Dataset ds;
  bool have_header = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(line_no, "expected a JSON object");

    try {
      if (!have_header) {
        ds.num_classes = j.at("m").get<std::size_t>();
        ds.feature_dim = j.at("F").get<std::size_t>();
        if (j.contains("meta")) ds.meta = j.at("meta");
        have_header = true;
        continue;
      }
      Instance inst;
      inst.id = j.at("id").get<std::size_t>();
      inst.x = j.at("x").get<Vector>();
      const auto va = j.at("va").get<Vector>();
      if (va.size() != 2) throw ValidationError("va", "line " + std::to_string(line_no) + ": va must have 2 entries");
      inst.va = {va[0], va[1]};
      inst.observed_label = j.at("y").get<std::size_t>();
      inst.clean_label = j.contains("y_clean") ? j.at("y_clean").get<std::size_t>() : inst.observed_label;
      if (j.contains("gt") && !j.at("gt").is_null()) inst.gt_distribution = j.at("gt").get<Vector>();
      if (inst.x.size() != ds.feature_dim) {
        throw ValidationError("x", "line " + std::to_string(line_no) + ": feature vector has dim " +
                                       std::to_string(inst.x.size()) + ", header says F=" +
                                       std::to_string(ds.feature_dim));
      }
      ds.instances.push_back(std::move(inst));
    } catch (const json::exception& e) {
      throw ParseError(line_no, std::string("bad field: ") + e.what());
    }
  }
  if (!have_header) throw ParseError(0, "missing header record");
  try {
    ds.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(e.field(), std::string("dataset invalid: ") + e.what());
  }
  return ds;
}

void write_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << to_jsonl(dataset);
  if (!out) throw DataError("failed writing " + path.string());
}

Dataset read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_jsonl(buf.str());
}

std::uint64_t dataset_hash(const Dataset& dataset) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t word) {
    for (int b = 0; b < 8; ++b) {
      h ^= (word >> (8 * b)) & 0xFFu;
      h *= 0x100000001b3ULL;
    }
  };
  mix(dataset.size());
  mix(dataset.num_classes);
  mix(dataset.feature_dim);
  for (const Instance& inst : dataset.instances) {
    mix(std::bit_cast<std::uint64_t>(inst.va[0]));
    mix(std::bit_cast<std::uint64_t>(inst.va[1]));
    mix(inst.observed_label);
  }
  return h;
}

}  // namespace ldlva::data
