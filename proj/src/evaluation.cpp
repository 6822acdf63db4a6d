#include "ldlva/evaluation.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace ldlva::evaluation {

using json = nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kDataStream = 11;
constexpr std::uint64_t kNoiseStream = 12;
constexpr std::uint64_t kTrainStream = 13;

std::string format_level(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

}  // namespace

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  if (predictions.empty()) throw ValidationError("predictions", "accuracy: empty input");
  numerics::require_same_size(predictions.size(), labels.size(), "accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double jeffrey_divergence(std::span<const double> f, std::span<const double> d, double eps) {
  numerics::require_same_size(f.size(), d.size(), "jeffrey_divergence");
  const auto smooth = [eps](std::span<const double> p) {
    numerics::Vector q(p.size());
    double total = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) total += (q[j] = p[j] + eps);
    for (double& x : q) x /= total;
    return q;
  };
  const auto fs = smooth(f);
  const auto ds = smooth(d);
  double sum = 0.0;
  // Swapping the arguments negates both factors, so the value is exactly symmetric.
  for (std::size_t j = 0; j < fs.size(); ++j) sum += (ds[j] - fs[j]) * (std::log(ds[j]) - std::log(fs[j]));
  return sum;
}

std::string fingerprint(const json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream s;
  s << std::hex << h;
  return s.str();
}

EvalReport evaluate(const model::ModelParams& params, const data::Dataset& dataset, const json& config) {
  if (dataset.size() == 0) throw ValidationError("dataset", "evaluate: empty dataset");
  if (dataset.feature_dim != params.encoder.layers.front().in() ||
      dataset.num_classes != params.classifier.head.out()) {
    throw DataError("evaluate: dataset dimensions do not match the model");
  }
  EvalReport r;
  r.n = dataset.size();
  r.config_fingerprint = fingerprint(config);
  const std::size_t m = dataset.num_classes;

  std::vector<std::size_t> pred(r.n), clean(r.n);
  std::vector<std::size_t> class_total(m, 0), class_hits(m, 0);
  double j_all = 0.0, j_amb = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) {
    const auto& inst = dataset.instances[i];
    const auto f = model::predict(params, inst.x);
    pred[i] = numerics::argmax(f);
    clean[i] = inst.clean_label;
    ++class_total[inst.clean_label];
    class_hits[inst.clean_label] += pred[i] == inst.clean_label;
    if (inst.gt_distribution) {
      const double jd = jeffrey_divergence(f, *inst.gt_distribution);
      j_all += jd;
      ++r.n_with_gt;
      const double peak = *std::max_element(inst.gt_distribution->begin(), inst.gt_distribution->end());
      if (peak < 1.0) {
        j_amb += jd;
        ++r.n_ambiguous;
      }
    }
  }
  r.accuracy = accuracy(pred, clean);
  r.per_class_accuracy.resize(m);
  for (std::size_t c = 0; c < m; ++c) {
    r.per_class_accuracy[c] =
        class_total[c] ? static_cast<double>(class_hits[c]) / static_cast<double>(class_total[c]) : kNaN;
  }
  r.jeffrey = r.n_with_gt ? j_all / static_cast<double>(r.n_with_gt) : kNaN;
  r.jeffrey_ambiguous = r.n_ambiguous ? j_amb / static_cast<double>(r.n_ambiguous) : kNaN;
  return r;
}

json to_json(const EvalReport& r) {
  json per_class = json::array();
  for (double a : r.per_class_accuracy) per_class.push_back(number_or_null(a));
  return json{{"accuracy", r.accuracy},
              {"per_class_accuracy", per_class},
              {"jeffrey", number_or_null(r.jeffrey)},
              {"jeffrey_ambiguous", number_or_null(r.jeffrey_ambiguous)},
              {"n", r.n},
              {"n_with_gt", r.n_with_gt},
              {"n_ambiguous", r.n_ambiguous},
              {"config_fingerprint", r.config_fingerprint}};
}

void summarize(ExperimentCell& cell) {
  std::vector<const SeedResult*> ok;
  for (const auto& run : cell.runs) {
    if (run.ok) ok.push_back(&run);
  }
  cell.succeeded = ok.size();
  if (ok.empty()) {
    cell.mean_acc = cell.stderr_acc = cell.mean_jeffrey = cell.mean_jeffrey_ambiguous = kNaN;
    return;
  }
  const double k = static_cast<double>(ok.size());
  double acc = 0.0, jef = 0.0, jamb = 0.0;
  for (const auto* r : ok) {
    acc += r->acc;
    jef += r->jeffrey;
    jamb += r->jeffrey_ambiguous;
  }
  cell.mean_acc = acc / k;
  cell.mean_jeffrey = jef / k;
  cell.mean_jeffrey_ambiguous = jamb / k;
  if (ok.size() < 2) {
    cell.stderr_acc = 0.0;
    return;
  }
  double ss = 0.0;
  for (const auto* r : ok) ss += (r->acc - cell.mean_acc) * (r->acc - cell.mean_acc);
  cell.stderr_acc = std::sqrt(ss / (k - 1.0)) / std::sqrt(k);
}

const ExperimentCell* ExperimentMatrix::find(const std::string& method, const std::string& level,
                                             const std::string& condition) const {
  for (const auto& c : cells) {
    if (c.method == method && c.level == level && c.condition == condition) return &c;
  }
  return nullptr;
}

json to_json(const ExperimentMatrix& matrix) {
  json cells = json::array();
  for (const auto& c : matrix.cells) {
    json runs = json::array();
    for (const auto& r : c.runs) {
      json run{{"seed", r.seed}, {"ok", r.ok}};
      if (r.ok) {
        run["acc"] = r.acc;
        run["jeffrey"] = number_or_null(r.jeffrey);
        run["jeffrey_ambiguous"] = number_or_null(r.jeffrey_ambiguous);
        run["lambda_clean_mean"] = number_or_null(r.lambda_clean_mean);
        run["lambda_flipped_mean"] = number_or_null(r.lambda_flipped_mean);
        run["wall_time_s"] = r.wall_time_s;
      } else {
        run["error"] = r.error;
      }
      runs.push_back(run);
    }
    cells.push_back(json{{"method", c.method},
                         {"level", c.level},
                         {"condition", c.condition},
                         {"runs", runs},
                         {"succeeded", c.succeeded},
                         {"mean_acc", number_or_null(c.mean_acc)},
                         {"stderr_acc", number_or_null(c.stderr_acc)},
                         {"mean_jeffrey", number_or_null(c.mean_jeffrey)},
                         {"mean_jeffrey_ambiguous", number_or_null(c.mean_jeffrey_ambiguous)}});
  }
  return json{{"kind", matrix.kind},
              {"tool_version", training::kToolVersion},
              {"config", matrix.config},
              {"warnings", matrix.warnings},
              {"cells", cells}};
}

std::string to_csv(const ExperimentMatrix& matrix) {
  std::string out = "# ";
  out += training::kToolVersion;
  out += " config=" + matrix.config.dump() + "\n";
  out += "method,ratio_or_setting_or_k,seed,acc,jeffrey,wall_time_s,condition,jeffrey_ambiguous,"
         "lambda_clean_mean,lambda_flipped_mean,error\n";
  for (const auto& c : matrix.cells) {
    for (const auto& r : c.runs) {
      std::string error = r.error;
      for (char& ch : error) {
        if (ch == ',' || ch == '\n') ch = ';';
      }
      out += c.method + "," + c.level + "," + std::to_string(r.seed) + "," +
             (r.ok ? format_double(r.acc) : "nan") + "," + (r.ok ? format_double(r.jeffrey) : "nan") + "," +
             format_double(r.wall_time_s) + "," + c.condition + "," +
             (r.ok ? format_double(r.jeffrey_ambiguous) : "nan") + "," +
             (r.ok ? format_double(r.lambda_clean_mean) : "nan") + "," +
             (r.ok ? format_double(r.lambda_flipped_mean) : "nan") + "," + error + "\n";
    }
  }
  return out;
}

bool is_known_method(const std::string& method) {
  return method == "baseline_ce" || method == "ldlva" || method == "setting_i" || method == "setting_ii" ||
         method == "setting_iii" || method == "setting_iv" || method == "setting_v";
}

training::TrainConfig configure_method(const training::TrainConfig& base, const std::string& method) {
  using training::Setting;
  if (method == "baseline_ce" || method == "setting_i") return training::apply_setting(base, Setting::kI);
  if (method == "ldlva" || method == "setting_v") return training::apply_setting(base, Setting::kV);
  if (method == "setting_ii") return training::apply_setting(base, Setting::kII);
  if (method == "setting_iii") return training::apply_setting(base, Setting::kIII);
  if (method == "setting_iv") return training::apply_setting(base, Setting::kIV);
  throw ConfigError("methods", "unknown method '" + method + "'");
}

data::SplitDatasets experiment_data(const data::SyntheticSpec& spec, std::uint64_t seed, double ratio) {
  numerics::Rng data_rng(numerics::derive_seed(seed, kDataStream));
  auto split = data::generate_synthetic_split(spec, data_rng);
  if (ratio > 0.0) {
    numerics::Rng noise_rng(numerics::derive_seed(numerics::derive_seed(seed, kNoiseStream),
                                                  std::bit_cast<std::uint64_t>(ratio)));
    split.train = data::inject_noise(split.train, ratio, noise_rng);
  }
  return split;
}

std::uint64_t experiment_train_seed(std::uint64_t seed) { return numerics::derive_seed(seed, kTrainStream); }

namespace {

struct Job {
  std::size_t cell;
  std::size_t run;
  training::TrainConfig config;
  double ratio;
};

SeedResult run_job(const ExperimentSettings& settings, const Job& job, std::uint64_t seed) {
  SeedResult r;
  r.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const auto split = experiment_data(settings.spec, seed, job.ratio);
    training::TrainConfig config = job.config;
    config.seed = experiment_train_seed(seed);
    const auto result = training::train(split.train, &split.eval, config);
    const auto report = evaluate(result.checkpoint.params, split.eval);
    r.acc = report.accuracy;
    r.jeffrey = report.jeffrey;
    r.jeffrey_ambiguous = report.jeffrey_ambiguous;
    const auto& last = result.history.epochs.back();
    r.lambda_clean_mean = last.lambda_clean_mean;
    r.lambda_flipped_mean = last.lambda_flipped_mean;
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  if (settings.record_timing) {
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return r;
}

// Runs every (cell, seed) job; cells are independent so they run in parallel,
// and each result lands in its own preallocated slot.
void run_jobs(const ExperimentSettings& settings, ExperimentMatrix& matrix, const std::vector<Job>& jobs) {
  const auto count = static_cast<long>(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (long j = 0; j < count; ++j) {
    const Job& job = jobs[static_cast<std::size_t>(j)];
    const std::uint64_t seed = settings.seeds[job.run];
    matrix.cells[job.cell].runs[job.run] = run_job(settings, job, seed);
  }
  for (auto& cell : matrix.cells) summarize(cell);
}

json settings_json(const ExperimentSettings& s) {
  return json{{"synthetic", data::to_json(s.spec)},
              {"train", training::to_json(s.train)},
              {"seeds", s.seeds},
              {"record_timing", s.record_timing}};
}

void check_settings(const ExperimentSettings& s) {
  if (s.seeds.empty()) throw ConfigError("seeds", "need at least one seed");
  s.spec.validate();
  s.train.validate();
}

}  // namespace

ExperimentMatrix run_noise_benchmark(const ExperimentSettings& settings, std::span<const double> ratios,
                                     std::span<const std::string> methods) {
  check_settings(settings);
  if (ratios.empty()) throw ConfigError("ratios", "ratio list is empty");
  if (methods.empty()) throw ConfigError("methods", "method list is empty");
  for (double r : ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("ratios", "noise ratios must be in [0, 1]");
  }
  ExperimentMatrix matrix;
  matrix.kind = "noise_benchmark";
  matrix.config = settings_json(settings);
  matrix.config["ratios"] = std::vector<double>(ratios.begin(), ratios.end());
  matrix.config["methods"] = std::vector<std::string>(methods.begin(), methods.end());

  std::vector<Job> jobs;
  for (double ratio : ratios) {
    for (const auto& method : methods) {
      const auto config = configure_method(settings.train, method);
      const std::size_t cell = matrix.cells.size();
      matrix.cells.push_back({method, format_level(ratio), "ratio=" + format_level(ratio),
                              std::vector<SeedResult>(settings.seeds.size())});
      for (std::size_t s = 0; s < settings.seeds.size(); ++s) jobs.push_back({cell, s, config, ratio});
    }
  }
  run_jobs(settings, matrix, jobs);
  return matrix;
}

ExperimentMatrix run_ablation(const ExperimentSettings& settings, double noisy_ratio) {
  check_settings(settings);
  if (!(noisy_ratio >= 0.0 && noisy_ratio <= 1.0)) throw ConfigError("noisy_ratio", "noisy_ratio must be in [0, 1]");
  ExperimentMatrix matrix;
  matrix.kind = "ablation";
  matrix.config = settings_json(settings);
  matrix.config["noisy_ratio"] = noisy_ratio;

  using training::Setting;
  std::vector<Job> jobs;
  for (const auto& [condition, ratio] : {std::pair<std::string, double>{"original", 0.0}, {"noisy", noisy_ratio}}) {
    for (Setting s : {Setting::kI, Setting::kII, Setting::kIII, Setting::kIV, Setting::kV}) {
      const std::size_t cell = matrix.cells.size();
      matrix.cells.push_back({"setting_" + training::setting_name(s), training::setting_name(s), condition,
                              std::vector<SeedResult>(settings.seeds.size())});
      const auto config = training::apply_setting(settings.train, s);
      for (std::size_t r = 0; r < settings.seeds.size(); ++r) jobs.push_back({cell, r, config, ratio});
    }
  }
  run_jobs(settings, matrix, jobs);
  return matrix;
}

ExperimentMatrix sweep_k(const ExperimentSettings& settings, std::span<const std::size_t> k_values,
                         double noisy_ratio) {
  check_settings(settings);
  if (k_values.empty()) throw ConfigError("k_values", "K list is empty");
  ExperimentMatrix matrix;
  matrix.kind = "k_sweep";
  matrix.config = settings_json(settings);
  matrix.config["k_values"] = std::vector<std::size_t>(k_values.begin(), k_values.end());
  matrix.config["noisy_ratio"] = noisy_ratio;

  const std::size_t n = settings.spec.num_classes * settings.spec.per_class;
  std::vector<Job> jobs;
  for (const auto& [condition, ratio] : {std::pair<std::string, double>{"original", 0.0}, {"noisy", noisy_ratio}}) {
    for (std::size_t k : k_values) {
      if (k < 1) throw ConfigError("k_values", "K must be >= 1");
      const std::size_t effective = neighborhood::effective_k(k, n);
      if (effective != k && condition == "original") {
        matrix.warnings.push_back("K=" + std::to_string(k) + " exceeds n-1=" + std::to_string(n - 1) +
                                  "; clamped to " + std::to_string(effective));
      }
      auto config = configure_method(settings.train, "ldlva");
      config.k = k;
      const std::size_t cell = matrix.cells.size();
      matrix.cells.push_back({"ldlva", std::to_string(k), condition, std::vector<SeedResult>(settings.seeds.size())});
      for (std::size_t r = 0; r < settings.seeds.size(); ++r) jobs.push_back({cell, r, config, ratio});
    }
  }
  run_jobs(settings, matrix, jobs);
  return matrix;
}

}  // namespace ldlva::evaluation
