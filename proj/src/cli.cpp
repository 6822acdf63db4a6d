#include "ldlva/cli.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ldlva/config.hpp"
#include "ldlva/data.hpp"
#include "ldlva/error.hpp"
#include "ldlva/evaluation.hpp"
#include "ldlva/model.hpp"
#include "ldlva/neighborhood.hpp"
#include "ldlva/training.hpp"

namespace ldlva::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using config::CliConfig;
using numerics::derive_seed;
using numerics::Rng;

namespace {

// Collects command-line overrides as a JSON overlay in the config file layout,
// so flags go through the same strict parser as config files.
struct Overlay {
  std::vector<std::function<void(json&)>> appliers;

  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& section, const std::string& key,
                   const std::string& help) {
    auto holder = std::make_shared<T>();
    auto* opt = app->add_option(flag, *holder, help + " [" + section + "." + key + "]");
    appliers.push_back([opt, holder, section, key](json& j) {
      if (opt->count() > 0) j[section][key] = *holder;
    });
    return opt;
  }

  void add_custom(std::function<void(json&)> fn) { appliers.push_back(std::move(fn)); }

  json build() const {
    json j = json::object();
    for (const auto& fn : appliers) fn(j);
    return j;
  }
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, ',')) {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    parts.push_back(cur.substr(b, e - b + 1));
  }
  return parts;
}

double parse_double(const std::string& field, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(field, "'" + s + "' is not a number");
  }
}

std::uint64_t parse_uint(const std::string& field, const std::string& s) {
  try {
    if (s.empty() || s.front() == '-') throw std::invalid_argument(s);
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(field, "'" + s + "' is not a non-negative integer");
  }
}

// `--set section.key=value`; value is parsed as JSON, falling back to a string.
void apply_set(json& overlay, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("set", "--set expects section.key=value, got '" + assignment + "'");
  const auto section = assignment.substr(0, dot);
  const auto key = assignment.substr(dot + 1, eq - dot - 1);
  const auto text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  overlay[section][key] = value;
}

void add_synthetic_flags(CLI::App* app, Overlay& ov) {
  ov.add<std::size_t>(app, "--classes", "synthetic", "num_classes", "Number of emotion classes");
  ov.add<std::size_t>(app, "--per-class", "synthetic", "per_class", "Training instances per class");
  ov.add<std::size_t>(app, "--eval-per-class", "synthetic", "eval_per_class", "Held-out instances per class");
  ov.add<std::size_t>(app, "--features", "synthetic", "feature_dim", "Input feature dimension");
  ov.add<double>(app, "--anchor-radius", "synthetic", "anchor_radius", "Radius of the VA anchor circle");
  ov.add<double>(app, "--prototype-scale", "synthetic", "prototype_scale", "Std of class prototypes");
  ov.add<double>(app, "--feature-spread", "synthetic", "feature_spread", "Std of features around a prototype");
  ov.add<double>(app, "--va-jitter", "synthetic", "va_jitter", "Std of VA noise around an anchor");
  ov.add<double>(app, "--ambiguous-fraction", "synthetic", "ambiguous_fraction",
                 "Fraction of instances blended with a neighbouring class");
  ov.add<double>(app, "--blend-min", "synthetic", "blend_min", "Lower bound of the blend weight");
  ov.add<double>(app, "--blend-max", "synthetic", "blend_max", "Upper bound of the blend weight");
}

// `--ablate` and `--setting` resolve to component switches once the base
// config is known, so they are applied after the overlay.
struct ComponentFlags {
  std::string ablate;
  std::string setting;
};

void add_train_flags(CLI::App* app, Overlay& ov, ComponentFlags& comp, bool with_seed) {
  ov.add<std::size_t>(app, "--k", "train", "k", "Neighbors per instance in VA space");
  ov.add<double>(app, "--delta", "train", "delta", "Bandwidth of the VA similarity");
  ov.add<double>(app, "--gamma", "train", "gamma", "Weight of the discriminative loss");
  ov.add<double>(app, "--lr", "train", "lr", "Adam learning rate for network weights");
  ov.add<double>(app, "--center-lr", "train", "center_lr", "Adam learning rate for class centers");
  ov.add<double>(app, "--lambda-lr", "train", "lambda_lr", "Adam learning rate for uncertainty factors");
  ov.add<std::size_t>(app, "--batch-size", "train", "batch_size", "Mini-batch size");
  ov.add<std::size_t>(app, "--epochs", "train", "epochs", "Training epochs");
  if (with_seed) ov.add<std::uint64_t>(app, "--seed", "train", "seed", "Training seed");
  ov.add<double>(app, "--shared-lambda", "train", "shared_lambda",
                 "Uncertainty factor shared by all instances when per-instance factors are off");
  ov.add<std::string>(app, "--lambda-grad", "train", "lambda_grad_mode", "cls_only or full");
  ov.add<std::string>(app, "--neighbor-grad", "train", "neighbor_grad_mode", "detached or coupled");
  ov.add<std::string>(app, "--refresh", "train", "prediction_refresh", "per_epoch or per_step");
  ov.add<std::size_t>(app, "--feature-dim", "train", "feature_dim", "Width of the learned feature");
  ov.add<std::size_t>(app, "--cal-hidden1", "train", "calibration_hidden1", "First calibration layer width");
  ov.add<std::size_t>(app, "--cal-hidden2", "train", "calibration_hidden2", "Second calibration layer width");
  ov.add<double>(app, "--divergence-threshold", "train", "divergence_threshold",
                 "Per-instance batch loss treated as divergence (0 disables)");
  ov.add<double>(app, "--eval-fraction", "train", "eval_fraction",
                 "Holdout fraction when no eval file is given");
  auto hidden = std::make_shared<std::string>();
  auto* hopt = app->add_option("--encoder-hidden", *hidden, "Comma-separated encoder hidden widths");
  ov.add_custom([hidden, hopt](json& j) {
    if (hopt->count() == 0) return;
    std::vector<std::size_t> widths;
    for (const auto& p : split_list(*hidden)) widths.push_back(parse_uint("encoder_hidden", p));
    j["train"]["encoder_hidden"] = widths;
  });
  app->add_option("--ablate", comp.ablate, "Comma-separated subset of no-ld,no-as,no-uf,no-dl");
  app->add_option("--setting", comp.setting, "Component setting i, ii, iii, iv or v");
}

void apply_components(training::TrainConfig& c, const ComponentFlags& comp) {
  if (!comp.setting.empty()) {
    try {
      c = training::apply_setting(c, training::parse_setting(comp.setting));
    } catch (const Error& e) {
      throw ConfigError("setting", e.what());
    }
  }
  for (const auto& item : split_list(comp.ablate)) {
    if (item == "no-ld") {
      c.ld_on = false;
      c.as_on = false;
      c.uf_on = false;
    } else if (item == "no-as") {
      c.as_on = false;
    } else if (item == "no-uf") {
      c.uf_on = false;
    } else if (item == "no-dl") {
      c.dl_on = false;
    } else {
      throw ConfigError("ablate", "unknown ablation '" + item + "' (expected no-ld, no-as, no-uf or no-dl)");
    }
  }
}

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  Overlay overlay;
  ComponentFlags components;
};

void add_common_flags(CLI::App* app, Common& common) {
  app->add_option("--config", common.config_path, "JSON config file {synthetic, train, experiment}");
  app->add_option("--set", common.sets, "Override any config key: section.key=value")->take_all();
}

CliConfig resolve_config(const Common& common) {
  CliConfig cfg;
  if (!common.config_path.empty()) cfg = config::load_cli_config(common.config_path);
  json overlay = common.overlay.build();
  for (const auto& s : common.sets) apply_set(overlay, s);
  cfg = config::cli_config_from_json(overlay, cfg);
  apply_components(cfg.train, common.components);
  cfg.synthetic.validate();
  cfg.train.validate();
  return cfg;
}

fs::path default_out_dir() {
  const char* env = std::getenv("LDLVA_OUT_DIR");
  return env && *env ? fs::path(env) : fs::path(".");
}

fs::path output_path(const std::string& given, const std::string& fallback) {
  fs::path p = given.empty() ? default_out_dir() / fallback : fs::path(given);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out << text;
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json json_number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::size_t ambiguous_count(const data::Dataset& ds) {
  std::size_t n = 0;
  for (const auto& inst : ds.instances) {
    if (!inst.gt_distribution) continue;
    double mx = 0.0;
    for (double p : *inst.gt_distribution) mx = std::max(mx, p);
    if (mx < 1.0) ++n;
  }
  return n;
}

// ---- gen -------------------------------------------------------------------

struct GenArgs {
  Common common;
  std::string out;
  std::string eval_out;
};

json cmd_gen(const GenArgs& a, const CliConfig& cfg, std::ostream& err) {
  const auto cfg_json = config::to_json(cfg);
  Rng data_rng(derive_seed(cfg.experiment.data_seed, 11));
  auto split = data::generate_synthetic_split(cfg.synthetic, data_rng);
  if (cfg.experiment.noise_ratio > 0.0) {
    Rng noise_rng(derive_seed(cfg.experiment.data_seed, 12));
    split.train = data::inject_noise(split.train, cfg.experiment.noise_ratio, noise_rng);
  }
  for (auto* ds : {&split.train, &split.eval}) {
    ds->meta["tool_version"] = training::kToolVersion;
    ds->meta["config"] = cfg_json;
  }
  split.train.meta["part"] = "train";
  split.eval.meta["part"] = "eval";

  const auto out = output_path(a.out, "data.jsonl");
  data::write_jsonl(split.train, out);
  err << "wrote " << split.train.size() << " instances to " << out.string() << "\n";
  json summary{{"command", "gen"},
               {"n", split.train.size()},
               {"m", split.train.num_classes},
               {"F", split.train.feature_dim},
               {"ambiguous", ambiguous_count(split.train)},
               {"flipped", split.train.meta.value("noise_flips", std::size_t{0})},
               {"out", out.string()}};
  if (!a.eval_out.empty()) {
    const auto eval_out = output_path(a.eval_out, "eval.jsonl");
    data::write_jsonl(split.eval, eval_out);
    err << "wrote " << split.eval.size() << " eval instances to " << eval_out.string() << "\n";
    summary["eval_n"] = split.eval.size();
    summary["eval_out"] = eval_out.string();
  }
  return summary;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string data;
  std::string eval;
  std::string out;
  std::string history;
  std::string resume;
  std::string neighbor_cache;
};

json cmd_train(const TrainArgs& a, const CliConfig& cfg, std::ostream& err) {
  const auto cfg_json = config::to_json(cfg);
  if (a.data.empty()) throw ConfigError("data", "--data is required");

  data::Dataset train_set = data::read_jsonl(a.data);
  data::Dataset eval_set;
  bool have_eval = false;
  if (!a.eval.empty()) {
    eval_set = data::read_jsonl(a.eval);
    have_eval = true;
  } else if (cfg.train.eval_fraction > 0.0) {
    Rng split_rng(derive_seed(cfg.train.seed, 21));
    auto split = data::split_dataset(train_set, cfg.train.eval_fraction, split_rng);
    train_set = std::move(split.train);
    eval_set = std::move(split.eval);
    have_eval = true;
  }

  neighborhood::NeighborTable table;
  bool have_table = false;
  if (!a.neighbor_cache.empty()) {
    const auto hash = data::dataset_hash(train_set);
    have_table = fs::exists(a.neighbor_cache) &&
                 neighborhood::load_neighbor_table(a.neighbor_cache, hash, cfg.train.k, cfg.train.delta, table);
    if (!have_table) {
      table = neighborhood::build_neighbor_table(train_set, cfg.train.k, cfg.train.delta);
      neighborhood::save_neighbor_table(table, hash, a.neighbor_cache);
      have_table = true;
      err << "built neighbor table -> " << a.neighbor_cache << "\n";
    } else {
      err << "reused neighbor table " << a.neighbor_cache << "\n";
    }
  }

  model::Checkpoint resume;
  training::TrainOptions options;
  if (!a.resume.empty()) {
    resume = model::load_checkpoint(a.resume);
    options.resume = &resume;
  }
  if (have_table) options.neighbors = &table;
  options.on_epoch = [&err, &cfg](const training::EpochRecord& r) {
    err << "epoch " << r.epoch << "/" << cfg.train.epochs << " loss=" << r.l_total << " cls=" << r.l_cls
        << " disc=" << r.l_d << " acc_train=" << r.acc_train << " acc_eval=" << r.acc_eval << "\n";
  };

  auto result = training::train(train_set, have_eval ? &eval_set : nullptr, cfg.train, options);
  result.checkpoint.config = cfg_json;

  const auto ck_path = output_path(a.out, "checkpoint.json");
  const auto hist_path = output_path(a.history, "history.csv");
  model::save_checkpoint(ck_path, result.checkpoint);
  write_text(hist_path, training::history_csv(result.history, cfg_json));

  json summary{{"command", "train"}, {"epochs", result.checkpoint.epoch}};
  if (!result.history.epochs.empty()) {
    const auto& last = result.history.epochs.back();
    summary["l_cls"] = json_number(last.l_cls);
    summary["l_d"] = json_number(last.l_d);
    summary["l_total"] = json_number(last.l_total);
    summary["acc_train"] = json_number(last.acc_train);
    summary["acc_eval"] = json_number(last.acc_eval);
    summary["lambda_clean_mean"] = json_number(last.lambda_clean_mean);
    summary["lambda_flipped_mean"] = json_number(last.lambda_flipped_mean);
  }
  summary["checkpoint"] = ck_path.string();
  summary["history"] = hist_path.string();
  return summary;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string predictions;
};

json cmd_eval(const EvalArgs& a, const CliConfig& cfg, std::ostream& err) {
  const auto cfg_json = config::to_json(cfg);
  if (a.checkpoint.empty()) throw ConfigError("checkpoint", "--checkpoint is required");
  if (a.data.empty()) throw ConfigError("data", "--data is required");

  const auto ck = model::load_checkpoint(a.checkpoint);
  const auto ds = data::read_jsonl(a.data);
  if (ds.feature_dim != ck.dims.input_dim || ds.num_classes != ck.dims.num_classes) {
    throw DataError("dataset shape (F=" + std::to_string(ds.feature_dim) + ", m=" +
                    std::to_string(ds.num_classes) + ") does not match checkpoint (F=" +
                    std::to_string(ck.dims.input_dim) + ", m=" + std::to_string(ck.dims.num_classes) + ")");
  }
  const auto report = evaluation::evaluate(ck.params, ds, cfg_json);

  const fs::path prefix = output_path(a.out, "eval");
  const fs::path json_path = prefix.string() + ".json";
  const fs::path csv_path = prefix.string() + ".csv";
  json doc{{"tool_version", training::kToolVersion},
           {"config", cfg_json},
           {"checkpoint_config", ck.config},
           {"checkpoint_epoch", ck.epoch},
           {"report", evaluation::to_json(report)}};
  write_text(json_path, doc.dump(1) + "\n");
  std::string csv = std::string("# ") + training::kToolVersion + " config=" + cfg_json.dump() + "\n";
  csv += "accuracy,jeffrey,jeffrey_ambiguous,n,n_with_gt,n_ambiguous,config_fingerprint\n";
  csv += fmt(report.accuracy) + "," + fmt(report.jeffrey) + "," + fmt(report.jeffrey_ambiguous) + "," +
         std::to_string(report.n) + "," + std::to_string(report.n_with_gt) + "," +
         std::to_string(report.n_ambiguous) + "," + report.config_fingerprint + "\n";
  write_text(csv_path, csv);

  json summary{{"command", "eval"},
               {"n", report.n},
               {"accuracy", json_number(report.accuracy)},
               {"jeffrey", json_number(report.jeffrey)},
               {"jeffrey_ambiguous", json_number(report.jeffrey_ambiguous)},
               {"json", json_path.string()},
               {"csv", csv_path.string()}};

  if (!a.predictions.empty()) {
    const auto preds = training::eval_inference(ck.params, ds.instances);
    std::string text = std::string("# ") + training::kToolVersion + "\n";
    text += "id,pred";
    for (std::size_t j = 0; j < ds.num_classes; ++j) text += ",p" + std::to_string(j);
    text += "\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto probs = model::predict(ck.params, ds.instances[i].x);
      text += std::to_string(ds.instances[i].id) + "," + std::to_string(preds[i]);
      for (double p : probs) text += "," + fmt(p);
      text += "\n";
    }
    const auto pred_path = output_path(a.predictions, "predictions.csv");
    write_text(pred_path, text);
    summary["predictions"] = pred_path.string();
  }
  err << "accuracy " << report.accuracy << " on " << report.n << " instances\n";
  return summary;
}

// ---- harnesses ---------------------------------------------------------------

struct HarnessArgs {
  Common common;
  std::string out;
  std::string seeds;       // count
  std::string seed_list;   // explicit
  bool no_timing = false;
};

void apply_harness_flags(const HarnessArgs& a, CliConfig& cfg) {
  if (!a.seeds.empty() && !a.seed_list.empty())
    throw ConfigError("seeds", "--seeds and --seed-list are mutually exclusive");
  if (!a.seeds.empty()) {
    const auto count = parse_uint("seeds", a.seeds);
    cfg.experiment.seeds.clear();
    for (std::uint64_t s = 1; s <= count; ++s) cfg.experiment.seeds.push_back(s);
  }
  if (!a.seed_list.empty()) {
    cfg.experiment.seeds.clear();
    for (const auto& p : split_list(a.seed_list)) cfg.experiment.seeds.push_back(parse_uint("seeds", p));
  }
  if (a.no_timing) cfg.experiment.record_timing = false;
}

void check_experiment(const std::string& command, const config::ExperimentParams& e) {
  if (e.seeds.empty()) throw ConfigError("seeds", "seed list is empty");
  if (command == "bench") {
    if (e.ratios.empty()) throw ConfigError("ratios", "ratios list is empty");
    if (e.methods.empty()) throw ConfigError("methods", "methods list is empty");
    for (const auto& m : e.methods)
      if (!evaluation::is_known_method(m)) throw ConfigError("methods", "unknown method '" + m + "'");
  }
  if (command == "sweepk" && e.k_values.empty()) throw ConfigError("k_values", "k_values list is empty");
}

json matrix_summary(const std::string& command, const evaluation::ExperimentMatrix& m, const fs::path& json_path,
                    const fs::path& csv_path) {
  json cells = json::array();
  std::size_t ok_cells = 0;
  std::size_t failed_runs = 0;
  for (const auto& c : m.cells) {
    if (c.succeeded > 0) ++ok_cells;
    failed_runs += c.runs.size() - c.succeeded;
    cells.push_back({{"method", c.method},
                     {"level", c.level},
                     {"condition", c.condition},
                     {"succeeded", c.succeeded},
                     {"mean_acc", json_number(c.mean_acc)},
                     {"stderr_acc", json_number(c.stderr_acc)}});
  }
  return json{{"command", command},   {"cells", m.cells.size()}, {"succeeded_cells", ok_cells},
              {"failed_runs", failed_runs}, {"warnings", m.warnings}, {"summary", cells},
              {"json", json_path.string()}, {"csv", csv_path.string()}};
}

json run_harness(const std::string& command, const HarnessArgs& a, const CliConfig& cfg, std::ostream& err,
                 bool& all_failed) {
  evaluation::ExperimentSettings settings;
  settings.spec = cfg.synthetic;
  settings.train = cfg.train;
  settings.seeds = cfg.experiment.seeds;
  settings.record_timing = cfg.experiment.record_timing;

  evaluation::ExperimentMatrix matrix;
  if (command == "bench") {
    matrix = evaluation::run_noise_benchmark(settings, cfg.experiment.ratios, cfg.experiment.methods);
  } else if (command == "ablate") {
    matrix = evaluation::run_ablation(settings, cfg.experiment.noisy_ratio);
  } else {
    matrix = evaluation::sweep_k(settings, cfg.experiment.k_values, cfg.experiment.noisy_ratio);
  }
  matrix.config = config::to_json(cfg);

  const fs::path prefix = output_path(a.out, command);
  const fs::path json_path = prefix.string() + ".json";
  const fs::path csv_path = prefix.string() + ".csv";
  write_text(json_path, evaluation::to_json(matrix).dump(1) + "\n");
  write_text(csv_path, evaluation::to_csv(matrix));

  all_failed = true;
  for (const auto& c : matrix.cells) {
    err << c.method << " level=" << c.level << " condition=" << c.condition << " runs=" << c.succeeded << "/"
        << c.runs.size() << " acc=" << c.mean_acc << " +/- " << c.stderr_acc << "\n";
    for (const auto& r : c.runs)
      if (!r.ok) err << "  seed " << r.seed << " failed: " << r.error << "\n";
    if (c.succeeded > 0) all_failed = false;
  }
  for (const auto& w : matrix.warnings) err << "warning: " << w << "\n";
  return matrix_summary(command, matrix, json_path, csv_path);
}

void add_harness_flags(CLI::App* app, HarnessArgs& a, const std::string& command) {
  app->add_option("-o,--out", a.out, "Output prefix; writes <prefix>.json and <prefix>.csv");
  app->add_option("--seeds", a.seeds, "Number of seeds (1..N)");
  app->add_option("--seed-list", a.seed_list, "Comma-separated explicit seeds");
  app->add_flag("--no-timing", a.no_timing, "Record wall time as 0 for byte-stable reports");
  auto& ov = a.common.overlay;
  auto list_flag = [&](const std::string& flag, const std::string& key, const std::string& help, bool integer) {
    auto holder = std::make_shared<std::string>();
    auto* opt = app->add_option(flag, *holder, help + " [experiment." + key + "]");
    ov.add_custom([opt, holder, key, integer](json& j) {
      if (opt->count() == 0) return;
      const auto parts = split_list(*holder);
      if (parts.empty()) throw ConfigError(key, key + " list is empty");
      json arr = json::array();
      for (const auto& p : parts) {
        if (key == "methods") arr.push_back(p);
        else if (integer) arr.push_back(parse_uint(key, p));
        else arr.push_back(parse_double(key, p));
      }
      j["experiment"][key] = arr;
    });
  };
  if (command == "bench") {
    list_flag("--ratios", "ratios", "Comma-separated noise ratios", false);
    list_flag("--methods", "methods", "Comma-separated methods (baseline_ce, ldlva, setting_ii..iv)", false);
  }
  if (command == "sweepk") list_flag("--k-values", "k_values", "Comma-separated neighbor counts", true);
  if (command != "bench") ov.add<double>(app, "--noisy-ratio", "experiment", "noisy_ratio", "Noise ratio of the noisy condition");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ldlva: label distribution learning over valence-arousal neighborhoods"};
  app.require_subcommand(1);
  app.set_version_flag("--version", training::kToolVersion);
  app.footer(
      "Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric error, 5 every experiment cell failed.\n"
      "LDLVA_OUT_DIR sets the directory for outputs whose path is not given.");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic JSONL dataset");
  add_common_flags(gen_cmd, gen.common);
  add_synthetic_flags(gen_cmd, gen.common.overlay);
  gen.common.overlay.add<std::uint64_t>(gen_cmd, "--seed", "experiment", "data_seed", "Data seed");
  gen.common.overlay.add<double>(gen_cmd, "--noise", "experiment", "noise_ratio",
                                 "Fraction of training labels to flip");
  gen_cmd->add_option("-o,--out", gen.out, "Output JSONL path (training portion)");
  gen_cmd->add_option("--eval-out", gen.eval_out, "Also write the held-out portion here");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train on a JSONL dataset");
  add_common_flags(train_cmd, tr.common);
  add_train_flags(train_cmd, tr.common.overlay, tr.common.components, true);
  train_cmd->add_option("--data", tr.data, "Training JSONL");
  train_cmd->add_option("--eval", tr.eval, "Held-out JSONL (default: split by eval_fraction)");
  train_cmd->add_option("-o,--out", tr.out, "Checkpoint path");
  train_cmd->add_option("--history", tr.history, "History CSV path");
  train_cmd->add_option("--resume", tr.resume, "Continue from this checkpoint");
  train_cmd->add_option("--neighbor-cache", tr.neighbor_cache, "Neighbor table cache file");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a dataset");
  add_common_flags(eval_cmd, ev.common);
  add_train_flags(eval_cmd, ev.common.overlay, ev.common.components, true);
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file");
  eval_cmd->add_option("--data", ev.data, "JSONL dataset");
  eval_cmd->add_option("-o,--out", ev.out, "Report prefix; writes <prefix>.json and <prefix>.csv");
  eval_cmd->add_option("--predictions", ev.predictions, "Also write per-instance predictions CSV");

  std::array<HarnessArgs, 3> harness;
  const std::array<std::pair<const char*, const char*>, 3> harness_cmds{{
      {"bench", "Noise benchmark: methods x noise ratios x seeds"},
      {"ablate", "Component settings i-v on clean and noisy data"},
      {"sweepk", "Accuracy across neighbor counts"},
  }};
  std::array<CLI::App*, 3> harness_apps{};
  for (std::size_t i = 0; i < harness.size(); ++i) {
    auto* sub = app.add_subcommand(harness_cmds[i].first, harness_cmds[i].second);
    add_common_flags(sub, harness[i].common);
    add_synthetic_flags(sub, harness[i].common.overlay);
    add_train_flags(sub, harness[i].common.overlay, harness[i].common.components, false);
    add_harness_flags(sub, harness[i], harness_cmds[i].first);
    harness_apps[i] = sub;
  }

  std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << training::kToolVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  // Config phase: anything wrong here is a configuration error.
  CliConfig cfg;
  const HarnessArgs* active_harness = nullptr;
  std::string active_harness_name;
  try {
    if (gen_cmd->parsed()) cfg = resolve_config(gen.common);
    else if (train_cmd->parsed()) cfg = resolve_config(tr.common);
    else if (eval_cmd->parsed()) cfg = resolve_config(ev.common);
    for (std::size_t i = 0; i < harness.size(); ++i) {
      if (!harness_apps[i]->parsed()) continue;
      active_harness = &harness[i];
      active_harness_name = harness_cmds[i].first;
      cfg = resolve_config(harness[i].common);
      apply_harness_flags(harness[i], cfg);
      check_experiment(active_harness_name, cfg.experiment);
    }
  } catch (const ValidationError& e) {
    err << "config error [" << e.field() << "]: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    json summary;
    int code = kExitOk;
    if (gen_cmd->parsed()) {
      summary = cmd_gen(gen, cfg, err);
    } else if (train_cmd->parsed()) {
      summary = cmd_train(tr, cfg, err);
    } else if (eval_cmd->parsed()) {
      summary = cmd_eval(ev, cfg, err);
    } else if (active_harness != nullptr) {
      bool all_failed = false;
      summary = run_harness(active_harness_name, *active_harness, cfg, err, all_failed);
      if (all_failed) {
        err << "error: every experiment cell failed\n";
        code = kExitAllCellsFailed;
      }
    }
    out << summary.dump() << "\n";
    return code;
  } catch (const NumericError& e) {
    err << "numeric error";
    if (e.epoch() >= 0) err << " (epoch " << e.epoch() << ", step " << e.step() << ")";
    err << ": " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "config error [" << e.field() << "]: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace ldlva::cli
