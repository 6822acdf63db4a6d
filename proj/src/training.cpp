#include "ldlva/training.hpp"

#include <cassert>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace ldlva::training {

using json = nlohmann::json;
using losses::LambdaGradMode;
using losses::NeighborGradMode;

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;

void require(bool ok, const char* field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

std::string lambda_mode_name(LambdaGradMode m) { return m == LambdaGradMode::kFull ? "full" : "cls_only"; }
std::string neighbor_mode_name(NeighborGradMode m) {
  return m == NeighborGradMode::kCoupled ? "coupled" : "detached";
}
std::string refresh_name(PredictionRefresh r) { return r == PredictionRefresh::kPerStep ? "per_step" : "per_epoch"; }

}  // namespace

void TrainConfig::validate() const {
  require(k >= 1, "k", "k must be >= 1");
  require(delta > 0.0, "delta", "delta must be > 0");
  require(gamma >= 0.0 && std::isfinite(gamma), "gamma", "gamma must be >= 0");
  require(lr > 0.0, "lr", "lr must be > 0");
  require(center_lr > 0.0, "center_lr", "center_lr must be > 0");
  require(lambda_lr > 0.0, "lambda_lr", "lambda_lr must be > 0");
  require(batch_size >= 1, "batch_size", "batch_size must be >= 1");
  require(epochs >= 1, "epochs", "epochs must be >= 1");
  require(!as_on || ld_on, "as_on", "adaptive similarity (as_on) requires label distributions (ld_on)");
  require(!uf_on || ld_on, "uf_on", "uncertainty factors (uf_on) require label distributions (ld_on)");
  require(shared_lambda >= 0.0 && shared_lambda <= 1.0, "shared_lambda", "shared_lambda must be in [0, 1]");
  require(feature_dim >= 1, "feature_dim", "feature_dim must be >= 1");
  require(calibration_hidden1 >= 1, "calibration_hidden1", "calibration_hidden1 must be >= 1");
  require(calibration_hidden2 >= 1, "calibration_hidden2", "calibration_hidden2 must be >= 1");
  for (std::size_t w : encoder_hidden) require(w >= 1, "encoder_hidden", "encoder widths must be >= 1");
  require(divergence_threshold >= 0.0, "divergence_threshold", "divergence_threshold must be >= 0");
  require(eval_fraction >= 0.0 && eval_fraction < 1.0, "eval_fraction", "eval_fraction must be in [0, 1)");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1", "adam_beta1 must be in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2", "adam_beta2 must be in [0, 1)");
  require(adam_eps > 0.0, "adam_eps", "adam_eps must be > 0");
}

losses::LossOptions TrainConfig::loss_options() const {
  losses::LossOptions o;
  o.ld_on = ld_on;
  o.as_on = as_on;
  o.uf_on = uf_on;
  o.dl_on = dl_on;
  o.gamma = gamma;
  o.shared_lambda = shared_lambda;
  o.lambda_grad = lambda_grad_mode;
  o.neighbor_grad = neighbor_grad_mode;
  return o;
}

model::ModelDims TrainConfig::model_dims(std::size_t input_dim, std::size_t num_classes) const {
  model::ModelDims d;
  d.input_dim = input_dim;
  d.encoder_hidden = encoder_hidden;
  d.feature_dim = feature_dim;
  d.num_classes = num_classes;
  d.calibration_hidden1 = calibration_hidden1;
  d.calibration_hidden2 = calibration_hidden2;
  return d;
}

json to_json(const TrainConfig& c) {
  return json{{"k", c.k},
              {"delta", c.delta},
              {"gamma", c.gamma},
              {"lr", c.lr},
              {"center_lr", c.center_lr},
              {"lambda_lr", c.lambda_lr},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"ld_on", c.ld_on},
              {"as_on", c.as_on},
              {"uf_on", c.uf_on},
              {"dl_on", c.dl_on},
              {"shared_lambda", c.shared_lambda},
              {"lambda_grad_mode", lambda_mode_name(c.lambda_grad_mode)},
              {"neighbor_grad_mode", neighbor_mode_name(c.neighbor_grad_mode)},
              {"prediction_refresh", refresh_name(c.prediction_refresh)},
              {"encoder_hidden", c.encoder_hidden},
              {"feature_dim", c.feature_dim},
              {"calibration_hidden1", c.calibration_hidden1},
              {"calibration_hidden2", c.calibration_hidden2},
              {"eval_fraction", c.eval_fraction},
              {"divergence_threshold", c.divergence_threshold},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("train", "train config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "k") c.k = value.get<std::size_t>();
      else if (key == "delta") c.delta = value.get<double>();
      else if (key == "gamma") c.gamma = value.get<double>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "center_lr") c.center_lr = value.get<double>();
      else if (key == "lambda_lr") c.lambda_lr = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "ld_on") c.ld_on = value.get<bool>();
      else if (key == "as_on") c.as_on = value.get<bool>();
      else if (key == "uf_on") c.uf_on = value.get<bool>();
      else if (key == "dl_on") c.dl_on = value.get<bool>();
      else if (key == "shared_lambda") c.shared_lambda = value.get<double>();
      else if (key == "lambda_grad_mode") {
        const auto s = value.get<std::string>();
        if (s == "cls_only") c.lambda_grad_mode = LambdaGradMode::kClsOnly;
        else if (s == "full") c.lambda_grad_mode = LambdaGradMode::kFull;
        else throw ConfigError(key, "lambda_grad_mode must be cls_only or full");
      } else if (key == "neighbor_grad_mode") {
        const auto s = value.get<std::string>();
        if (s == "detached") c.neighbor_grad_mode = NeighborGradMode::kDetached;
        else if (s == "coupled") c.neighbor_grad_mode = NeighborGradMode::kCoupled;
        else throw ConfigError(key, "neighbor_grad_mode must be detached or coupled");
      } else if (key == "prediction_refresh") {
        const auto s = value.get<std::string>();
        if (s == "per_epoch") c.prediction_refresh = PredictionRefresh::kPerEpoch;
        else if (s == "per_step") c.prediction_refresh = PredictionRefresh::kPerStep;
        else throw ConfigError(key, "prediction_refresh must be per_epoch or per_step");
      } else if (key == "encoder_hidden") c.encoder_hidden = value.get<std::vector<std::size_t>>();
      else if (key == "feature_dim") c.feature_dim = value.get<std::size_t>();
      else if (key == "calibration_hidden1") c.calibration_hidden1 = value.get<std::size_t>();
      else if (key == "calibration_hidden2") c.calibration_hidden2 = value.get<std::size_t>();
      else if (key == "eval_fraction") c.eval_fraction = value.get<double>();
      else if (key == "divergence_threshold") c.divergence_threshold = value.get<double>();
      else if (key == "adam_beta1") c.adam_beta1 = value.get<double>();
      else if (key == "adam_beta2") c.adam_beta2 = value.get<double>();
      else if (key == "adam_eps") c.adam_eps = value.get<double>();
      else throw ConfigError(key, "unknown train config key '" + key + "'");
    } catch (const json::exception& e) {
      throw ConfigError(key, "bad value for '" + key + "': " + e.what());
    }
  }
  return c;
}

Setting parse_setting(const std::string& name) {
  if (name == "i") return Setting::kI;
  if (name == "ii") return Setting::kII;
  if (name == "iii") return Setting::kIII;
  if (name == "iv") return Setting::kIV;
  if (name == "v") return Setting::kV;
  throw ConfigError("setting", "unknown setting '" + name + "' (expected i, ii, iii, iv or v)");
}

std::string setting_name(Setting s) {
  switch (s) {
    case Setting::kI: return "i";
    case Setting::kII: return "ii";
    case Setting::kIII: return "iii";
    case Setting::kIV: return "iv";
    case Setting::kV: return "v";
  }
  return "?";
}

TrainConfig apply_setting(TrainConfig c, Setting s) {
  c.ld_on = s != Setting::kI;
  c.as_on = s == Setting::kII || s == Setting::kIII || s == Setting::kV;
  c.uf_on = s == Setting::kIII || s == Setting::kIV || s == Setting::kV;
  c.dl_on = s == Setting::kIV || s == Setting::kV;
  return c;
}

std::string history_csv(const TrainHistory& history, const json& config) {
  std::string out = "# ";
  out += kToolVersion;
  out += " config=" + config.dump() + "\n";
  out += "epoch,l_cls,l_d,l_total,acc_train,acc_eval,lambda_clean_mean,lambda_flipped_mean\n";
  char buf[512];
  for (const auto& r : history.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.l_cls, r.l_d,
                  r.l_total, r.acc_train, r.acc_eval, r.lambda_clean_mean, r.lambda_flipped_mean);
    out += buf;
  }
  return out;
}

namespace {

// Checked up front: an exception may not escape an OpenMP region.
void require_input_dims(const model::ModelParams& params, std::span<const data::Instance> instances) {
  const std::size_t want = params.encoder.layers.front().in();
  for (const auto& inst : instances) {
    if (inst.x.size() != want) {
      throw DimensionError("instance " + std::to_string(inst.id) + " has " + std::to_string(inst.x.size()) +
                           " features, model expects " + std::to_string(want));
    }
  }
}

}  // namespace

model::PredictionCache refresh_prediction_cache(const model::ModelParams& params, const data::Dataset& dataset,
                                                std::size_t epoch, std::size_t step) {
  require_input_dims(params, dataset.instances);
  const std::size_t n = dataset.size();
  model::PredictionCache cache{numerics::Matrix(n, params.classifier.head.in()),
                               numerics::Matrix(n, params.classifier.head.out()), epoch, step};
  const auto rows = static_cast<long>(n);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    const auto v = model::encode(params.encoder, dataset.instances[r].x);
    const auto f = model::classify(params.classifier, v);
    std::copy(v.begin(), v.end(), cache.features.row(r).begin());
    std::copy(f.begin(), f.end(), cache.probs.row(r).begin());
  }
  return cache;
}

model::PredictionCache refresh_prediction_cache_serial(const model::ModelParams& params,
                                                       const data::Dataset& dataset, std::size_t epoch,
                                                       std::size_t step) {
  const std::size_t n = dataset.size();
  model::PredictionCache cache{numerics::Matrix(n, params.classifier.head.in()),
                               numerics::Matrix(n, params.classifier.head.out()), epoch, step};
  for (std::size_t r = 0; r < n; ++r) {
    const auto v = model::encode(params.encoder, dataset.instances[r].x);
    const auto f = model::classify(params.classifier, v);
    std::copy(v.begin(), v.end(), cache.features.row(r).begin());
    std::copy(f.begin(), f.end(), cache.probs.row(r).begin());
  }
  return cache;
}

std::vector<std::size_t> eval_inference(const model::ModelParams& params,
                                        std::span<const data::Instance> instances) {
  require_input_dims(params, instances);
  std::vector<std::size_t> out(instances.size());
  const auto rows = static_cast<long>(instances.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    out[r] = numerics::argmax(model::predict(params, instances[r].x));
  }
  return out;
}

namespace {

double accuracy_against(const std::vector<std::size_t>& pred, const data::Dataset& ds, bool clean) {
  if (ds.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& inst = ds.instances[i];
    hits += pred[i] == (clean ? inst.clean_label : inst.observed_label);
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

bool gradients_finite(const losses::GradientSet& g) {
  for (const auto& t : model::tensors(g.model)) {
    if (!numerics::all_finite(t.data)) return false;
  }
  return numerics::all_finite(g.centers.data()) && numerics::all_finite(g.lambda);
}

}  // namespace

TrainResult train(const data::Dataset& train_set, const data::Dataset* eval_set, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  train_set.validate();
  if (eval_set) {
    eval_set->validate();
    if (eval_set->feature_dim != train_set.feature_dim || eval_set->num_classes != train_set.num_classes) {
      throw DataError("eval set dimensions do not match the training set");
    }
  }
  const std::size_t n = train_set.size();
  const std::size_t m = train_set.num_classes;
  if (n < 2) throw InsufficientDataError("training needs at least 2 instances");

  const auto loss_opts = config.loss_options();
  const numerics::AdamHyper hyper{config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps};
  const numerics::AdamHyper center_hyper{config.center_lr, config.adam_beta1, config.adam_beta2, config.adam_eps};
  const numerics::AdamHyper lambda_hyper{config.lambda_lr, config.adam_beta1, config.adam_beta2, config.adam_eps};

  neighborhood::NeighborTable owned_table;
  const neighborhood::NeighborTable* table = options.neighbors;
  if (!table || table->size() != n || table->k() != neighborhood::effective_k(config.k, n) ||
      table->delta() != config.delta) {
    owned_table = neighborhood::build_neighbor_table(train_set, config.k, config.delta);
    table = &owned_table;
  }

  model::Checkpoint ck;
  numerics::Rng shuffle_rng(numerics::derive_seed(config.seed, kShuffleStream));
  if (options.resume) {
    ck = *options.resume;
    const auto dims = config.model_dims(train_set.feature_dim, m);
    if (ck.dims != dims || ck.lambda.size() != n) {
      throw DataError("checkpoint does not match the dataset/config dimensions");
    }
    shuffle_rng.set_state(ck.rng_state);
  } else {
    numerics::Rng init_rng(numerics::derive_seed(config.seed, kInitStream));
    ck.dims = config.model_dims(train_set.feature_dim, m);
    ck.params = model::init_model(ck.dims, init_rng);
    ck.centers = numerics::Matrix(m, config.feature_dim);
    ck.lambda.assign(n, 0.0);
    for (const auto& t : model::tensors(ck.params)) {
      ck.param_adam.push_back(numerics::AdamState::zeros(t.data.size(), hyper));
    }
    ck.center_adam = numerics::AdamState::zeros(ck.centers.size(), center_hyper);
    ck.lambda_adam = numerics::SparseAdamState::zeros(n, lambda_hyper);
  }
  ck.tool_version = kToolVersion;
  ck.config = to_json(config);

  losses::Centers centers{ck.centers};
  ldl::LambdaStore lambdas{ck.lambda};
  const bool use_cache = config.ld_on && config.neighbor_grad_mode == NeighborGradMode::kDetached;
  const bool calibration_live = config.ld_on && config.as_on;
  const bool lambda_live = config.ld_on && config.uf_on;

  std::vector<std::size_t> order(n);
  TrainHistory history;
  model::PredictionCache cache;
  const std::size_t last_epoch =
      options.stop_after_epoch > 0 ? std::min(options.stop_after_epoch, config.epochs) : config.epochs;

  for (std::size_t epoch = ck.epoch; epoch < last_epoch; ++epoch) {
    if (use_cache && config.prediction_refresh == PredictionRefresh::kPerEpoch) {
      cache = refresh_prediction_cache(ck.params, train_set, epoch, 0);
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(std::span<std::size_t>(order));

    EpochRecord rec;
    rec.epoch = epoch + 1;
    std::size_t step = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++step) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      if (use_cache && config.prediction_refresh == PredictionRefresh::kPerStep) {
        cache = refresh_prediction_cache(ck.params, train_set, epoch, step);
      }
      const losses::BatchInputs inputs{&train_set, table, use_cache ? &cache : nullptr, batch};
      const auto pass = losses::forward(ck.params, centers, lambdas, loss_opts, inputs);
      if (!std::isfinite(pass.loss.total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                               std::to_string(step + 1),
                           static_cast<long>(epoch + 1), static_cast<long>(step + 1));
      }
      if (config.divergence_threshold > 0.0 &&
          pass.loss.total / static_cast<double>(batch.size()) > config.divergence_threshold) {
        throw NumericError("loss diverged at epoch " + std::to_string(epoch + 1) + ", step " +
                               std::to_string(step + 1) + " (per-instance loss " +
                               std::to_string(pass.loss.total / static_cast<double>(batch.size())) + ")",
                           static_cast<long>(epoch + 1), static_cast<long>(step + 1));
      }
      const auto grads = losses::backward(ck.params, centers, lambdas, loss_opts, inputs, pass);
      if (!gradients_finite(grads)) {
        throw NumericError("non-finite gradient at epoch " + std::to_string(epoch + 1) + ", step " +
                               std::to_string(step + 1),
                           static_cast<long>(epoch + 1), static_cast<long>(step + 1));
      }

      auto params = model::tensors(ck.params);
      const auto grad_tensors = model::tensors(grads.model);
      for (std::size_t t = 0; t < params.size(); ++t) {
        if (params[t].component == model::Component::kCalibration && !calibration_live) continue;
        numerics::adam_step(params[t].data, grad_tensors[t].data, ck.param_adam[t]);
      }
      if (config.dl_on) numerics::adam_step(centers.mu.data(), grads.centers.data(), ck.center_adam);
      if (lambda_live) {
        std::vector<double> g(grads.lambda_ids.size());
        for (std::size_t q = 0; q < g.size(); ++q) g[q] = grads.lambda[grads.lambda_ids[q]];
        numerics::sparse_adam_step(lambdas.values, grads.lambda_ids, g, ck.lambda_adam);
        ldl::project_lambda_inplace(lambdas);
      }
      assert(std::all_of(lambdas.values.begin(), lambdas.values.end(),
                         [](double l) { return l >= 0.0 && l <= 1.0; }));
      if (options.on_step) options.on_step(lambdas);

      rec.l_cls += pass.loss.cls;
      rec.l_d += pass.loss.discriminative;
      rec.l_total += pass.loss.total;
    }

    rec.acc_train = accuracy_against(eval_inference(ck.params, train_set.instances), train_set, false);
    rec.acc_eval = eval_set ? accuracy_against(eval_inference(ck.params, eval_set->instances), *eval_set, true)
                            : std::numeric_limits<double>::quiet_NaN();
    double clean_sum = 0.0, flipped_sum = 0.0;
    std::size_t clean_n = 0, flipped_n = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (train_set.instances[i].flipped()) {
        flipped_sum += lambdas.values[i];
        ++flipped_n;
      } else {
        clean_sum += lambdas.values[i];
        ++clean_n;
      }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    rec.lambda_clean_mean = clean_n ? clean_sum / static_cast<double>(clean_n) : nan;
    rec.lambda_flipped_mean = flipped_n ? flipped_sum / static_cast<double>(flipped_n) : nan;
    history.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);

    ck.epoch = epoch + 1;
  }

  ck.centers = centers.mu;
  ck.lambda = lambdas.values;
  ck.rng_state = shuffle_rng.state();
  return {std::move(ck), std::move(history)};
}

}  // namespace ldlva::training
