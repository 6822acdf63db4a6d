#include <gtest/gtest.h>

#include <bit>
#include <cmath>

#include "ldlva/training.hpp"
#include "support.hpp"

using namespace ldlva;
using namespace ldlva::training;
using numerics::Rng;

namespace {

struct Data {
  data::Dataset train;
  data::Dataset eval;
};

Data noisy_data(std::uint64_t seed, double ratio, std::size_t per_class = 30) {
  data::SyntheticSpec spec;
  spec.per_class = per_class;
  spec.feature_dim = 6;
  Rng rng(seed);
  auto split = data::generate_synthetic_split(spec, rng);
  Rng nrng(seed + 1000);
  return {data::inject_noise(split.train, ratio, nrng), split.eval};
}

TrainConfig small_config() {
  TrainConfig c;
  c.encoder_hidden = {16};
  c.feature_dim = 8;
  c.calibration_hidden1 = 8;
  c.calibration_hidden2 = 6;
  c.epochs = 4;
  c.seed = 9;
  return c;
}

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

void expect_same_history(const TrainHistory& a, const TrainHistory& b) {
  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    EXPECT_TRUE(same_bits(a.epochs[e].l_total, b.epochs[e].l_total)) << "epoch " << e + 1;
    EXPECT_TRUE(same_bits(a.epochs[e].l_cls, b.epochs[e].l_cls)) << "epoch " << e + 1;
    EXPECT_TRUE(same_bits(a.epochs[e].l_d, b.epochs[e].l_d)) << "epoch " << e + 1;
  }
}

}  // namespace

TEST(Config, ValidationNamesField) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  auto expect_field = [](TrainConfig bad, const std::string& field) {
    try {
      bad.validate();
      FAIL() << "expected ConfigError for " << field;
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.field(), field);
    }
  };
  TrainConfig bad = c;
  bad.lr = 0.0;
  expect_field(bad, "lr");
  bad = c;
  bad.batch_size = 0;
  expect_field(bad, "batch_size");
  bad = c;
  bad.ld_on = false;
  expect_field(bad, "as_on");
  bad.as_on = false;
  expect_field(bad, "uf_on");
  bad.uf_on = false;
  bad.dl_on = true;
  EXPECT_NO_THROW(bad.validate());
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  TrainConfig c = small_config();
  c.lambda_grad_mode = losses::LambdaGradMode::kFull;
  c.prediction_refresh = PredictionRefresh::kPerStep;
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"gama", 0.2}}), ConfigError);
  EXPECT_EQ(train_config_from_json(nlohmann::json{{"k", 3}}, c).k, 3u);
  EXPECT_EQ(train_config_from_json(nlohmann::json{{"k", 3}}, c).epochs, 4u);
}

TEST(Config, DocumentedDefaults) {
  const TrainConfig c;
  EXPECT_EQ(c.k, 8u);
  EXPECT_EQ(c.delta, 0.5);
  EXPECT_EQ(c.gamma, 0.1);
  EXPECT_EQ(c.lr, 1e-3);
  EXPECT_EQ(c.center_lr, 0.5);
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_EQ(c.epochs, 30u);
}

TEST(Settings, ComponentTable) {
  const TrainConfig base;
  const auto i = apply_setting(base, Setting::kI);
  EXPECT_FALSE(i.ld_on || i.as_on || i.uf_on || i.dl_on);
  const auto ii = apply_setting(base, Setting::kII);
  EXPECT_TRUE(ii.ld_on && ii.as_on && !ii.uf_on && !ii.dl_on);
  const auto iii = apply_setting(base, Setting::kIII);
  EXPECT_TRUE(iii.ld_on && iii.as_on && iii.uf_on && !iii.dl_on);
  const auto iv = apply_setting(base, Setting::kIV);
  EXPECT_TRUE(iv.ld_on && !iv.as_on && iv.uf_on && iv.dl_on);
  const auto v = apply_setting(base, Setting::kV);
  EXPECT_TRUE(v.ld_on && v.as_on && v.uf_on && v.dl_on);
  for (auto s : {Setting::kI, Setting::kII, Setting::kIII, Setting::kIV, Setting::kV}) {
    EXPECT_EQ(parse_setting(setting_name(s)), s);
    EXPECT_NO_THROW(apply_setting(base, s).validate());
  }
  EXPECT_THROW(parse_setting("vi"), ConfigError);
}

TEST(Train, DeterministicBytes) {
  const auto d = noisy_data(1, 0.3);
  const auto a = train(d.train, &d.eval, small_config());
  const auto b = train(d.train, &d.eval, small_config());
  EXPECT_EQ(model::serialize_checkpoint(a.checkpoint), model::serialize_checkpoint(b.checkpoint));
  EXPECT_EQ(history_csv(a.history, {}), history_csv(b.history, {}));
  auto other = small_config();
  other.seed = 10;
  EXPECT_NE(model::serialize_checkpoint(train(d.train, &d.eval, other).checkpoint),
            model::serialize_checkpoint(a.checkpoint));
}

TEST(Train, HistoryShapeAndLambdaRange) {
  const auto d = noisy_data(2, 0.3);
  std::size_t steps = 0;
  TrainOptions opts;
  opts.on_step = [&](const ldl::LambdaStore& store) {
    ++steps;
    for (double l : store.values) {
      ASSERT_GE(l, 0.0);
      ASSERT_LE(l, 1.0);
    }
  };
  const auto cfg = small_config();
  const auto r = train(d.train, &d.eval, cfg, opts);
  // 90 instances in batches of 32: three steps per epoch, the last one short.
  EXPECT_EQ(steps, 3u * cfg.epochs);
  ASSERT_EQ(r.history.epochs.size(), cfg.epochs);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto& rec = r.history.epochs[e];
    EXPECT_EQ(rec.epoch, e + 1);
    EXPECT_GE(rec.acc_train, 0.0);
    EXPECT_LE(rec.acc_eval, 1.0);
    EXPECT_FALSE(std::isnan(rec.lambda_flipped_mean));
  }
  EXPECT_EQ(r.checkpoint.epoch, cfg.epochs);
  EXPECT_EQ(r.checkpoint.lambda.size(), d.train.size());
  const auto csv = history_csv(r.history, to_json(cfg));
  EXPECT_EQ(csv.rfind('#', 0), 0u);
  EXPECT_NE(csv.find("epoch,l_cls,l_d,l_total,acc_train,acc_eval,lambda_clean_mean,lambda_flipped_mean"),
            std::string::npos);
}

TEST(Train, LabelDistributionOffLeavesLambdaAndCalibrationAlone) {
  const auto d = noisy_data(3, 0.3);
  const auto cfg = apply_setting(small_config(), Setting::kI);
  const auto r = train(d.train, &d.eval, cfg);
  for (double l : r.checkpoint.lambda) EXPECT_EQ(l, 0.0);
  auto one = cfg;
  one.epochs = 1;
  const auto early = train(d.train, &d.eval, one);
  EXPECT_EQ(early.checkpoint.params.calibration, r.checkpoint.params.calibration);
  EXPECT_NE(early.checkpoint.params.classifier, r.checkpoint.params.classifier);
  for (const auto& s : r.checkpoint.lambda_adam.steps) EXPECT_EQ(s, 0u);
}

TEST(Train, SharedLambdaWithoutUncertaintyFactors) {
  const auto d = noisy_data(4, 0.3);
  const auto r = train(d.train, &d.eval, apply_setting(small_config(), Setting::kII));
  for (double l : r.checkpoint.lambda) EXPECT_EQ(l, 0.0);
  // Initialized at zero, the per-instance factors move once they are on.
  const auto v = train(d.train, &d.eval, apply_setting(small_config(), Setting::kV));
  double moved = 0.0;
  for (double l : v.checkpoint.lambda) moved += l;
  EXPECT_GT(moved, 0.0);
}

TEST(Train, DiscriminativeOffMatchesGammaZero) {
  const auto d = noisy_data(5, 0.3);
  auto off = small_config();
  off.dl_on = false;
  auto zero = small_config();
  zero.gamma = 0.0;
  const auto a = train(d.train, &d.eval, off);
  const auto b = train(d.train, &d.eval, zero);
  EXPECT_EQ(a.checkpoint.params, b.checkpoint.params);
  EXPECT_EQ(a.checkpoint.lambda, b.checkpoint.lambda);
}

TEST(Train, RefreshModesAgreeWithOneBatch) {
  auto d = noisy_data(6, 0.2, 10);  // 30 instances, one batch
  auto cfg = small_config();
  cfg.epochs = 6;
  const auto per_epoch = train(d.train, &d.eval, cfg);
  cfg.prediction_refresh = PredictionRefresh::kPerStep;
  const auto per_step = train(d.train, &d.eval, cfg);
  expect_same_history(per_epoch.history, per_step.history);
  EXPECT_EQ(per_epoch.checkpoint.params, per_step.checkpoint.params);
  // With several batches the schedules differ.
  auto big = noisy_data(6, 0.2, 30);
  cfg.prediction_refresh = PredictionRefresh::kPerEpoch;
  const auto a = train(big.train, &big.eval, cfg);
  cfg.prediction_refresh = PredictionRefresh::kPerStep;
  const auto b = train(big.train, &big.eval, cfg);
  EXPECT_NE(a.checkpoint.params, b.checkpoint.params);
}

TEST(Train, SeparableDataIsLearned) {
  data::SyntheticSpec spec;
  spec.ambiguous_fraction = 0.0;
  Rng rng(7);
  const auto split = data::generate_synthetic_split(spec, rng);
  TrainConfig cfg;
  cfg.seed = 1;
  const auto base = train(split.train, &split.eval, apply_setting(cfg, Setting::kI));
  const auto full = train(split.train, &split.eval, cfg);
  EXPECT_GE(base.history.epochs.back().acc_train, 0.95);
  EXPECT_GE(full.history.epochs.back().acc_train, 0.95);
}

TEST(Train, DivergenceRaisesNumericError) {
  const auto d = noisy_data(8, 0.3);
  auto cfg = small_config();
  cfg.lr = 1e6;
  try {
    train(d.train, &d.eval, cfg);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_GE(e.epoch(), 1u);
    EXPECT_GE(e.step(), 1u);
  }
}

TEST(Train, RejectsBadInputs) {
  const auto d = noisy_data(9, 0.0);
  auto cfg = small_config();
  cfg.ld_on = false;
  EXPECT_THROW(train(d.train, &d.eval, cfg), ConfigError);
  data::Dataset tiny = d.train;
  tiny.instances.resize(1);
  EXPECT_THROW(train(tiny, nullptr, small_config()), InsufficientDataError);
}

TEST(Cache, ParallelEqualsSerialAndRowsAreDistributions) {
  Rng rng(10);
  const auto ds = testing_support::random_dataset(rng, 300, 5, 4);
  model::ModelDims dims;
  dims.input_dim = 5;
  dims.num_classes = 4;
  const auto params = model::init_model(dims, rng);
  const auto par = refresh_prediction_cache(params, ds, 3, 7);
  EXPECT_EQ(par, refresh_prediction_cache_serial(params, ds, 3, 7));
  EXPECT_EQ(par.epoch, 3u);
  EXPECT_EQ(par.step, 7u);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double total = 0.0;
    for (double p : par.probs.row(i)) total += p;
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_EQ(numerics::Vector(par.probs.row(i).begin(), par.probs.row(i).end()),
              model::predict(params, ds.instances[i].x));
  }
}

TEST(Inference, ArgmaxWithLowestIndexTies) {
  Rng rng(11);
  model::ModelDims dims;
  dims.input_dim = 3;
  dims.num_classes = 3;
  auto params = model::init_model(dims, rng);
  const auto ds = testing_support::random_dataset(rng, 20, 3, 3);
  auto& head = params.classifier.head;
  std::fill(head.weight.data().begin(), head.weight.data().end(), 0.0);
  head.bias = {0.0, 0.0, 0.0};
  for (std::size_t y : eval_inference(params, ds.instances)) EXPECT_EQ(y, 0u);
  head.bias = {0.2, 0.5, 0.3};
  for (std::size_t y : eval_inference(params, ds.instances)) EXPECT_EQ(y, 1u);
  head.bias = {0.1, 0.5, 0.5};
  for (std::size_t y : eval_inference(params, ds.instances)) EXPECT_EQ(y, 1u);
  const auto wrong = testing_support::random_dataset(rng, 2, 4, 3);
  EXPECT_THROW(eval_inference(params, wrong.instances), DimensionError);
}
