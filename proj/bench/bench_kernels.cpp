// Serial reference vs OpenMP kernels.
#include <benchmark/benchmark.h>

#include "ldlva/data.hpp"
#include "ldlva/model.hpp"
#include "ldlva/neighborhood.hpp"
#include "ldlva/training.hpp"

namespace {

using namespace ldlva;

data::Dataset make_dataset(std::size_t per_class) {
  data::SyntheticSpec spec;
  spec.num_classes = 7;
  spec.per_class = per_class;
  spec.eval_per_class = 1;
  numerics::Rng rng(42);
  return data::generate_synthetic(spec, rng);
}

void BM_NeighborTableSerial(benchmark::State& state) {
  const auto ds = make_dataset(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(neighborhood::build_neighbor_table_serial(ds, 8, 0.5));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(ds.size()));
}

void BM_NeighborTableParallel(benchmark::State& state) {
  const auto ds = make_dataset(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(neighborhood::build_neighbor_table(ds, 8, 0.5));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(ds.size()));
}

model::ModelParams make_model(const data::Dataset& ds) {
  training::TrainConfig cfg;
  numerics::Rng rng(7);
  return model::init_model(cfg.model_dims(ds.feature_dim, ds.num_classes), rng);
}

void BM_PredictionCacheSerial(benchmark::State& state) {
  const auto ds = make_dataset(static_cast<std::size_t>(state.range(0)));
  const auto params = make_model(ds);
  for (auto _ : state) benchmark::DoNotOptimize(training::refresh_prediction_cache_serial(params, ds));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(ds.size()));
}

void BM_PredictionCacheParallel(benchmark::State& state) {
  const auto ds = make_dataset(static_cast<std::size_t>(state.range(0)));
  const auto params = make_model(ds);
  for (auto _ : state) benchmark::DoNotOptimize(training::refresh_prediction_cache(params, ds));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(ds.size()));
}

}  // namespace

BENCHMARK(BM_NeighborTableSerial)->Arg(50)->Arg(200)->Arg(800);
BENCHMARK(BM_NeighborTableParallel)->Arg(50)->Arg(200)->Arg(800);
BENCHMARK(BM_PredictionCacheSerial)->Arg(50)->Arg(200)->Arg(800);
BENCHMARK(BM_PredictionCacheParallel)->Arg(50)->Arg(200)->Arg(800);

BENCHMARK_MAIN();
