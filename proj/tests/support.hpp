#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "ldlva/data.hpp"
#include "ldlva/ldl.hpp"
#include "ldlva/losses.hpp"
#include "ldlva/model.hpp"
#include "ldlva/neighborhood.hpp"
#include "ldlva/numerics.hpp"
#include "ldlva/training.hpp"

namespace testing_support {

using namespace ldlva;
using numerics::Matrix;
using numerics::Rng;
using numerics::Vector;

// Random dataset with dense ids, VA in [-1, 1], random labels and, optionally,
// random gt distributions.
inline data::Dataset random_dataset(Rng& rng, std::size_t n, std::size_t f, std::size_t m, bool with_gt = false) {
  data::Dataset ds;
  ds.num_classes = m;
  ds.feature_dim = f;
  for (std::size_t i = 0; i < n; ++i) {
    data::Instance inst;
    inst.id = i;
    inst.x.resize(f);
    for (auto& v : inst.x) v = rng.normal();
    inst.va = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    inst.clean_label = rng.uniform_index(m);
    inst.observed_label = rng.uniform_index(m);
    if (with_gt) {
      Vector gt(m);
      double total = 0.0;
      for (auto& p : gt) total += (p = rng.uniform(0.05, 1.0));
      for (auto& p : gt) p /= total;
      inst.gt_distribution = gt;
    }
    ds.instances.push_back(std::move(inst));
  }
  return ds;
}

inline Vector random_distribution(Rng& rng, std::size_t m, double floor = 0.0) {
  Vector p(m);
  double total = 0.0;
  for (auto& v : p) total += (v = floor + rng.uniform());
  for (auto& v : p) v /= total;
  return p;
}

// Everything needed to evaluate the batch objective on a tiny problem.
struct Problem {
  data::Dataset train;
  model::ModelParams params;
  losses::Centers centers;
  ldl::LambdaStore lambdas;
  neighborhood::NeighborTable table;
  model::PredictionCache cache;
  std::vector<std::size_t> batch;
  losses::LossOptions options;

  losses::BatchInputs inputs() const { return {&train, &table, &cache, batch}; }
  losses::ForwardPass forward() const { return losses::forward(params, centers, lambdas, options, inputs()); }
  losses::GradientSet backward(const losses::ForwardPass& pass) const {
    return losses::backward(params, centers, lambdas, options, inputs(), pass);
  }
};

struct ProblemShape {
  std::size_t n = 12;
  std::size_t f = 4;
  std::size_t v = 4;
  std::size_t m = 3;
  std::size_t k = 3;
  std::vector<std::size_t> encoder_hidden{6};
  std::size_t cal1 = 8;
  std::size_t cal2 = 6;
  double delta = 0.5;
};

// Random parameters, centers away from zero, lambdas in (0.1, 0.9) so that
// finite differences never leave [0, 1]. The batch is every instance.
inline Problem make_problem(std::uint64_t seed, const ProblemShape& s = {}) {
  Rng rng(seed);
  Problem p;
  p.train = random_dataset(rng, s.n, s.f, s.m);
  model::ModelDims dims;
  dims.input_dim = s.f;
  dims.encoder_hidden = s.encoder_hidden;
  dims.feature_dim = s.v;
  dims.num_classes = s.m;
  dims.calibration_hidden1 = s.cal1;
  dims.calibration_hidden2 = s.cal2;
  p.params = model::init_model(dims, rng);
  // Layer-norm affine parameters away from their init so their gradients are generic.
  for (auto* ln : {&p.params.calibration.norm1, &p.params.calibration.norm2}) {
    for (auto& g : ln->gain) g = rng.uniform(0.5, 1.5);
    for (auto& b : ln->bias) b = rng.uniform(-0.3, 0.3);
  }
  p.centers = losses::Centers::zeros(s.m, s.v);
  for (auto& c : p.centers.mu.data()) c = rng.normal() * 0.5;
  p.lambdas = ldl::LambdaStore::zeros(s.n);
  for (auto& l : p.lambdas.values) l = rng.uniform(0.1, 0.9);
  p.table = neighborhood::build_neighbor_table(p.train, s.k, s.delta);
  p.cache = training::refresh_prediction_cache(p.params, p.train);
  for (std::size_t i = 0; i < s.n; ++i) p.batch.push_back(i);
  return p;
}

// Norm-wise relative error of one gradient block: |a - n| / max(|a|, |n|, floor).
inline double relative_error(const Vector& analytic, const Vector& numeric, double floor = 1e-8) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

// Central differences of `loss` over every entry of `values`.
inline Vector central_differences(std::span<double> values, const std::function<double()>& loss, double h) {
  Vector out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + h;
    const double up = loss();
    values[i] = keep - h;
    const double down = loss();
    values[i] = keep;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

struct BlockCheck {
  std::string name;
  double rel_error = 0.0;
  std::size_t entries = 0;
};

// Compares every analytic gradient block of `p` against central differences
// of the selected loss (total by default, L_cls when `cls_only_loss`).
inline std::vector<BlockCheck> check_all_blocks(Problem& p, double h = 1e-5, bool cls_only_loss = false) {
  const auto pass = p.forward();
  const auto grads = p.backward(pass);
  auto loss = [&p, cls_only_loss]() {
    const auto fp = p.forward();
    return cls_only_loss ? fp.loss.cls : fp.loss.total;
  };

  std::vector<BlockCheck> out;
  auto add = [&out](const std::string& name, std::span<const double> a, const Vector& n) {
    Vector av(a.begin(), a.end());
    out.push_back({name, relative_error(av, n), av.size()});
  };

  auto params = model::tensors(p.params);
  const auto gparams = model::tensors(grads.model);
  const char* names[] = {"encoder", "classifier", "calibration"};
  for (int comp = 0; comp < 3; ++comp) {
    Vector a, n;
    for (std::size_t t = 0; t < params.size(); ++t) {
      if (static_cast<int>(params[t].component) != comp) continue;
      const auto num = central_differences(params[t].data, loss, h);
      a.insert(a.end(), gparams[t].data.begin(), gparams[t].data.end());
      n.insert(n.end(), num.begin(), num.end());
    }
    add(names[comp], a, n);
  }
  add("centers", grads.centers.data(), central_differences(p.centers.mu.data(), loss, h));
  add("lambda", grads.lambda, central_differences(p.lambdas.values, loss, h));
  return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ldlva_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace testing_support
