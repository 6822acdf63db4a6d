#include "ldlva/losses.hpp"

#include <algorithm>
#include <cmath>

namespace ldlva::losses {

using numerics::require_same_size;

double cross_entropy(std::span<const double> d, std::span<const double> f, double eps) {
  require_same_size(d.size(), f.size(), "cross_entropy");
  double loss = 0.0;
  for (std::size_t j = 0; j < d.size(); ++j) loss -= d[j] * std::log(std::max(f[j], eps));
  return loss;
}

double lambda_grad_closed_form(std::span<const double> logical, std::span<const double> aggregated,
                               std::span<const double> f, double eps) {
  return cross_entropy(aggregated, f, eps) - cross_entropy(logical, f, eps);
}

std::pair<double, double> discriminative_terms(std::span<const Vector> features,
                                               std::span<const std::size_t> labels,
                                               std::span<const double> lambdas, const Centers& centers) {
  require_same_size(features.size(), labels.size(), "discriminative_loss labels");
  require_same_size(features.size(), lambdas.size(), "discriminative_loss lambdas");
  const Matrix& mu = centers.mu;
  double pull = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (labels[i] >= mu.rows()) throw DimensionError("discriminative_loss: label out of range");
    require_same_size(features[i].size(), mu.cols(), "discriminative_loss feature");
    pull += 0.5 * (1.0 - lambdas[i]) * numerics::squared_distance(features[i], mu.row(labels[i]));
  }
  const double scale = std::sqrt(static_cast<double>(mu.cols()));
  double repel = 0.0;
  for (std::size_t j = 0; j < mu.rows(); ++j) {
    for (std::size_t k = 0; k < mu.rows(); ++k) {
      if (k != j) repel += std::exp(-numerics::squared_distance(mu.row(j), mu.row(k)) / scale);
    }
  }
  return {pull, repel};
}

double discriminative_loss(std::span<const Vector> features, std::span<const std::size_t> labels,
                           std::span<const double> lambdas, const Centers& centers) {
  const auto [pull, repel] = discriminative_terms(features, labels, lambdas, centers);
  return pull + repel;
}

double total_loss(double cls, double discriminative, double gamma) { return cls + gamma * discriminative; }

namespace {

bool needs_cache(const LossOptions& o) { return o.ld_on && o.neighbor_grad == NeighborGradMode::kDetached; }

double effective_lambda(const LossOptions& o, const ldl::LambdaStore& lambdas, std::size_t id) {
  if (!o.ld_on) return 0.0;
  return o.uf_on ? lambdas.values[id] : o.shared_lambda;
}

void check_inputs(const model::ModelParams& params, const Centers& centers, const ldl::LambdaStore& lambdas,
                  const LossOptions& options, const BatchInputs& in) {
  if (!in.train || !in.table) throw InternalStateError("batch inputs missing dataset or neighbor table");
  const std::size_t n = in.train->size();
  if (in.table->size() != n) throw DimensionError("neighbor table does not match the training set");
  if (lambdas.size() != n) throw DimensionError("lambda store does not match the training set");
  const std::size_t v = params.classifier.head.in();
  const std::size_t m = params.classifier.head.out();
  if (centers.mu.rows() != m || centers.mu.cols() != v) throw DimensionError("centers shape mismatch");
  if (in.train->num_classes != m) throw DimensionError("class count mismatch between data and model");
  if (needs_cache(options)) {
    if (!in.cache || in.cache->features.rows() != n || in.cache->probs.rows() != n ||
        in.cache->features.cols() != v || in.cache->probs.cols() != m) {
      throw InternalStateError("detached neighbor mode requires a prediction cache over the training set");
    }
  }
  for (std::size_t id : in.batch) {
    if (id >= n) throw DimensionError("batch index out of range");
  }
}

// dL/dz for L = -sum_j d_j log(max(f_j, eps)), z the logits of f.
Vector cross_entropy_logit_grad(std::span<const double> d, std::span<const double> f, double eps) {
  double active_mass = 0.0;
  for (std::size_t j = 0; j < d.size(); ++j) {
    if (f[j] >= eps) active_mass += d[j];
  }
  Vector g(f.size());
  for (std::size_t q = 0; q < f.size(); ++q) g[q] = active_mass * f[q] - (f[q] >= eps ? d[q] : 0.0);
  return g;
}

Vector softmax_backward(std::span<const double> p, std::span<const double> grad_p) {
  const double inner = numerics::dot(p, grad_p);
  Vector g(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) g[j] = p[j] * (grad_p[j] - inner);
  return g;
}

}  // namespace

ForwardPass forward(const model::ModelParams& params, const Centers& centers, const ldl::LambdaStore& lambdas,
                    const LossOptions& options, const BatchInputs& in) {
  check_inputs(params, centers, lambdas, options, in);
  const data::Dataset& train = *in.train;
  const auto& table = *in.table;
  const std::size_t n = train.size();
  const std::size_t m = train.num_classes;
  const bool coupled = options.neighbor_grad == NeighborGradMode::kCoupled;

  ForwardPass fp;
  fp.batch.assign(in.batch.begin(), in.batch.end());
  fp.live_row_of.assign(n, -1);
  auto add_live = [&](std::size_t id) {
    if (fp.live_row_of[id] >= 0) return;
    fp.live_row_of[id] = static_cast<long>(fp.live_ids.size());
    fp.live_ids.push_back(id);
  };
  for (std::size_t id : fp.batch) add_live(id);
  if (options.ld_on && coupled) {
    for (std::size_t id : fp.batch) {
      for (std::size_t k : table.neighbors(id)) add_live(k);
    }
  }

  const std::size_t rows = fp.live_ids.size();
  fp.encoder.resize(rows);
  fp.features.resize(rows);
  fp.probs.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& x = train.instances[fp.live_ids[r]].x;
    fp.features[r] = model::encode_forward(params.encoder, x, fp.encoder[r]);
    fp.probs[r] = model::classify(params.classifier, fp.features[r]);
  }

  double l_cls = 0.0;
  std::vector<Vector> batch_features;
  std::vector<std::size_t> batch_labels;
  std::vector<double> batch_lambdas;
  fp.instances.reserve(fp.batch.size());
  for (std::size_t id : fp.batch) {
    InstanceState st;
    st.id = id;
    st.live_row = static_cast<std::size_t>(fp.live_row_of[id]);
    const auto& inst = train.instances[id];
    st.logical = data::one_hot(inst.observed_label, m);
    st.lambda = effective_lambda(options, lambdas, id);
    const Vector& f = fp.probs[st.live_row];
    const Vector& v = fp.features[st.live_row];

    if (options.ld_on) {
      const auto nbrs = table.neighbors(id);
      const auto sims = table.similarities(id);
      st.zetas.assign(nbrs.size(), 1.0);
      st.neighbor_probs.resize(nbrs.size());
      if (options.as_on) st.calibration.resize(nbrs.size());
      for (std::size_t s = 0; s < nbrs.size(); ++s) {
        const std::size_t k = nbrs[s];
        std::span<const double> v_k;
        if (coupled) {
          const auto row = static_cast<std::size_t>(fp.live_row_of[k]);
          v_k = fp.features[row];
          st.neighbor_probs[s] = fp.probs[row];
        } else {
          v_k = in.cache->features.row(k);
          const auto p = in.cache->probs.row(k);
          st.neighbor_probs[s].assign(p.begin(), p.end());
        }
        if (options.as_on) {
          st.zetas[s] = model::calibration_forward(params.calibration, v, v_k, st.calibration[s]);
        }
      }
      st.distribution.contributions = ldl::contribution_degrees(sims, st.zetas);
      std::vector<std::span<const double>> preds(st.neighbor_probs.begin(), st.neighbor_probs.end());
      auto agg = ldl::aggregate_distribution(st.distribution.contributions, preds, st.logical);
      st.distribution.aggregated = std::move(agg.distribution);
      st.distribution.used_fallback = agg.used_fallback;
      st.distribution.target = ldl::construct_target(st.logical, st.distribution.aggregated, st.lambda);
    } else {
      st.distribution.target = st.logical;
    }

    l_cls += cross_entropy(st.distribution.target, f, options.log_eps);
    batch_features.push_back(v);
    batch_labels.push_back(inst.observed_label);
    batch_lambdas.push_back(st.lambda);
    fp.instances.push_back(std::move(st));
  }

  fp.loss.cls = l_cls;
  fp.loss.discriminative = discriminative_loss(batch_features, batch_labels, batch_lambdas, centers);
  fp.loss.gamma = options.dl_on ? options.gamma : 0.0;
  fp.loss.total = total_loss(fp.loss.cls, fp.loss.discriminative, fp.loss.gamma);
  fp.complete = true;
  return fp;
}

GradientSet backward(const model::ModelParams& params, const Centers& centers, const ldl::LambdaStore& lambdas,
                     const LossOptions& options, const BatchInputs& in, const ForwardPass& fp) {
  if (!fp.complete || fp.instances.size() != fp.batch.size() ||
      !std::equal(fp.batch.begin(), fp.batch.end(), in.batch.begin(), in.batch.end())) {
    throw InternalStateError("backward: forward pass missing or computed for a different batch");
  }
  check_inputs(params, centers, lambdas, options, in);
  const data::Dataset& train = *in.train;
  const auto& table = *in.table;
  const std::size_t n = train.size();
  const std::size_t m = train.num_classes;
  const bool coupled = options.neighbor_grad == NeighborGradMode::kCoupled;
  const double gamma = options.dl_on ? options.gamma : 0.0;
  const Matrix& mu = centers.mu;
  const std::size_t dim = mu.cols();

  GradientSet g;
  g.model = model::zeros_like(params);
  g.centers = Matrix(mu.rows(), mu.cols());
  g.lambda.assign(n, 0.0);

  const std::size_t rows = fp.live_ids.size();
  std::vector<Vector> grad_logits(rows, Vector(m, 0.0));
  std::vector<Vector> grad_features(rows, Vector(dim, 0.0));

  for (const InstanceState& st : fp.instances) {
    const auto& inst = train.instances[st.id];
    const Vector& f = fp.probs[st.live_row];
    const Vector& v = fp.features[st.live_row];
    const auto& dist = st.distribution;

    const Vector dz = cross_entropy_logit_grad(dist.target, f, options.log_eps);
    for (std::size_t j = 0; j < m; ++j) grad_logits[st.live_row][j] += dz[j];

    if (options.dl_on) {
      const double w = gamma * (1.0 - st.lambda);
      const auto c = mu.row(inst.observed_label);
      auto gc = g.centers.row(inst.observed_label);
      for (std::size_t q = 0; q < dim; ++q) {
        const double diff = v[q] - c[q];
        grad_features[st.live_row][q] += w * diff;
        gc[q] -= w * diff;
      }
    }

    if (!options.ld_on) continue;

    if (options.uf_on) {
      double gl = lambda_grad_closed_form(st.logical, dist.aggregated, f, options.log_eps);
      if (options.lambda_grad == LambdaGradMode::kFull && options.dl_on) {
        gl -= gamma * 0.5 * numerics::squared_distance(v, mu.row(inst.observed_label));
      }
      g.lambda[st.id] = gl;
      g.lambda_ids.push_back(st.id);
    }

    if (dist.used_fallback || st.lambda == 0.0) continue;

    // dL/d d_tilde_j = lambda * (-log f_j)
    Vector grad_agg(m);
    for (std::size_t j = 0; j < m; ++j) grad_agg[j] = -st.lambda * std::log(std::max(f[j], options.log_eps));

    const auto nbrs = table.neighbors(st.id);
    const auto sims = table.similarities(st.id);
    double total_c = 0.0;
    for (double c : dist.contributions) total_c += c;

    for (std::size_t s = 0; s < nbrs.size(); ++s) {
      const Vector& p = st.neighbor_probs[s];
      if (options.as_on) {
        double grad_c = 0.0;
        for (std::size_t j = 0; j < m; ++j) grad_c += grad_agg[j] * (p[j] - dist.aggregated[j]);
        grad_c /= total_c;
        const double zeta = st.zetas[s];
        const double grad_logit = grad_c * sims[s] * zeta * (1.0 - zeta);
        auto [gvi, gvk] = model::calibration_backward(params.calibration, st.calibration[s], grad_logit,
                                                      g.model.calibration);
        for (std::size_t q = 0; q < dim; ++q) grad_features[st.live_row][q] += gvi[q];
        if (coupled) {
          const auto row = static_cast<std::size_t>(fp.live_row_of[nbrs[s]]);
          for (std::size_t q = 0; q < dim; ++q) grad_features[row][q] += gvk[q];
        }
      }
      if (coupled) {
        const auto row = static_cast<std::size_t>(fp.live_row_of[nbrs[s]]);
        const double w = dist.contributions[s] / total_c;
        Vector grad_p(m);
        for (std::size_t j = 0; j < m; ++j) grad_p[j] = w * grad_agg[j];
        const Vector gz = softmax_backward(p, grad_p);
        for (std::size_t j = 0; j < m; ++j) grad_logits[row][j] += gz[j];
      }
    }
  }

  if (options.dl_on && mu.rows() > 1) {
    const double scale = std::sqrt(static_cast<double>(dim));
    for (std::size_t a = 0; a < mu.rows(); ++a) {
      auto ga = g.centers.row(a);
      for (std::size_t k = 0; k < mu.rows(); ++k) {
        if (k == a) continue;
        const double e = std::exp(-numerics::squared_distance(mu.row(a), mu.row(k)) / scale);
        const double coeff = gamma * 2.0 * e * (-2.0 / scale);
        for (std::size_t q = 0; q < dim; ++q) ga[q] += coeff * (mu(a, q) - mu(k, q));
      }
    }
  }

  for (std::size_t r = 0; r < rows; ++r) {
    const Vector gv = model::classify_backward(params.classifier, fp.features[r], grad_logits[r], g.model.classifier);
    for (std::size_t q = 0; q < dim; ++q) grad_features[r][q] += gv[q];
    model::encode_backward(params.encoder, fp.encoder[r], grad_features[r], g.model.encoder);
  }
  return g;
}

}  // namespace ldlva::losses
