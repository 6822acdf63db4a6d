#include "ldlva/numerics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace ldlva::numerics {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": size mismatch (" + std::to_string(a) +
                         " vs " + std::to_string(b) + ")");
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "squared_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); });
}

Vector affine(const Matrix& weight, std::span<const double> bias, std::span<const double> x) {
  require_same_size(weight.cols(), x.size(), "affine input");
  require_same_size(weight.rows(), bias.size(), "affine bias");
  Vector y(weight.rows());
  for (std::size_t r = 0; r < weight.rows(); ++r) {
    const auto w = weight.row(r);
    double s = bias[r];
    for (std::size_t c = 0; c < x.size(); ++c) s += w[c] * x[c];
    y[r] = s;
  }
  return y;
}

Vector softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vector out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vector layer_norm_forward(std::span<const double> z, std::span<const double> gain,
                          std::span<const double> bias, double eps, LayerNormTrace& trace) {
  require_same_size(z.size(), gain.size(), "layer_norm gain");
  require_same_size(z.size(), bias.size(), "layer_norm bias");
  if (z.empty()) throw DimensionError("layer_norm: empty input");
  if (!(eps > 0.0)) throw ValidationError("eps", "layer_norm: eps must be > 0");

  const double n = static_cast<double>(z.size());
  double mean = 0.0;
  for (double x : z) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : z) var += (x - mean) * (x - mean);
  var /= n;

  trace.inv_std = 1.0 / std::sqrt(var + eps);
  trace.normalized.resize(z.size());
  Vector out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    trace.normalized[i] = (z[i] - mean) * trace.inv_std;
    out[i] = gain[i] * trace.normalized[i] + bias[i];
  }
  return out;
}

Vector layer_norm(std::span<const double> z, std::span<const double> gain,
                  std::span<const double> bias, double eps) {
  LayerNormTrace trace;
  return layer_norm_forward(z, gain, bias, eps, trace);
}

Vector layer_norm_backward(std::span<const double> grad_out, std::span<const double> gain,
                           const LayerNormTrace& trace, std::span<double> grad_gain,
                           std::span<double> grad_bias) {
  const std::size_t n = trace.normalized.size();
  require_same_size(grad_out.size(), n, "layer_norm_backward");
  Vector dxhat(n);
  double mean_dxhat = 0.0;
  double mean_dxhat_xhat = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    grad_gain[i] += grad_out[i] * trace.normalized[i];
    grad_bias[i] += grad_out[i];
    dxhat[i] = grad_out[i] * gain[i];
    mean_dxhat += dxhat[i];
    mean_dxhat_xhat += dxhat[i] * trace.normalized[i];
  }
  mean_dxhat /= static_cast<double>(n);
  mean_dxhat_xhat /= static_cast<double>(n);
  Vector dz(n);
  for (std::size_t i = 0; i < n; ++i) {
    dz[i] = trace.inv_std * (dxhat[i] - mean_dxhat - trace.normalized[i] * mean_dxhat_xhat);
  }
  return dz;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw DimensionError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state) {
  require_same_size(param.size(), grad.size(), "adam_step grad");
  require_same_size(param.size(), state.m.size(), "adam_step state");
  require_same_size(param.size(), state.v.size(), "adam_step state");
  const AdamHyper& h = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * grad[i];
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    param[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
  }
}

void sparse_adam_step(std::span<double> param, std::span<const std::size_t> indices,
                      std::span<const double> grads, SparseAdamState& state) {
  require_same_size(indices.size(), grads.size(), "sparse_adam_step");
  require_same_size(param.size(), state.m.size(), "sparse_adam_step state");
  const AdamHyper& h = state.hyper;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= param.size()) throw DimensionError("sparse_adam_step: index out of range");
    const double g = grads[k];
    const double t = static_cast<double>(++state.steps[i]);
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
    const double m_hat = state.m[i] / (1.0 - std::pow(h.beta1, t));
    const double v_hat = state.v[i] / (1.0 - std::pow(h.beta2, t));
    param[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
  }
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t s = base ^ (stream * 0xD1B54A32D192ED03ULL);
  splitmix64(s);
  return splitmix64(s);
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t s = seed;
  for (auto& word : state_) word = splitmix64(s);
}

std::uint64_t Rng::next_u64() {
  auto& s = state_;
  const std::uint64_t result = std::rotl(s[1] * 5, 7) * 9;
  const std::uint64_t t = s[1] << 17;
  s[2] ^= s[0];
  s[3] ^= s[1];
  s[1] ^= s[2];
  s[0] ^= s[3];
  s[2] ^= t;
  s[3] = std::rotl(s[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw ValidationError("n", "uniform_index: n must be >= 1");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t threshold = (0 - bound) % bound;  // 2^64 mod n
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r >= threshold) return static_cast<std::size_t>(r % bound);
  }
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vector finite_diff_gradient(const std::function<double(std::span<const double>)>& fn,
                            std::span<const double> point, double h) {
  if (!(h > 0.0)) throw ValidationError("h", "finite_diff_gradient: h must be > 0");
  Vector x(point.begin(), point.end());
  Vector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = fn(x);
    x[i] = orig - h;
    const double down = fn(x);
    x[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_gradient: non-finite function value at coordinate " +
                         std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace ldlva::numerics
