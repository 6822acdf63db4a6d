#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ldlva/error.hpp"

namespace ldlva::numerics {

using Vector = std::vector<double>;

// Row-major dense matrix with fixed dimensions.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

void require_same_size(std::size_t a, std::size_t b, const char* what);

double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> values);

// y = W x + b
Vector affine(const Matrix& weight, std::span<const double> bias, std::span<const double> x);

// Numerically stable softmax (max-subtracted).
Vector softmax(std::span<const double> logits);

double sigmoid(double x);

// Population-variance layer normalization followed by an elementwise affine map.
Vector layer_norm(std::span<const double> z, std::span<const double> gain,
                  std::span<const double> bias, double eps);

// Intermediates kept by layer_norm_forward for the backward pass.
struct LayerNormTrace {
  Vector normalized;  // pre-affine output
  double inv_std = 0.0;
};

Vector layer_norm_forward(std::span<const double> z, std::span<const double> gain,
                          std::span<const double> bias, double eps, LayerNormTrace& trace);

// Accumulates into grad_gain / grad_bias and returns dL/dz.
Vector layer_norm_backward(std::span<const double> grad_out, std::span<const double> gain,
                           const LayerNormTrace& trace, std::span<double> grad_gain,
                           std::span<double> grad_bias);

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const AdamHyper&) const = default;
};

struct AdamState {
  AdamHyper hyper;
  Vector m;
  Vector v;
  std::uint64_t step = 0;

  static AdamState zeros(std::size_t n, AdamHyper hyper) {
    return AdamState{hyper, Vector(n, 0.0), Vector(n, 0.0), 0};
  }
  bool operator==(const AdamState&) const = default;
};

// Bias-corrected Adam update in place.
void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state);

// Adam over a vector where only some entries receive a gradient per step; each
// entry carries its own step counter so untouched entries keep their state.
struct SparseAdamState {
  AdamHyper hyper;
  Vector m;
  Vector v;
  std::vector<std::uint64_t> steps;

  static SparseAdamState zeros(std::size_t n, AdamHyper hyper) {
    return SparseAdamState{hyper, Vector(n, 0.0), Vector(n, 0.0),
                           std::vector<std::uint64_t>(n, 0)};
  }
  bool operator==(const SparseAdamState&) const = default;
};

void sparse_adam_step(std::span<double> param, std::span<const std::size_t> indices,
                      std::span<const double> grads, SparseAdamState& state);

// xoshiro256** seeded through splitmix64.
//
//   splitmix64:  z = (s += 0x9E3779B97F4A7C15);
//                z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//                z = (z ^ (z >> 27)) * 0x94D049BB133111EB;  return z ^ (z >> 31)
//   xoshiro256**: result = rotl(s1 * 5, 7) * 9;  t = s1 << 17;
//                s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t; s3 = rotl(s3, 45)
//
// The four state words are the first four splitmix64 outputs of the seed.
// uniform() uses the top 53 bits; uniform_index() uses rejection sampling;
// normal() is Box-Muller on two uniforms (no cached spare).
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  std::size_t uniform_index(std::size_t n);
  double normal();

  // Fisher-Yates, drawing from the back.
  template <class T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(values[i - 1], values[j]);
    }
  }

  std::uint64_t seed() const noexcept { return seed_; }
  const State& state() const noexcept { return state_; }
  void set_state(const State& state) noexcept { state_ = state; }

 private:
  std::uint64_t seed_;
  State state_{};
};

std::uint64_t splitmix64(std::uint64_t& state);

// Independent stream seed for a named purpose under a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// Central differences, one coordinate at a time.
Vector finite_diff_gradient(const std::function<double(std::span<const double>)>& fn,
                            std::span<const double> point, double h);

}  // namespace ldlva::numerics
