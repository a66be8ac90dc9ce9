// Copyright 2026 The VFlow Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef VFLOW_NUMERICS_HPP_
#define VFLOW_NUMERICS_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vflow/errors.hpp"

namespace vflow {

// Dense row-major array of doubles. Most of the library works on rank-2
// tensors holding one example per row.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor Vector(std::vector<double> values);
  static Tensor FromRows(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-2 accessors. A rank-1 tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  void fill(double v);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  std::string shape_string() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Column slicing and concatenation for rank-2 tensors.
Tensor hconcat(const Tensor& a, const Tensor& b);
Tensor take_cols(const Tensor& t, std::size_t begin, std::size_t count);
Tensor gather_cols(const Tensor& t, std::span<const std::size_t> index);
void scatter_cols(const Tensor& src, std::span<const std::size_t> index, Tensor& dst);
Tensor take_rows(const Tensor& t, std::span<const std::size_t> index);
Tensor repeat_rows(const Tensor& t, std::size_t times);

// Seedable generator. The engine is std::mt19937_64 (fully specified by the
// C++ standard, so streams match across platforms); normals come from a
// hand-written Box-Muller transform rather than std::normal_distribution,
// whose algorithm is implementation-defined.
class Rng {
 public:
  static constexpr const char* kAlgorithmTag = "mt19937_64/box-muller/v1";

  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  // Uniform on the open interval (0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::uint64_t next_u64() { return engine_(); }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  // Derives an independent child generator; does not advance this one.
  Rng fork(std::uint64_t stream) const;

  std::string serialize_state() const;
  void restore_state(const std::string& state);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

Tensor sample_standard_normal(Rng& rng, std::vector<std::size_t> shape);

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Σ_i [-x_i²/2 - log(2π)/2] over a flat vector.
double log_normal_pdf(std::span<const double> x);
double log_normal_pdf(const Tensor& x);
// Per-row standard-normal log-density of a rank-2 tensor.
std::vector<double> log_normal_pdf_rows(const Tensor& x);

double logsumexp(std::span<const double> v);

// Numerically stable scalar helpers shared by the layers.
double sigmoid(double x);
double log_sigmoid(double x);
double softplus(double x);
double logit(double p);

// log|det A| of a square row-major matrix via LU with partial pivoting.
// Throws NumericError if |det| underflows 1e-300.
double log_abs_det(std::span<const double> a, std::size_t n);

inline constexpr double kDefaultFiniteDiffStep = 1e-5;

using ScalarFn = std::function<double(const Tensor&)>;
using VectorFn = std::function<Tensor(const Tensor&)>;

// Central-difference gradient of f at x, same shape as x.
Tensor finite_diff_gradient(const ScalarFn& f, const Tensor& x,
                            double h = kDefaultFiniteDiffStep);

// log|det J| of f at x where J is built column by column with central
// differences. Intended for D <= 16.
double numeric_jacobian_logdet(const VectorFn& f, const Tensor& x,
                               double h = kDefaultFiniteDiffStep);

struct QuadratureSpec {
  double lower = 0.0;
  double upper = 1.0;
  std::size_t nodes = 3;
};

// Composite Simpson rule; even node counts are rounded up.
double quadrature_1d(const std::function<double(double)>& g, const QuadratureSpec& spec);

// Simpson weights for `nodes` (odd) equally spaced points over [lower, upper].
std::vector<double> simpson_weights(const QuadratureSpec& spec);

}  // namespace vflow

#endif  // VFLOW_NUMERICS_HPP_
