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

#include "vflow/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace vflow {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string());
  }
}

Tensor Tensor::Vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::FromRows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 1) return 1;
  if (shape_.size() != 2) throw DimensionError("expected rank-2 tensor, got " + shape_string());
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 1) return shape_[0];
  if (shape_.size() != 2) throw DimensionError("expected rank-2 tensor, got " + shape_string());
  return shape_[1];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!same_shape(other)) {
    throw DimensionError("shape mismatch " + shape_string() + " vs " + other.shape_string());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

std::string Tensor::shape_string() const {
  std::string out = "(";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape_[i]);
  }
  return out + ")";
}

Tensor hconcat(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw DimensionError("hconcat row mismatch");
  const std::size_t n = a.rows(), ca = a.cols(), cb = b.cols();
  Tensor out = Tensor::Matrix(n, ca + cb);
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(a.row(r).data(), ca, out.row(r).data());
    std::copy_n(b.row(r).data(), cb, out.row(r).data() + ca);
  }
  return out;
}

Tensor take_cols(const Tensor& t, std::size_t begin, std::size_t count) {
  if (begin + count > t.cols()) throw DimensionError("column range out of bounds");
  const std::size_t n = t.rows();
  Tensor out = Tensor::Matrix(n, count);
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(t.row(r).data() + begin, count, out.row(r).data());
  }
  return out;
}

Tensor gather_cols(const Tensor& t, std::span<const std::size_t> index) {
  const std::size_t n = t.rows(), c = t.cols();
  Tensor out = Tensor::Matrix(n, index.size());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < index.size(); ++j) {
      if (index[j] >= c) throw DimensionError("gather index out of bounds");
      out(r, j) = t(r, index[j]);
    }
  }
  return out;
}

void scatter_cols(const Tensor& src, std::span<const std::size_t> index, Tensor& dst) {
  const std::size_t n = src.rows();
  if (dst.rows() != n || src.cols() != index.size()) {
    throw DimensionError("scatter shape mismatch");
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < index.size(); ++j) dst(r, index[j]) = src(r, j);
  }
}

Tensor take_rows(const Tensor& t, std::span<const std::size_t> index) {
  const std::size_t c = t.cols();
  Tensor out = Tensor::Matrix(index.size(), c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= t.rows()) throw DimensionError("row index out of bounds");
    std::copy_n(t.row(index[i]).data(), c, out.row(i).data());
  }
  return out;
}

Tensor repeat_rows(const Tensor& t, std::size_t times) {
  const std::size_t n = t.rows(), c = t.cols();
  Tensor out = Tensor::Matrix(n * times, c);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < times; ++k) {
      std::copy_n(t.row(r).data(), c, out.row(r * times + k).data());
    }
  }
  return out;
}

double Rng::uniform() {
  // 53 high bits, shifted by half an ulp so 0 is never returned.
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::index with n = 0");
  // Rejection sampling keeps the result unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return static_cast<std::size_t>(v % n);
}

Rng Rng::fork(std::uint64_t stream) const {
  // splitmix64 finalizer over (seed, stream).
  std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return Rng(z ^ (z >> 31));
}

std::string Rng::serialize_state() const {
  std::ostringstream os;
  os << seed_ << ' ' << engine_;
  return os.str();
}

void Rng::restore_state(const std::string& state) {
  std::istringstream is(state);
  is >> seed_ >> engine_;
  if (!is) throw FormatError("corrupt rng state");
}

Tensor sample_standard_normal(Rng& rng, std::vector<std::size_t> shape) {
  Tensor out(std::move(shape));
  auto& v = out.values();
  std::size_t i = 0;
  for (; i + 1 < v.size(); i += 2) {
    const double u1 = rng.uniform();
    const double u2 = rng.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    v[i] = r * std::cos(theta);
    v[i + 1] = r * std::sin(theta);
  }
  if (i < v.size()) v[i] = rng.normal();
  return out;
}

double log_normal_pdf(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += -0.5 * v * v;
  return acc - 0.5 * kLog2Pi * static_cast<double>(x.size());
}

double log_normal_pdf(const Tensor& x) { return log_normal_pdf(std::span<const double>(x.values())); }

std::vector<double> log_normal_pdf_rows(const Tensor& x) {
  std::vector<double> out(x.rows());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = log_normal_pdf(x.row(r));
  return out;
}

double logsumexp(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("logsumexp of an empty vector");
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double log_sigmoid(double x) { return -softplus(-x); }

double logit(double p) { return std::log(p) - std::log1p(-p); }

double log_abs_det(std::span<const double> a, std::size_t n) {
  if (a.size() != n * n) throw DimensionError("log_abs_det expects a square matrix");
  std::vector<double> m(a.begin(), a.end());
  double logdet = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(m[i * n + k]) > std::abs(m[piv * n + k])) piv = i;
    }
    const double p = m[piv * n + k];
    if (!(std::abs(p) > 0.0)) throw NumericError("singular matrix");
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(m[k * n + j], m[piv * n + j]);
    }
    logdet += std::log(std::abs(p));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = m[i * n + k] / p;
      for (std::size_t j = k + 1; j < n; ++j) m[i * n + j] -= f * m[k * n + j];
    }
  }
  if (logdet < std::log(1e-300)) throw NumericError("singular matrix (|det| < 1e-300)");
  return logdet;
}

Tensor finite_diff_gradient(const ScalarFn& f, const Tensor& x, double h) {
  if (!(h > 0)) throw std::invalid_argument("finite difference step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("non-finite function value in finite differences");
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double numeric_jacobian_logdet(const VectorFn& f, const Tensor& x, double h) {
  const std::size_t d = x.size();
  if (d > 16) throw DimensionError("numeric_jacobian_logdet supports D <= 16");
  std::vector<double> jac(d * d);
  Tensor probe = x;
  for (std::size_t j = 0; j < d; ++j) {
    const double orig = probe[j];
    probe[j] = orig + h;
    const Tensor fp = f(probe);
    probe[j] = orig - h;
    const Tensor fm = f(probe);
    probe[j] = orig;
    if (fp.size() != d || fm.size() != d) throw DimensionError("f must map R^D to R^D");
    for (std::size_t i = 0; i < d; ++i) jac[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
  }
  return log_abs_det(jac, d);
}

std::vector<double> simpson_weights(const QuadratureSpec& spec) {
  if (!(spec.lower < spec.upper)) throw std::invalid_argument("quadrature needs lower < upper");
  if (spec.nodes < 3) throw std::invalid_argument("quadrature needs at least 3 nodes");
  const std::size_t n = spec.nodes % 2 == 0 ? spec.nodes + 1 : spec.nodes;
  const double step = (spec.upper - spec.lower) / static_cast<double>(n - 1);
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = (i == 0 || i == n - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    w[i] = c * step / 3.0;
  }
  return w;
}

double quadrature_1d(const std::function<double(double)>& g, const QuadratureSpec& spec) {
  const std::vector<double> w = simpson_weights(spec);
  const std::size_t n = w.size();
  const double step = (spec.upper - spec.lower) / static_cast<double>(n - 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    // Exact endpoint at i = n-1 avoids drift from repeated addition.
    const double z = i == n - 1 ? spec.upper : spec.lower + step * static_cast<double>(i);
    const double v = g(z);
    if (!std::isfinite(v)) throw NumericError("non-finite integrand at a quadrature node");
    acc += w[i] * v;
  }
  return acc;
}

}  // namespace vflow
