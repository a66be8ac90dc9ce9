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

#include "vflow/mlp.hpp"

#include <cmath>

#include <Eigen/Core>

namespace vflow {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXd>;

ConstMatMap as_mat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatMap as_mat(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace

Mlp::Mlp(const CouplingNetSpec& spec) : spec_(spec) {
  if (spec.out_dim == 0) throw DimensionError("coupling net needs out_dim >= 1");
  if (spec.hidden_layers > 0 && spec.hidden_units == 0) {
    throw DimensionError("coupling net needs hidden_units >= 1");
  }
  const std::size_t n = linear_count();
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t fan_in = k == 0 ? spec.in_dim : spec.hidden_units;
    const std::size_t fan_out = k + 1 == n ? spec.out_dim : spec.hidden_units;
    params_.push_back({"w" + std::to_string(k), Tensor::Matrix(fan_in, fan_out)});
    params_.push_back({"b" + std::to_string(k), Tensor({fan_out})});
    if (k == 0 && spec.context_dim > 0) {
      params_.push_back({"wc", Tensor::Matrix(spec.context_dim, fan_out)});
    }
  }
}

std::size_t Mlp::weight_index(std::size_t k) const {
  if (k == 0) return 0;
  return 2 * k + (spec_.context_dim > 0 ? 1 : 0);
}

std::size_t Mlp::context_index() const {
  if (spec_.context_dim == 0) throw DimensionError("net has no context input");
  return 2;
}

Tensor Mlp::forward(const Tensor& x, const Tensor* context, Cache* cache) const {
  const std::size_t n = x.rows();
  if (x.cols() != spec_.in_dim) {
    throw DimensionError("coupling net expects " + std::to_string(spec_.in_dim) +
                         " inputs, got " + std::to_string(x.cols()));
  }
  if ((context != nullptr) != (spec_.context_dim > 0)) {
    throw DimensionError("context presence does not match the coupling net");
  }
  if (context && (context->cols() != spec_.context_dim || context->rows() != n)) {
    throw DimensionError("context shape " + context->shape_string() + " does not match net");
  }
  if (cache) {
    cache->input = x;
    cache->context = context ? *context : Tensor();
    cache->hidden.clear();
  }

  const std::size_t layers = linear_count();
  Tensor current = x;
  for (std::size_t k = 0; k < layers; ++k) {
    const Tensor& w = params_[weight_index(k)].value;
    const Tensor& b = params_[bias_index(k)].value;
    const std::size_t fan_in = w.rows(), fan_out = w.cols();
    Tensor pre = Tensor::Matrix(n, fan_out);
    auto out = as_mat(pre, n, fan_out);
    if (fan_in > 0) {
      out.noalias() = as_mat(current, n, fan_in) * as_mat(w, fan_in, fan_out);
    } else {
      out.setZero();
    }
    if (k == 0 && context) {
      const Tensor& wc = params_[context_index()].value;
      out.noalias() += as_mat(*context, n, spec_.context_dim) * as_mat(wc, spec_.context_dim, fan_out);
    }
    out.rowwise() += ConstVecMap(b.data(), static_cast<Eigen::Index>(fan_out));
    if (k + 1 < layers) {
      out = out.array().tanh().matrix();
      if (cache) cache->hidden.push_back(pre);
    }
    current = std::move(pre);
  }
  return current;
}

void Mlp::backward(const Cache& cache, const Tensor& grad_out, Tensor* grad_x,
                   Tensor* grad_context, std::span<Tensor> grads) const {
  const std::size_t n = cache.input.rows();
  const std::size_t layers = linear_count();
  if (grads.size() != params_.size()) throw DimensionError("gradient buffer mismatch");
  if (grad_out.rows() != n || grad_out.cols() != spec_.out_dim) {
    throw DimensionError("coupling net upstream gradient has wrong shape");
  }

  Tensor delta = grad_out;  // gradient w.r.t. the pre-activation of map k
  for (std::size_t kk = layers; kk-- > 0;) {
    const Tensor& w = params_[weight_index(kk)].value;
    const std::size_t fan_in = w.rows(), fan_out = w.cols();
    const Tensor& input = kk == 0 ? cache.input : cache.hidden[kk - 1];
    auto d = as_mat(delta, n, fan_out);

    as_mat(grads[weight_index(kk)], fan_in, fan_out).noalias() +=
        as_mat(input, n, fan_in).transpose() * d;
    Tensor& gb = grads[bias_index(kk)];
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < fan_out; ++j) gb[j] += delta(r, j);
    }

    if (kk == 0) {
      if (spec_.context_dim > 0) {
        const Tensor& wc = params_[context_index()].value;
        as_mat(grads[context_index()], spec_.context_dim, fan_out).noalias() +=
            as_mat(cache.context, n, spec_.context_dim).transpose() * d;
        if (grad_context) {
          *grad_context = Tensor::Matrix(n, spec_.context_dim);
          as_mat(*grad_context, n, spec_.context_dim).noalias() =
              d * as_mat(wc, spec_.context_dim, fan_out).transpose();
        }
      }
      if (grad_x) {
        *grad_x = Tensor::Matrix(n, fan_in);
        if (fan_in > 0) {
          as_mat(*grad_x, n, fan_in).noalias() = d * as_mat(w, fan_in, fan_out).transpose();
        }
      }
      break;
    }

    Tensor next = Tensor::Matrix(n, fan_in);
    auto nd = as_mat(next, n, fan_in);
    nd.noalias() = d * as_mat(w, fan_in, fan_out).transpose();
    auto h = as_mat(input, n, fan_in);
    nd = (nd.array() * (1.0 - h.array().square())).matrix();
    delta = std::move(next);
  }
}

void Mlp::initialize(Rng& rng, double output_scale) {
  const std::size_t layers = linear_count();
  for (std::size_t k = 0; k < layers; ++k) {
    Tensor& w = params_[weight_index(k)].value;
    std::size_t fan_in = w.rows();
    if (k == 0) fan_in += spec_.context_dim;
    const double scale = (k + 1 == layers ? output_scale : 1.0) /
                         std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    for (double& v : w.values()) v = scale * rng.normal();
    params_[bias_index(k)].value.fill(0.0);
    if (k == 0 && spec_.context_dim > 0) {
      for (double& v : params_[context_index()].value.values()) v = scale * rng.normal();
    }
  }
}

void Mlp::zero_output() {
  const std::size_t last = linear_count() - 1;
  params_[weight_index(last)].value.fill(0.0);
  params_[bias_index(last)].value.fill(0.0);
  if (last == 0 && spec_.context_dim > 0) params_[context_index()].value.fill(0.0);
}

}  // namespace vflow
