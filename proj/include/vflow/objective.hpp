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

#ifndef VFLOW_OBJECTIVE_HPP_
#define VFLOW_OBJECTIVE_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "vflow/model.hpp"
#include "vflow/numerics.hpp"

namespace vflow {

// Per-example bound value with its components, all in nats.
// value = log_pxz - log_q (- log_r for discrete data).
struct ElboEstimate {
  std::vector<double> value;
  std::vector<double> log_pxz;
  std::vector<double> log_q;  // empty when D_Z = 0
  std::vector<double> log_r;  // empty for continuous data

  double mean() const;
};

// Everything the backward pass needs from one draw.
struct ElboCache {
  FlowDensity p;
  std::optional<ConditionalSample> q;
  std::optional<ConditionalSample> r;
  std::size_t rows = 0;
};

// One reparameterized z ~ q(z|x) per row of continuous x.
ElboEstimate elbo(const VFlowModel& model, const Tensor& x, Rng& rng, ElboCache* cache = nullptr);

// Same bound with caller-provided base noise (rows × D_Z); used by tests that
// hold the draw fixed.
ElboEstimate elbo_with_noise(const VFlowModel& model, const Tensor& x, const Tensor& noise_q,
                             ElboCache* cache = nullptr);

// Eq. 7: u ~ r(u|x), z ~ q(z|x+u). `x` holds integer bin indices.
ElboEstimate elbo_discrete(const VFlowModel& model, const Tensor& x, Rng& rng,
                           ElboCache* cache = nullptr);
ElboEstimate elbo_discrete_with_noise(const VFlowModel& model, const Tensor& x,
                                      const Tensor& noise_r, const Tensor& noise_q,
                                      ElboCache* cache = nullptr);

// Accumulates the gradient of mean(value) into `grads`, laid out in
// VFlowModel::registry() order (p, then q, then r).
void elbo_backward(const VFlowModel& model, const ElboCache& cache, std::span<Tensor> grads);

struct ImportanceConfig {
  std::size_t samples = 100;
  // Rows pushed through the flows at once; bounds memory for large S.
  std::size_t max_batch_rows = 8192;
};

// Eq. 5 estimate of log p(x) per row: logsumexp of S log-weights minus log S.
// Uses the discrete bound's weights when the model has an r flow.
std::vector<double> importance_log_likelihood(const VFlowModel& model, const Tensor& x,
                                              const ImportanceConfig& cfg, Rng& rng);

double bits_per_dim(double total_nats, std::size_t dims);

}  // namespace vflow

#endif  // VFLOW_OBJECTIVE_HPP_
