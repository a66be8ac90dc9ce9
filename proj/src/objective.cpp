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

#include "vflow/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace vflow {

namespace {

void check_x(const VFlowModel& model, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != model.d_x) {
    throw DimensionError("expected data of width " + std::to_string(model.d_x) + ", got " +
                         x.shape_string());
  }
  if (x.rows() == 0) throw DimensionError("empty batch");
}

// Core of both bounds: p([xc | z]) - q(z | xc), with xc the (possibly
// dequantized) continuous point.
ElboEstimate joint_bound(const VFlowModel& model, const Tensor& xc, const Tensor* noise_q,
                         ElboCache& cache) {
  ElboEstimate est;
  const std::size_t n = xc.rows();
  Tensor joint;
  if (model.d_z > 0) {
    cache.q = conditional_transform(*model.q, xc, *noise_q);
    est.log_q = cache.q->log_q;
    joint = hconcat(xc, cache.q->value);
  } else {
    joint = xc;
  }
  cache.p = flow_log_prob(model.p, joint);
  est.log_pxz = cache.p.log_prob;
  est.value = est.log_pxz;
  if (model.d_z > 0) {
    for (std::size_t r = 0; r < n; ++r) est.value[r] -= est.log_q[r];
  }
  cache.rows = n;
  return est;
}

}  // namespace

double ElboEstimate::mean() const {
  if (value.empty()) return 0.0;
  return std::accumulate(value.begin(), value.end(), 0.0) / static_cast<double>(value.size());
}

ElboEstimate elbo_with_noise(const VFlowModel& model, const Tensor& x, const Tensor& noise_q,
                             ElboCache* cache) {
  check_x(model, x);
  ElboCache local;
  ElboCache& c = cache ? *cache : local;
  c = ElboCache{};
  return joint_bound(model, x, &noise_q, c);
}

ElboEstimate elbo(const VFlowModel& model, const Tensor& x, Rng& rng, ElboCache* cache) {
  check_x(model, x);
  const Tensor noise = sample_standard_normal(rng, {x.rows(), model.d_z});
  return elbo_with_noise(model, x, noise, cache);
}

ElboEstimate elbo_discrete_with_noise(const VFlowModel& model, const Tensor& x,
                                      const Tensor& noise_r, const Tensor& noise_q,
                                      ElboCache* cache) {
  check_x(model, x);
  if (!model.r) throw std::invalid_argument("elbo_discrete needs a dequantization (r) flow");
  ElboCache local;
  ElboCache& c = cache ? *cache : local;
  c = ElboCache{};
  c.r = conditional_transform(*model.r, x, noise_r);
  Tensor xu = x;
  xu += c.r->value;
  ElboEstimate est = joint_bound(model, xu, &noise_q, c);
  est.log_r = c.r->log_q;
  for (std::size_t r = 0; r < est.value.size(); ++r) est.value[r] -= est.log_r[r];
  return est;
}

ElboEstimate elbo_discrete(const VFlowModel& model, const Tensor& x, Rng& rng, ElboCache* cache) {
  check_x(model, x);
  const Tensor noise_r = sample_standard_normal(rng, {x.rows(), model.d_x});
  const Tensor noise_q = sample_standard_normal(rng, {x.rows(), model.d_z});
  return elbo_discrete_with_noise(model, x, noise_r, noise_q, cache);
}

void elbo_backward(const VFlowModel& model, const ElboCache& cache, std::span<Tensor> grads) {
  const std::size_t np = model.p_param_count();
  const std::size_t nq = model.q_param_count();
  const std::size_t nr = model.r_param_count();
  if (grads.size() != np + nq + nr) throw DimensionError("gradient buffer does not match model");
  const std::size_t n = cache.rows;
  const std::vector<double> w(n, 1.0 / static_cast<double>(n));
  const std::vector<double> neg_w(n, -1.0 / static_cast<double>(n));

  const Tensor g_joint = flow_backward(model.p, cache.p, w, grads.subspan(0, np));
  Tensor g_x = take_cols(g_joint, 0, model.d_x);
  if (model.d_z > 0) {
    const Tensor g_z = take_cols(g_joint, model.d_x, model.d_z);
    const Tensor g_ctx = conditional_backward(*model.q, *cache.q, g_z, neg_w, grads.subspan(np, nq));
    // q's context is x + u, so its gradient only matters when u is learned.
    if (cache.r) g_x += g_ctx;
  }
  if (cache.r) conditional_backward(*model.r, *cache.r, g_x, neg_w, grads.subspan(np + nq, nr));
}

std::vector<double> importance_log_likelihood(const VFlowModel& model, const Tensor& x,
                                              const ImportanceConfig& cfg, Rng& rng) {
  check_x(model, x);
  if (cfg.samples == 0) throw std::invalid_argument("importance sampling needs S >= 1");
  const std::size_t n = x.rows();
  const std::size_t s = cfg.samples;
  std::vector<double> out(n);
  if (model.d_z == 0 && !model.r) {
    // No latent variables: the estimate is the exact density.
    return flow_log_prob(model.p, x).log_prob;
  }
  const std::size_t points_per_chunk = std::max<std::size_t>(1, cfg.max_batch_rows / s);
  const double log_s = std::log(static_cast<double>(s));
  for (std::size_t begin = 0; begin < n; begin += points_per_chunk) {
    const std::size_t count = std::min(points_per_chunk, n - begin);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), begin);
    // Row i*S + k holds sample k of point i.
    const Tensor rep = repeat_rows(take_rows(x, idx), s);
    const ElboEstimate est =
        model.r ? elbo_discrete(model, rep, rng, nullptr) : elbo(model, rep, rng, nullptr);
    for (std::size_t i = 0; i < count; ++i) {
      const std::span<const double> weights(est.value.data() + i * s, s);
      out[begin + i] = logsumexp(weights) - log_s;
    }
  }
  return out;
}

double bits_per_dim(double total_nats, std::size_t dims) {
  if (dims == 0) throw std::invalid_argument("bits_per_dim needs D >= 1");
  return -total_nats / (static_cast<double>(dims) * std::numbers::ln2);
}

}  // namespace vflow
