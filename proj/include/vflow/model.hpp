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

#ifndef VFLOW_MODEL_HPP_
#define VFLOW_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vflow/layers.hpp"
#include "vflow/numerics.hpp"

namespace vflow {

// Intermediate inputs of every layer from one pass through a LayerStack.
struct StackCache {
  const void* owner = nullptr;
  std::uint64_t version = 0;
  std::vector<Tensor> inputs;
  Tensor context;
  bool has_context = false;
};

struct StackResult {
  Tensor output;
  std::vector<double> logdet;  // summed over layers, one per row
};

// Ordered list of layers sharing one dimensionality and context width.
class LayerStack {
 public:
  LayerStack(std::size_t dim, std::size_t context_dim);
  LayerStack(const LayerStack& other);
  LayerStack& operator=(const LayerStack& other);
  LayerStack(LayerStack&&) noexcept = default;
  LayerStack& operator=(LayerStack&&) noexcept = default;

  std::size_t dim() const { return dim_; }
  std::size_t context_dim() const { return context_dim_; }
  std::size_t size() const { return layers_.size(); }
  FlowLayer& layer(std::size_t i) { return *layers_[i]; }
  const FlowLayer& layer(std::size_t i) const { return *layers_[i]; }

  FlowLayer& add(std::unique_ptr<FlowLayer> layer);
  template <class L, class... Args>
  L& emplace(Args&&... args) {
    return static_cast<L&>(add(std::make_unique<L>(std::forward<Args>(args)...)));
  }

  std::size_t param_count() const;

  StackResult forward(const Tensor& input, const Tensor* context, StackCache* cache = nullptr) const;
  // Throws InversionError tagged with the failing layer index.
  StackResult inverse(const Tensor& output, const Tensor* context) const;
  // Gradient of Σ_rows <g_out, output> + g_logdet[r] * logdet[r]; parameter
  // gradients accumulate into `grads` (all layers' params, in order).
  Tensor backward(const StackCache& cache, const Tensor& grad_output,
                  std::span<const double> grad_logdet, std::span<Tensor> grads,
                  Tensor* grad_context) const;

  // Data-dependent ActNorm initialization: each uninitialized ActNorm is
  // fitted to the activations reaching it from `input`.
  void initialize_actnorms(const Tensor& input, const Tensor* context);
  void mark_actnorms_initialized();

 private:
  void check(const Tensor& x, const Tensor* context) const;

  std::size_t dim_;
  std::size_t context_dim_;
  std::uint64_t version_ = 0;
  std::vector<std::unique_ptr<FlowLayer>> layers_;
};

// Unconditional flow: forward maps data x to base noise ε.
class Flow {
 public:
  explicit Flow(std::size_t dim) : stack_(dim, 0) {}

  std::size_t dim() const { return stack_.dim(); }
  LayerStack& layers() { return stack_; }
  const LayerStack& layers() const { return stack_; }

 private:
  LayerStack stack_;
};

// Conditional flow q(v | c): its layers run forward in the sampling
// direction ε -> v, so log q(v|c) = log p_ε(ε) - Σ logdet.
class ConditionalFlow {
 public:
  ConditionalFlow(std::size_t dim, std::size_t context_dim) : stack_(dim, context_dim) {}

  std::size_t dim() const { return stack_.dim(); }
  std::size_t context_dim() const { return stack_.context_dim(); }
  LayerStack& layers() { return stack_; }
  const LayerStack& layers() const { return stack_; }

 private:
  LayerStack stack_;
};

struct FlowDensity {
  std::vector<double> log_prob;
  Tensor base;  // ε
  StackCache cache;
};

FlowDensity flow_log_prob(const Flow& flow, const Tensor& x);
// Maps data to base noise without the density bookkeeping.
Tensor flow_forward(const Flow& flow, const Tensor& x);
Tensor flow_sample(const Flow& flow, Rng& rng, std::size_t n);
// dL/dx for L = Σ_r grad_log_prob[r] * log_prob[r].
Tensor flow_backward(const Flow& flow, const FlowDensity& density,
                     std::span<const double> grad_log_prob, std::span<Tensor> grads);

struct ConditionalSample {
  Tensor value;                // z (or u)
  std::vector<double> log_q;   // log q(value | context)
  Tensor noise;                // ε_q
  StackCache cache;
};

ConditionalSample conditional_sample_and_logq(const ConditionalFlow& cflow, const Tensor& context,
                                              Rng& rng);
// Same as above with caller-provided noise.
ConditionalSample conditional_transform(const ConditionalFlow& cflow, const Tensor& context,
                                        const Tensor& noise);
std::vector<double> conditional_log_prob(const ConditionalFlow& cflow, const Tensor& value,
                                         const Tensor& context);
// Backpropagates dL/dvalue and dL/dlog_q; returns dL/dcontext.
Tensor conditional_backward(const ConditionalFlow& cflow, const ConditionalSample& sample,
                            const Tensor& grad_value, std::span<const double> grad_log_q,
                            std::span<Tensor> grads);

struct NamedParam {
  std::string name;
  Tensor* value;
};

// Stable, uniquely named view over every trainable tensor of a model.
class ParamRegistry {
 public:
  void add(std::string name, Tensor* value);
  const std::vector<NamedParam>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::vector<Tensor> zeros() const;
  Tensor* find(const std::string& name) const;

 private:
  std::vector<NamedParam> entries_;
};

void register_stack(ParamRegistry& registry, const std::string& prefix, LayerStack& stack);

// p(x, z) over [x | z], q(z | x), and optionally r(u | x) for dequantization.
// d_z == 0 means a plain flow over x with no q.
struct VFlowModel {
  std::size_t d_x = 0;
  std::size_t d_z = 0;
  Flow p;
  std::optional<ConditionalFlow> q;
  std::optional<ConditionalFlow> r;

  VFlowModel(std::size_t dx, std::size_t dz) : d_x(dx), d_z(dz), p(dx + dz) {}

  // Names are "p.<layer>.<Kind>.<param>", likewise for q and r, in that order.
  ParamRegistry registry();
  std::size_t p_param_count() const { return p.layers().param_count(); }
  std::size_t q_param_count() const { return q ? q->layers().param_count() : 0; }
  std::size_t r_param_count() const { return r ? r->layers().param_count() : 0; }
  void validate() const;
};

}  // namespace vflow

#endif  // VFLOW_MODEL_HPP_
