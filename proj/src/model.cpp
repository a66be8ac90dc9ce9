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

#include "vflow/model.hpp"

#include <atomic>
#include <cmath>

namespace vflow {

namespace {

std::atomic<std::uint64_t> next_version{1};

}  // namespace

LayerStack::LayerStack(std::size_t dim, std::size_t context_dim)
    : dim_(dim), context_dim_(context_dim), version_(next_version++) {
  if (dim == 0) throw DimensionError("flow dimensionality must be positive");
}

LayerStack::LayerStack(const LayerStack& other)
    : dim_(other.dim_), context_dim_(other.context_dim_), version_(next_version++) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

LayerStack& LayerStack::operator=(const LayerStack& other) {
  if (this == &other) return *this;
  LayerStack copy(other);
  *this = std::move(copy);
  return *this;
}

FlowLayer& LayerStack::add(std::unique_ptr<FlowLayer> layer) {
  if (layer->dim() != dim_) {
    throw DimensionError("layer width " + std::to_string(layer->dim()) +
                         " does not match flow width " + std::to_string(dim_));
  }
  if (layer->context_dim() != 0 && layer->context_dim() != context_dim_) {
    throw DimensionError("layer context width does not match the flow");
  }
  version_ = next_version++;
  layers_.push_back(std::move(layer));
  return *layers_.back();
}

std::size_t LayerStack::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l->params().size();
  return n;
}

void LayerStack::check(const Tensor& x, const Tensor* context) const {
  if (x.rank() != 2 || x.cols() != dim_) {
    throw DimensionError("flow expects width " + std::to_string(dim_) + ", got " +
                         x.shape_string());
  }
  if (context_dim_ > 0) {
    if (!context || context->cols() != context_dim_ || context->rows() != x.rows()) {
      throw DimensionError("flow expects a context of width " + std::to_string(context_dim_));
    }
  }
}

StackResult LayerStack::forward(const Tensor& input, const Tensor* context,
                                StackCache* cache) const {
  check(input, context);
  if (cache) {
    cache->owner = this;
    cache->version = version_;
    cache->inputs.clear();
    cache->has_context = context != nullptr && context_dim_ > 0;
    cache->context = cache->has_context ? *context : Tensor();
  }
  StackResult res{input, std::vector<double>(input.rows(), 0.0)};
  for (const auto& layer : layers_) {
    if (cache) cache->inputs.push_back(res.output);
    const Tensor* ctx = layer->context_dim() > 0 ? context : nullptr;
    LayerResult lr = layer->forward(res.output, ctx);
    for (std::size_t r = 0; r < lr.logdet.size(); ++r) res.logdet[r] += lr.logdet[r];
    res.output = std::move(lr.output);
  }
  return res;
}

StackResult LayerStack::inverse(const Tensor& output, const Tensor* context) const {
  check(output, context);
  StackResult res{output, std::vector<double>(output.rows(), 0.0)};
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const Tensor* ctx = layers_[i]->context_dim() > 0 ? context : nullptr;
    LayerResult lr;
    try {
      lr = layers_[i]->inverse(res.output, ctx);
    } catch (const InversionError& e) {
      throw InversionError(std::string(e.what()) + " (layer " + std::to_string(i) + ")",
                           static_cast<int>(i));
    } catch (const NumericError& e) {
      throw InversionError(std::string(e.what()) + " (layer " + std::to_string(i) + ")",
                           static_cast<int>(i));
    }
    for (std::size_t r = 0; r < lr.logdet.size(); ++r) res.logdet[r] += lr.logdet[r];
    res.output = std::move(lr.output);
  }
  return res;
}

Tensor LayerStack::backward(const StackCache& cache, const Tensor& grad_output,
                            std::span<const double> grad_logdet, std::span<Tensor> grads,
                            Tensor* grad_context) const {
  if (cache.owner != this || cache.version != version_ || cache.inputs.size() != layers_.size()) {
    throw std::logic_error("stale flow cache: it was produced by a different flow state");
  }
  if (grads.size() != param_count()) throw DimensionError("gradient buffer does not match flow");
  const Tensor* ctx_all = cache.has_context ? &cache.context : nullptr;
  if (grad_context && ctx_all) *grad_context = Tensor::Matrix(ctx_all->rows(), ctx_all->cols());

  std::size_t offset = grads.size();
  Tensor g = grad_output;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const FlowLayer& layer = *layers_[i];
    const std::size_t np = layer.params().size();
    offset -= np;
    const Tensor* ctx = layer.context_dim() > 0 ? ctx_all : nullptr;
    LayerGradients lg = layer.backward(cache.inputs[i], ctx, g, grad_logdet,
                                       grads.subspan(offset, np));
    if (grad_context && ctx && !lg.context.empty()) *grad_context += lg.context;
    g = std::move(lg.input);
  }
  return g;
}

void LayerStack::initialize_actnorms(const Tensor& input, const Tensor* context) {
  check(input, context);
  Tensor current = input;
  for (auto& layer : layers_) {
    if (auto* an = dynamic_cast<ActNorm*>(layer.get()); an && !an->initialized()) {
      an->initialize_from(current);
    }
    const Tensor* ctx = layer->context_dim() > 0 ? context : nullptr;
    current = layer->forward(current, ctx).output;
  }
}

void LayerStack::mark_actnorms_initialized() {
  for (auto& layer : layers_) {
    if (auto* an = dynamic_cast<ActNorm*>(layer.get())) an->set_initialized(true);
  }
}

FlowDensity flow_log_prob(const Flow& flow, const Tensor& x) {
  FlowDensity d;
  StackResult res = flow.layers().forward(x, nullptr, &d.cache);
  d.log_prob = log_normal_pdf_rows(res.output);
  for (std::size_t r = 0; r < d.log_prob.size(); ++r) {
    d.log_prob[r] += res.logdet[r];
    if (!std::isfinite(d.log_prob[r])) throw NumericError("non-finite log density");
  }
  d.base = std::move(res.output);
  return d;
}

Tensor flow_forward(const Flow& flow, const Tensor& x) {
  return flow.layers().forward(x, nullptr).output;
}

Tensor flow_sample(const Flow& flow, Rng& rng, std::size_t n) {
  if (n == 0) throw std::invalid_argument("flow_sample needs n >= 1");
  const Tensor eps = sample_standard_normal(rng, {n, flow.dim()});
  return flow.layers().inverse(eps, nullptr).output;
}

Tensor flow_backward(const Flow& flow, const FlowDensity& density,
                     std::span<const double> grad_log_prob, std::span<Tensor> grads) {
  const Tensor& eps = density.base;
  Tensor g_eps = Tensor::Matrix(eps.rows(), eps.cols());
  for (std::size_t r = 0; r < eps.rows(); ++r) {
    for (std::size_t j = 0; j < eps.cols(); ++j) g_eps(r, j) = -grad_log_prob[r] * eps(r, j);
  }
  return flow.layers().backward(density.cache, g_eps, grad_log_prob, grads, nullptr);
}

ConditionalSample conditional_transform(const ConditionalFlow& cflow, const Tensor& context,
                                        const Tensor& noise) {
  ConditionalSample s;
  s.noise = noise;
  StackResult res = cflow.layers().forward(noise, &context, &s.cache);
  s.log_q = log_normal_pdf_rows(noise);
  for (std::size_t r = 0; r < s.log_q.size(); ++r) s.log_q[r] -= res.logdet[r];
  s.value = std::move(res.output);
  return s;
}

ConditionalSample conditional_sample_and_logq(const ConditionalFlow& cflow, const Tensor& context,
                                              Rng& rng) {
  if (context.cols() != cflow.context_dim()) {
    throw DimensionError("context width does not match the conditional flow");
  }
  const Tensor noise = sample_standard_normal(rng, {context.rows(), cflow.dim()});
  return conditional_transform(cflow, context, noise);
}

std::vector<double> conditional_log_prob(const ConditionalFlow& cflow, const Tensor& value,
                                         const Tensor& context) {
  StackResult res = cflow.layers().inverse(value, &context);
  std::vector<double> out = log_normal_pdf_rows(res.output);
  for (std::size_t r = 0; r < out.size(); ++r) out[r] += res.logdet[r];
  return out;
}

Tensor conditional_backward(const ConditionalFlow& cflow, const ConditionalSample& sample,
                            const Tensor& grad_value, std::span<const double> grad_log_q,
                            std::span<Tensor> grads) {
  std::vector<double> gl(grad_log_q.size());
  for (std::size_t r = 0; r < gl.size(); ++r) gl[r] = -grad_log_q[r];
  Tensor grad_context;
  cflow.layers().backward(sample.cache, grad_value, gl, grads, &grad_context);
  return grad_context;
}

void ParamRegistry::add(std::string name, Tensor* value) {
  for (const auto& e : entries_) {
    if (e.name == name) throw std::logic_error("duplicate parameter name " + name);
  }
  entries_.push_back({std::move(name), value});
}

std::vector<Tensor> ParamRegistry::zeros() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.emplace_back(e.value->shape());
  return out;
}

Tensor* ParamRegistry::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.value;
  }
  return nullptr;
}

void register_stack(ParamRegistry& registry, const std::string& prefix, LayerStack& stack) {
  for (std::size_t i = 0; i < stack.size(); ++i) {
    FlowLayer& layer = stack.layer(i);
    const std::string base = prefix + "." + std::to_string(i) + "." + std::string(to_string(layer.kind()));
    for (auto& p : layer.params()) registry.add(base + "." + p.name, &p.value);
  }
}

ParamRegistry VFlowModel::registry() {
  ParamRegistry reg;
  register_stack(reg, "p", p.layers());
  if (q) register_stack(reg, "q", q->layers());
  if (r) register_stack(reg, "r", r->layers());
  return reg;
}

void VFlowModel::validate() const {
  if (p.dim() != d_x + d_z) throw DimensionError("p flow must span D_X + D_Z");
  if (d_z > 0) {
    if (!q) throw DimensionError("a model with D_Z > 0 needs a q flow");
    if (q->dim() != d_z || q->context_dim() != d_x) {
      throw DimensionError("q flow must map D_Z with a D_X context");
    }
  } else if (q) {
    throw DimensionError("q flow given for D_Z = 0");
  }
  if (r && (r->dim() != d_x || r->context_dim() != d_x)) {
    throw DimensionError("r flow must map D_X with a D_X context");
  }
}

}  // namespace vflow
