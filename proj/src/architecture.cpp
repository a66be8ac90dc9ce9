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

#include "vflow/architecture.hpp"

#include <stdexcept>

namespace vflow {

namespace {

CouplingOptions coupling_options(const ArchitectureSpec& spec, std::size_t context_dim) {
  CouplingOptions opts;
  opts.hidden_units = spec.hidden_units;
  opts.hidden_layers = spec.hidden_layers;
  opts.context_dim = context_dim;
  opts.clamp_scale = spec.clamp_scale;
  return opts;
}

SplitMask step_mask(std::size_t dim, std::size_t step) {
  return step % 2 == 0 ? SplitMask::Checker(dim) : SplitMask::Channel(dim);
}

void add_glow_step(LayerStack& stack, std::size_t step, const ArchitectureSpec& spec,
                   std::size_t context_dim, Rng& rng) {
  const std::size_t dim = stack.dim();
  stack.emplace<ActNorm>(dim);
  stack.emplace<PointwiseLinear>(PointwiseLinear::RandomRotation(dim, rng));
  const CouplingOptions opts = coupling_options(spec, context_dim);
  if (spec.coupling == CouplingKind::kMixLogistic) {
    auto& c = stack.emplace<MixLogisticCoupling>(step_mask(dim, step), spec.components, opts);
    c.net().initialize(rng, 0.0);
  } else {
    auto& c = stack.emplace<AffineCoupling>(step_mask(dim, step), opts);
    c.net().initialize(rng, 0.0);
  }
}

}  // namespace

CouplingKind parse_coupling_kind(const std::string& name) {
  if (name == "affine") return CouplingKind::kAffine;
  if (name == "mixlogistic") return CouplingKind::kMixLogistic;
  throw std::invalid_argument("unknown coupling kind '" + name +
                              "' (expected affine or mixlogistic)");
}

std::string to_string(CouplingKind kind) {
  return kind == CouplingKind::kAffine ? "affine" : "mixlogistic";
}

void ArchitectureSpec::validate() const {
  if (d_x == 0) throw DimensionError("D_X must be positive");
  if (d_x + d_z < 2) throw DimensionError("a coupling flow needs at least 2 dimensions");
  if (p_steps == 0) throw DimensionError("p needs at least one step");
  if (d_z > 0 && q_steps == 0) throw DimensionError("q needs at least one step when D_Z > 0");
  if (hidden_layers > 0 && hidden_units == 0) throw DimensionError("hidden_units must be positive");
  if (coupling == CouplingKind::kMixLogistic && components == 0) {
    throw DimensionError("MixLogistic coupling needs K >= 1");
  }
  if (dequantize && d_x < 2) throw DimensionError("dequantization flow needs D_X >= 2");
}

Flow build_glow(std::size_t dim, std::size_t steps, const ArchitectureSpec& spec, Rng& rng) {
  Flow flow(dim);
  for (std::size_t s = 0; s < steps; ++s) add_glow_step(flow.layers(), s, spec, 0, rng);
  return flow;
}

ConditionalFlow build_q(const ArchitectureSpec& spec, Rng& rng) {
  ConditionalFlow q(spec.d_z, spec.d_x);
  if (spec.d_z == 1) {
    auto& g = q.layers().emplace<GaussianConditional>(1, coupling_options(spec, spec.d_x));
    g.net().initialize(rng, 0.0);
    return q;
  }
  ArchitectureSpec affine = spec;
  affine.coupling = CouplingKind::kAffine;
  for (std::size_t s = 0; s < spec.q_steps; ++s) add_glow_step(q.layers(), s, affine, spec.d_x, rng);
  return q;
}

ConditionalFlow build_r(const ArchitectureSpec& spec, Rng& rng) {
  ConditionalFlow r(spec.d_x, spec.d_x);
  const CouplingOptions opts = coupling_options(spec, spec.d_x);
  r.layers().emplace<GaussianConditional>(spec.d_x, opts).net().initialize(rng, 0.0);
  const SplitMask mask = SplitMask::Checker(spec.d_x);
  for (std::size_t s = 0; s < spec.r_steps; ++s) {
    r.layers().emplace<AffineCoupling>(mask, opts).net().initialize(rng, 0.0);
    r.layers().emplace<TupleFlip>(TupleFlip::FromMask(mask));
  }
  r.layers().emplace<Sigmoid>(spec.d_x);
  return r;
}

VFlowModel build_model(const ArchitectureSpec& spec, Rng& rng) {
  spec.validate();
  VFlowModel model(spec.d_x, spec.d_z);
  model.p = build_glow(spec.d_x + spec.d_z, spec.p_steps, spec, rng);
  if (spec.d_z > 0) model.q = build_q(spec, rng);
  if (spec.dequantize) model.r = build_r(spec, rng);
  model.validate();
  return model;
}

}  // namespace vflow
