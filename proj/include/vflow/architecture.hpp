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

#ifndef VFLOW_ARCHITECTURE_HPP_
#define VFLOW_ARCHITECTURE_HPP_

#include <cstddef>
#include <string>

#include "vflow/model.hpp"

namespace vflow {

enum class CouplingKind { kAffine, kMixLogistic };

CouplingKind parse_coupling_kind(const std::string& name);
std::string to_string(CouplingKind kind);

// Hyperparameters of the Glow-style models used for the toy experiments.
// One step is ActNorm -> PointwiseLinear -> coupling, with Checker and
// Channel masks alternating from step to step.
struct ArchitectureSpec {
  std::size_t d_x = 2;
  std::size_t d_z = 0;
  std::size_t p_steps = 3;
  std::size_t q_steps = 1;
  std::size_t hidden_units = 50;   // D_H
  std::size_t hidden_layers = 2;   // B
  CouplingKind coupling = CouplingKind::kAffine;
  std::size_t components = 4;      // K, MixLogistic only
  bool clamp_scale = true;
  // Adds r(u|x) for dequantization.
  bool dequantize = false;
  std::size_t r_steps = 2;

  void validate() const;
};

// Unconditional stack of `steps` Glow steps. Coupling nets get random hidden
// layers and a zero output layer, so the flow starts as ActNorm ∘ rotation.
Flow build_glow(std::size_t dim, std::size_t steps, const ArchitectureSpec& spec, Rng& rng);

// q(z|x): a single GaussianConditional when D_Z = 1, otherwise conditional
// Glow steps whose couplings see x through their context input.
ConditionalFlow build_q(const ArchitectureSpec& spec, Rng& rng);

// r(u|x): GaussianConditional, conditional affine couplings separated by
// TupleFlips, then a Sigmoid so that u lies in (0,1)^D_X.
ConditionalFlow build_r(const ArchitectureSpec& spec, Rng& rng);

VFlowModel build_model(const ArchitectureSpec& spec, Rng& rng);

}  // namespace vflow

#endif  // VFLOW_ARCHITECTURE_HPP_
