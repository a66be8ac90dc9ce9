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

#ifndef VFLOW_THEORY_HPP_
#define VFLOW_THEORY_HPP_

#include <cstddef>
#include <string>
#include <vector>

#include "vflow/model.hpp"
#include "vflow/objective.hpp"

namespace vflow {

// Lifts a D_X-dimensional flow to D_X + D_Z dimensions so that every layer
// maps [x | z] to [f(x) | z]. Supports ActNorm, PointwiseLinear, TupleFlip and
// unconditional AffineCoupling; anything else throws UnsupportedError.
Flow embed_flow(const Flow& base, std::size_t d_z);

// q(z|x) = N(z; 0, I) built from the same layer kinds as a trained q, with
// every layer set to the identity.
ConditionalFlow trivial_q(std::size_t d_z, std::size_t d_x, std::size_t hidden_units = 50,
                          std::size_t hidden_layers = 2);

// VFlowModel made of embed_flow(base, d_z) and trivial_q.
VFlowModel embedded_model(const Flow& base, std::size_t d_z);

struct EmbeddingPoint {
  double log_px = 0.0;    // base flow at x
  double log_pa = 0.0;    // embedded flow at [x | z]
  double log_pz = 0.0;    // N(z; 0, I)
  double elbo = 0.0;
  double is_small = 0.0;  // IS with S = 1
  double is_large = 0.0;  // IS with S = 16
  double factorization_error = 0.0;  // |log_pa - log_px - log_pz|
  double elbo_error = 0.0;
  double is_error = 0.0;  // max over both S
};

struct EmbeddingReport {
  std::size_t d_z = 0;
  std::vector<EmbeddingPoint> points;
  double worst_factorization = 0.0;
  double worst_elbo = 0.0;
  double worst_is = 0.0;

  bool passed(double tolerance = 1e-9) const;
  std::string summary() const;
};

// Evaluates the three equalities of the embedding argument at `n_points`
// x drawn from the base flow and z ~ N(0, I).
EmbeddingReport verify_theorem1(const Flow& base, std::size_t d_z, std::size_t n_points, Rng& rng);

// For a joint flow over [x | z] with D_Z = 1: log ∫ p(x, z) dz by Simpson
// quadrature on z ∈ [-8, 8]. For an embedded flow this should match log p_x(x).
double log_marginal_by_quadrature(const Flow& joint, const Tensor& x_row,
                                  std::size_t nodes = 4001);

}  // namespace vflow

#endif  // VFLOW_THEORY_HPP_
