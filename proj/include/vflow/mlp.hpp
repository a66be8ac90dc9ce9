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

#ifndef VFLOW_MLP_HPP_
#define VFLOW_MLP_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vflow/numerics.hpp"

namespace vflow {

// A named trainable array.
struct Param {
  std::string name;
  Tensor value;
};

struct CouplingNetSpec {
  std::size_t in_dim = 1;
  std::size_t hidden_units = 50;
  std::size_t hidden_layers = 2;
  std::size_t out_dim = 1;
  std::size_t context_dim = 0;
};

// Fully connected tanh network used inside coupling layers. The optional
// context vector goes through its own linear map and is added to the first
// pre-activation. Parameters, in order: w0, b0, [wc], w1, b1, ..., wB, bB.
class Mlp {
 public:
  struct Cache {
    Tensor input;
    Tensor context;
    std::vector<Tensor> hidden;  // post-tanh activations, one per hidden layer
  };

  explicit Mlp(const CouplingNetSpec& spec);

  const CouplingNetSpec& spec() const { return spec_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  Tensor forward(const Tensor& x, const Tensor* context, Cache* cache = nullptr) const;

  // Accumulates parameter gradients into `grads` (aligned with params()).
  // grad_x / grad_context are overwritten when non-null.
  void backward(const Cache& cache, const Tensor& grad_out, Tensor* grad_x, Tensor* grad_context,
                std::span<Tensor> grads) const;

  // Gaussian init with fan-in scaling; the output layer gets `output_scale`
  // times the usual scale (0 gives the identity-at-init coupling).
  void initialize(Rng& rng, double output_scale);
  void zero_output();

  std::size_t linear_count() const { return spec_.hidden_layers + 1; }
  // Index into params() of the weight / bias of linear map k, and of wc.
  std::size_t weight_index(std::size_t k) const;
  std::size_t bias_index(std::size_t k) const { return weight_index(k) + 1; }
  std::size_t context_index() const;

 private:
  CouplingNetSpec spec_;
  std::vector<Param> params_;
};

}  // namespace vflow

#endif  // VFLOW_MLP_HPP_
