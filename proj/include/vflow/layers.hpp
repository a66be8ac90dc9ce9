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

#ifndef VFLOW_LAYERS_HPP_
#define VFLOW_LAYERS_HPP_

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vflow/mlp.hpp"
#include "vflow/numerics.hpp"

namespace vflow {

enum class LayerKind {
  kActNorm,
  kAffineCoupling,
  kMixLogisticCoupling,
  kPointwiseLinear,
  kSigmoid,
  kTupleFlip,
  kGaussianConditional,
  kMixAffine,
};

std::string_view to_string(LayerKind kind);

// Boolean mask over D coordinates; true marks the pass-through part.
class SplitMask {
 public:
  explicit SplitMask(std::vector<bool> pass);

  // Even indices pass through.
  static SplitMask Checker(std::size_t d);
  // The first ceil(D/2) indices pass through.
  static SplitMask Channel(std::size_t d);

  std::size_t dim() const { return pass_.size(); }
  bool passes(std::size_t i) const { return pass_[i]; }
  const std::vector<bool>& bits() const { return pass_; }
  const std::vector<std::size_t>& pass_index() const { return pass_index_; }
  const std::vector<std::size_t>& transform_index() const { return transform_index_; }

 private:
  std::vector<bool> pass_;
  std::vector<std::size_t> pass_index_;
  std::vector<std::size_t> transform_index_;
};

// Output of a batched forward or inverse pass: one logdet per row.
struct LayerResult {
  Tensor output;
  std::vector<double> logdet;
};

// Gradients of L = Σ_rows <g_out, output> + g_logdet * logdet.
struct LayerGradients {
  Tensor input;
  Tensor context;  // empty when the layer takes no context
};

// One invertible step. "Forward" is the direction the owning flow evaluates
// densities in; parameters are always defined for that direction.
class FlowLayer {
 public:
  virtual ~FlowLayer() = default;

  virtual LayerKind kind() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::size_t context_dim() const { return 0; }
  virtual std::unique_ptr<FlowLayer> clone() const = 0;

  virtual LayerResult forward(const Tensor& input, const Tensor* context) const = 0;
  // Recovers the input; logdet is the negated forward logdet at that input.
  virtual LayerResult inverse(const Tensor& output, const Tensor* context) const = 0;
  // Parameter gradients are accumulated into `grads` (aligned with params()).
  virtual LayerGradients backward(const Tensor& input, const Tensor* context,
                                  const Tensor& grad_output, std::span<const double> grad_logdet,
                                  std::span<Tensor> grads) const = 0;

  virtual std::vector<Param>& params() { return params_; }
  virtual const std::vector<Param>& params() const { return params_; }

 protected:
  void check_input(const Tensor& x, const Tensor* context) const;
  std::vector<Param> params_;
};

// Convenience wrappers mirroring the per-layer contract.
LayerResult layer_forward(const FlowLayer& layer, const Tensor& input,
                          const Tensor* context = nullptr);
LayerResult layer_inverse(const FlowLayer& layer, const Tensor& output,
                          const Tensor* context = nullptr);

// y = x * exp(log_scale) + bias.
class ActNorm final : public FlowLayer {
 public:
  explicit ActNorm(std::size_t dim);

  LayerKind kind() const override { return LayerKind::kActNorm; }
  std::size_t dim() const override { return dim_; }
  std::unique_ptr<FlowLayer> clone() const override { return std::make_unique<ActNorm>(*this); }

  LayerResult forward(const Tensor& input, const Tensor* context) const override;
  LayerResult inverse(const Tensor& output, const Tensor* context) const override;
  LayerGradients backward(const Tensor& input, const Tensor* context, const Tensor& grad_output,
                          std::span<const double> grad_logdet,
                          std::span<Tensor> grads) const override;

  Tensor& log_scale() { return params_[0].value; }
  Tensor& bias() { return params_[1].value; }
  const Tensor& log_scale() const { return params_[0].value; }
  const Tensor& bias() const { return params_[1].value; }

  bool initialized() const { return initialized_; }
  void set_initialized(bool v) { initialized_ = v; }
  // Sets scale and bias so that `batch` maps to zero mean, unit variance.
  void initialize_from(const Tensor& batch);

 private:
  std::size_t dim_;
  bool initialized_ = false;
};

// y = x W for a row vector x; W is stored directly.
class PointwiseLinear final : public FlowLayer {
 public:
  explicit PointwiseLinear(std::size_t dim);
  PointwiseLinear(std::size_t dim, Tensor weight);

  // QR of a Gaussian matrix with the determinant sign fixed to +1.
  static PointwiseLinear RandomRotation(std::size_t dim, Rng& rng);

  LayerKind kind() const override { return LayerKind::kPointwiseLinear; }
  std::size_t dim() const override { return dim_; }
  std::unique_ptr<FlowLayer> clone() const override {
    return std::make_unique<PointwiseLinear>(*this);
  }

  LayerResult forward(const Tensor& input, const Tensor* context) const override;
  LayerResult inverse(const Tensor& output, const Tensor* context) const override;
  LayerGradients backward(const Tensor& input, const Tensor* context, const Tensor& grad_output,
                          std::span<const double> grad_logdet,
                          std::span<Tensor> grads) const override;

  Tensor& weight() { return params_[0].value; }
  const Tensor& weight() const { return params_[0].value; }

 private:
  std::size_t dim_;
};

// Elementwise logistic sigmoid; used as the output stage of flows over (0,1)^D.
class Sigmoid final : public FlowLayer {
 public:
  explicit Sigmoid(std::size_t dim) : dim_(dim) {}

  LayerKind kind() const override { return LayerKind::kSigmoid; }
  std::size_t dim() const override { return dim_; }
  std::unique_ptr<FlowLayer> clone() const override { return std::make_unique<Sigmoid>(*this); }

  LayerResult forward(const Tensor& input, const Tensor* context) const override;
  LayerResult inverse(const Tensor& output, const Tensor* context) const override;
  LayerGradients backward(const Tensor& input, const Tensor* context, const Tensor& grad_output,
                          std::span<const double> grad_logdet,
                          std::span<Tensor> grads) const override;

 private:
  std::size_t dim_;
};

// Fixed coordinate permutation: output[i] = input[perm[i]].
class TupleFlip final : public FlowLayer {
 public:
  explicit TupleFlip(std::vector<std::size_t> perm);
  // Moves the transformed part in front of the pass-through part.
  static TupleFlip FromMask(const SplitMask& mask);

  LayerKind kind() const override { return LayerKind::kTupleFlip; }
  std::size_t dim() const override { return perm_.size(); }
  std::unique_ptr<FlowLayer> clone() const override { return std::make_unique<TupleFlip>(*this); }

  LayerResult forward(const Tensor& input, const Tensor* context) const override;
  LayerResult inverse(const Tensor& output, const Tensor* context) const override;
  LayerGradients backward(const Tensor& input, const Tensor* context, const Tensor& grad_output,
                          std::span<const double> grad_logdet,
                          std::span<Tensor> grads) const override;

  const std::vector<std::size_t>& permutation() const { return perm_; }

 private:
  std::vector<std::size_t> perm_;
  std::vector<std::size_t> inverse_perm_;
};

// Shared hyperparameters for layers driven by a coupling net.
struct CouplingOptions {
  std::size_t hidden_units = 50;
  std::size_t hidden_layers = 2;
  std::size_t context_dim = 0;
  // Log-scales pass through kScaleBound * tanh(raw / kScaleBound).
  bool clamp_scale = true;
};

inline constexpr double kScaleBound = 5.0;

// y1 = x1, y2 = mu(x1) + exp(s(x1)) * x2. The net emits [mu | raw s].
class AffineCoupling final : public FlowLayer {
 public:
  AffineCoupling(SplitMask mask, const CouplingOptions& options);

  LayerKind kind() const override { return LayerKind::kAffineCoupling; }
  std::size_t dim() const override { return mask_.dim(); }
  std::size_t context_dim() const override { return options_.context_dim; }
  std::unique_ptr<FlowLayer> clone() const override {
    return std::make_unique<AffineCoupling>(*this);
  }

  LayerResult forward(const Tensor& input, const Tensor* context) const override;
  LayerResult inverse(const Tensor& output, const Tensor* context) const override;
  LayerGradients backward(const Tensor& input, const Tensor* context, const Tensor& grad_output,
                          std::span<const double> grad_logdet,
                          std::span<Tensor> grads) const override;

  const SplitMask& mask() const { return mask_; }
  const CouplingOptions& options() const { return options_; }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  std::vector<Param>& params() override { return net_.params(); }
  const std::vector<Param>& params() const override { return net_.params(); }

 private:
  SplitMask mask_;
  CouplingOptions options_;
  Mlp net_;
};

struct MixLogisticParams {
  std::vector<double> logits;  // K, softmax-normalized into mixture weights
  std::vector<double> means;
  std::vector<double> log_scales;
  double log_scale = 0.0;  // a, applied after the inverse sigmoid
  double shift = 0.0;      // b
};

inline constexpr double kMixClampLow = 0.05;
inline constexpr double kMixClampWidth = 0.9;

// Σ_i π_i σ((x - µ_i) exp(-s_i)) with π = softmax(logits).
double mix_log_cdf(double x, std::span<const double> weights, std::span<const double> means,
                   std::span<const double> log_scales);

struct MixTransformResult {
  double value;
  double logdet;
  double inverse_sigmoid_log_derivative;  // log d/dt σ⁻¹(t) at the clamped t
};

// σ⁻¹(0.05 + 0.9 MixLogCDF(x)) exp(a) + b for a single coordinate.
MixTransformResult mix_logistic_transform(double x, const MixLogisticParams& params);
// Bisection inverse of mix_logistic_transform. Throws InversionError when y
// is outside the image or the search fails to converge.
double mix_logistic_inverse(double y, const MixLogisticParams& params);

// Coupling layer whose transformed half goes through mix_logistic_transform.
// Per transformed coordinate the net emits 3K + 2 values laid out as
// [logits(K) | means(K) | log_scales(K) | a | b].
class MixLogisticCoupling final : public FlowLayer {
 public:
  MixLogisticCoupling(SplitMask mask, std::size_t components, const CouplingOptions& options);

  LayerKind kind() const override { return LayerKind::kMixLogisticCoupling; }
  std::size_t dim() const override { return mask_.dim(); }
  std::size_t context_dim() const override { return options_.context_dim; }
  std::unique_ptr<FlowLayer> clone() const override {
    return std::make_unique<MixLogisticCoupling>(*this);
  }

  LayerResult forward(const Tensor& input, const Tensor* context) const override;
  LayerResult inverse(const Tensor& output, const Tensor* context) const override;
  LayerGradients backward(const Tensor& input, const Tensor* context, const Tensor& grad_output,
                          std::span<const double> grad_logdet,
                          std::span<Tensor> grads) const override;

  std::size_t components() const { return components_; }
  const SplitMask& mask() const { return mask_; }
  Mlp& net() { return net_; }
  std::vector<Param>& params() override { return net_.params(); }
  const std::vector<Param>& params() const override { return net_.params(); }
  // Decodes one coordinate's parameters from a net output row.
  MixLogisticParams decode(std::span<const double> net_row, std::size_t coord) const;

 private:
  SplitMask mask_;
  std::size_t components_;
  CouplingOptions options_;
  Mlp net_;
};

// z = mu(c) + exp(log_sigma(c)) * eps, conditioned on a context c.
class GaussianConditional final : public FlowLayer {
 public:
  GaussianConditional(std::size_t dim, const CouplingOptions& options);

  LayerKind kind() const override { return LayerKind::kGaussianConditional; }
  std::size_t dim() const override { return dim_; }
  std::size_t context_dim() const override { return options_.context_dim; }
  std::unique_ptr<FlowLayer> clone() const override {
    return std::make_unique<GaussianConditional>(*this);
  }

  LayerResult forward(const Tensor& input, const Tensor* context) const override;
  LayerResult inverse(const Tensor& output, const Tensor* context) const override;
  LayerGradients backward(const Tensor& input, const Tensor* context, const Tensor& grad_output,
                          std::span<const double> grad_logdet,
                          std::span<Tensor> grads) const override;

  Mlp& net() { return net_; }
  std::vector<Param>& params() override { return net_.params(); }
  const std::vector<Param>& params() const override { return net_.params(); }
  // Per-row (mean, log sigma) for a context batch.
  std::pair<Tensor, Tensor> moments(const Tensor& context) const;

 private:
  std::size_t dim_;
  CouplingOptions options_;
  Mlp net_;
};

// Input [x | z] -> output [z | mu(z) + exp(s(z)) * x].
class MixAffine final : public FlowLayer {
 public:
  MixAffine(std::size_t d_x, std::size_t d_z, const CouplingOptions& options);

  LayerKind kind() const override { return LayerKind::kMixAffine; }
  std::size_t dim() const override { return d_x_ + d_z_; }
  std::unique_ptr<FlowLayer> clone() const override { return std::make_unique<MixAffine>(*this); }

  LayerResult forward(const Tensor& input, const Tensor* context) const override;
  LayerResult inverse(const Tensor& output, const Tensor* context) const override;
  LayerGradients backward(const Tensor& input, const Tensor* context, const Tensor& grad_output,
                          std::span<const double> grad_logdet,
                          std::span<Tensor> grads) const override;

  Mlp& net() { return net_; }
  std::vector<Param>& params() override { return net_.params(); }
  const std::vector<Param>& params() const override { return net_.params(); }

 private:
  std::size_t d_x_;
  std::size_t d_z_;
  CouplingOptions options_;
  Mlp net_;
};

// Applies the tanh scale clamp and its derivative.
double clamp_log_scale(double raw, bool enabled);
double clamp_log_scale_derivative(double raw, bool enabled);

}  // namespace vflow

#endif  // VFLOW_LAYERS_HPP_
