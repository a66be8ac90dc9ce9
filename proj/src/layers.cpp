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

#include "vflow/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Core>
#include <Eigen/LU>
#include <Eigen/QR>

namespace vflow {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_mat(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}
MatMap as_mat(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void require_finite(const Tensor& t, std::string_view who) {
  if (!t.all_finite()) throw NumericError(std::string(who) + " produced a non-finite value");
}

void check_grads(std::span<Tensor> grads, const std::vector<Param>& params) {
  if (grads.size() != params.size()) throw DimensionError("gradient buffer does not match params");
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kActNorm: return "ActNorm";
    case LayerKind::kAffineCoupling: return "AffineCoupling";
    case LayerKind::kMixLogisticCoupling: return "MixLogisticCoupling";
    case LayerKind::kPointwiseLinear: return "PointwiseLinear";
    case LayerKind::kSigmoid: return "Sigmoid";
    case LayerKind::kTupleFlip: return "TupleFlip";
    case LayerKind::kGaussianConditional: return "GaussianConditional";
    case LayerKind::kMixAffine: return "MixAffine";
  }
  return "?";
}

SplitMask::SplitMask(std::vector<bool> pass) : pass_(std::move(pass)) {
  for (std::size_t i = 0; i < pass_.size(); ++i) {
    (pass_[i] ? pass_index_ : transform_index_).push_back(i);
  }
  if (pass_index_.empty() || transform_index_.empty()) {
    throw DimensionError("split mask needs at least one pass-through and one transformed entry");
  }
}

SplitMask SplitMask::Checker(std::size_t d) {
  std::vector<bool> pass(d);
  for (std::size_t i = 0; i < d; ++i) pass[i] = i % 2 == 0;
  return SplitMask(std::move(pass));
}

SplitMask SplitMask::Channel(std::size_t d) {
  std::vector<bool> pass(d);
  for (std::size_t i = 0; i < d; ++i) pass[i] = i < (d + 1) / 2;
  return SplitMask(std::move(pass));
}

void FlowLayer::check_input(const Tensor& x, const Tensor* context) const {
  if (x.rank() != 2 || x.cols() != dim()) {
    throw DimensionError(std::string(to_string(kind())) + " expects input width " +
                         std::to_string(dim()) + ", got shape " + x.shape_string());
  }
  const bool wants = context_dim() > 0;
  if (wants != (context != nullptr)) {
    throw DimensionError(std::string(to_string(kind())) +
                         (wants ? " requires a context" : " takes no context"));
  }
  if (context && (context->rank() != 2 || context->cols() != context_dim() ||
                  context->rows() != x.rows())) {
    throw DimensionError(std::string(to_string(kind())) + " context has shape " +
                         context->shape_string());
  }
}

LayerResult layer_forward(const FlowLayer& layer, const Tensor& input, const Tensor* context) {
  return layer.forward(input, context);
}

LayerResult layer_inverse(const FlowLayer& layer, const Tensor& output, const Tensor* context) {
  return layer.inverse(output, context);
}

double clamp_log_scale(double raw, bool enabled) {
  return enabled ? kScaleBound * std::tanh(raw / kScaleBound) : raw;
}

double clamp_log_scale_derivative(double raw, bool enabled) {
  if (!enabled) return 1.0;
  const double t = std::tanh(raw / kScaleBound);
  return 1.0 - t * t;
}

// ---------------------------------------------------------------- ActNorm

ActNorm::ActNorm(std::size_t dim) : dim_(dim) {
  params_.push_back({"log_scale", Tensor({dim})});
  params_.push_back({"bias", Tensor({dim})});
}

LayerResult ActNorm::forward(const Tensor& input, const Tensor* context) const {
  check_input(input, context);
  const std::size_t n = input.rows();
  Tensor out = input;
  double ld = 0.0;
  for (std::size_t j = 0; j < dim_; ++j) ld += log_scale()[j];
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < dim_; ++j) {
      out(r, j) = input(r, j) * std::exp(log_scale()[j]) + bias()[j];
    }
  }
  return {std::move(out), std::vector<double>(n, ld)};
}

LayerResult ActNorm::inverse(const Tensor& output, const Tensor* context) const {
  check_input(output, context);
  const std::size_t n = output.rows();
  Tensor in = output;
  double ld = 0.0;
  for (std::size_t j = 0; j < dim_; ++j) ld -= log_scale()[j];
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < dim_; ++j) {
      in(r, j) = (output(r, j) - bias()[j]) * std::exp(-log_scale()[j]);
    }
  }
  return {std::move(in), std::vector<double>(n, ld)};
}

LayerGradients ActNorm::backward(const Tensor& input, const Tensor* context,
                                 const Tensor& grad_output, std::span<const double> grad_logdet,
                                 std::span<Tensor> grads) const {
  check_input(input, context);
  check_grads(grads, params_);
  const std::size_t n = input.rows();
  Tensor gin = Tensor::Matrix(n, dim_);
  const double gl = std::accumulate(grad_logdet.begin(), grad_logdet.end(), 0.0);
  for (std::size_t j = 0; j < dim_; ++j) {
    const double scale = std::exp(log_scale()[j]);
    double gs = gl, gb = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double g = grad_output(r, j);
      gin(r, j) = g * scale;
      gs += g * input(r, j) * scale;
      gb += g;
    }
    grads[0][j] += gs;
    grads[1][j] += gb;
  }
  return {std::move(gin), Tensor()};
}

void ActNorm::initialize_from(const Tensor& batch) {
  const std::size_t n = batch.rows();
  if (n == 0 || batch.cols() != dim_) throw DimensionError("ActNorm init batch has wrong shape");
  for (std::size_t j = 0; j < dim_; ++j) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += batch(r, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (batch(r, j) - mean) * (batch(r, j) - mean);
    var /= static_cast<double>(n);
    const double ls = -std::log(std::sqrt(var) + 1e-6);
    log_scale()[j] = ls;
    bias()[j] = -mean * std::exp(ls);
  }
  initialized_ = true;
}

// -------------------------------------------------------- PointwiseLinear

PointwiseLinear::PointwiseLinear(std::size_t dim) : dim_(dim) {
  Tensor w = Tensor::Matrix(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) w(i, i) = 1.0;
  params_.push_back({"weight", std::move(w)});
}

PointwiseLinear::PointwiseLinear(std::size_t dim, Tensor weight) : dim_(dim) {
  if (weight.rank() != 2 || weight.rows() != dim || weight.cols() != dim) {
    throw DimensionError("PointwiseLinear weight must be D x D");
  }
  params_.push_back({"weight", std::move(weight)});
}

PointwiseLinear PointwiseLinear::RandomRotation(std::size_t dim, Rng& rng) {
  Tensor g = sample_standard_normal(rng, {dim, dim});
  Eigen::HouseholderQR<RowMat> qr(as_mat(g));
  RowMat q = qr.householderQ();
  if (q.determinant() < 0) q.col(0) *= -1.0;
  Tensor w = Tensor::Matrix(dim, dim);
  as_mat(w) = q;
  return PointwiseLinear(dim, std::move(w));
}

LayerResult PointwiseLinear::forward(const Tensor& input, const Tensor* context) const {
  check_input(input, context);
  const double ld = log_abs_det(weight().values(), dim_);
  Tensor out = Tensor::Matrix(input.rows(), dim_);
  as_mat(out).noalias() = as_mat(input) * as_mat(weight());
  return {std::move(out), std::vector<double>(input.rows(), ld)};
}

LayerResult PointwiseLinear::inverse(const Tensor& output, const Tensor* context) const {
  check_input(output, context);
  const double ld = log_abs_det(weight().values(), dim_);
  Eigen::PartialPivLU<RowMat> lu(as_mat(weight()));
  Tensor in = Tensor::Matrix(output.rows(), dim_);
  as_mat(in).noalias() = as_mat(output) * lu.inverse();
  return {std::move(in), std::vector<double>(output.rows(), -ld)};
}

LayerGradients PointwiseLinear::backward(const Tensor& input, const Tensor* context,
                                         const Tensor& grad_output,
                                         std::span<const double> grad_logdet,
                                         std::span<Tensor> grads) const {
  check_input(input, context);
  check_grads(grads, params_);
  const double gl = std::accumulate(grad_logdet.begin(), grad_logdet.end(), 0.0);
  Tensor gin = Tensor::Matrix(input.rows(), dim_);
  as_mat(gin).noalias() = as_mat(grad_output) * as_mat(weight()).transpose();
  auto gw = as_mat(grads[0]);
  gw.noalias() += as_mat(input).transpose() * as_mat(grad_output);
  if (gl != 0.0) {
    RowMat inv_t = as_mat(weight()).inverse().transpose();
    gw += gl * inv_t;
  }
  return {std::move(gin), Tensor()};
}

// ---------------------------------------------------------------- Sigmoid

LayerResult Sigmoid::forward(const Tensor& input, const Tensor* context) const {
  check_input(input, context);
  const std::size_t n = input.rows();
  Tensor out = input;
  std::vector<double> ld(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < dim_; ++j) {
      const double x = input(r, j);
      out(r, j) = sigmoid(x);
      ld[r] += log_sigmoid(x) + log_sigmoid(-x);
    }
  }
  return {std::move(out), std::move(ld)};
}

LayerResult Sigmoid::inverse(const Tensor& output, const Tensor* context) const {
  check_input(output, context);
  const std::size_t n = output.rows();
  Tensor in = output;
  std::vector<double> ld(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < dim_; ++j) {
      const double y = output(r, j);
      if (!(y > 0.0 && y < 1.0)) {
        throw InversionError("Sigmoid inverse needs values strictly inside (0, 1)");
      }
      const double x = logit(y);
      in(r, j) = x;
      ld[r] -= log_sigmoid(x) + log_sigmoid(-x);
    }
  }
  return {std::move(in), std::move(ld)};
}

LayerGradients Sigmoid::backward(const Tensor& input, const Tensor* context,
                                 const Tensor& grad_output, std::span<const double> grad_logdet,
                                 std::span<Tensor> grads) const {
  check_input(input, context);
  check_grads(grads, params_);
  const std::size_t n = input.rows();
  Tensor gin = Tensor::Matrix(n, dim_);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < dim_; ++j) {
      const double s = sigmoid(input(r, j));
      gin(r, j) = grad_output(r, j) * s * (1.0 - s) + grad_logdet[r] * (1.0 - 2.0 * s);
    }
  }
  return {std::move(gin), Tensor()};
}

// -------------------------------------------------------------- TupleFlip

TupleFlip::TupleFlip(std::vector<std::size_t> perm) : perm_(std::move(perm)) {
  inverse_perm_.assign(perm_.size(), perm_.size());
  for (std::size_t i = 0; i < perm_.size(); ++i) {
    if (perm_[i] >= perm_.size() || inverse_perm_[perm_[i]] != perm_.size()) {
      throw DimensionError("TupleFlip needs a permutation");
    }
    inverse_perm_[perm_[i]] = i;
  }
}

TupleFlip TupleFlip::FromMask(const SplitMask& mask) {
  // Pass-through slots receive the transformed coordinates and vice versa.
  std::vector<std::size_t> src = mask.transform_index();
  src.insert(src.end(), mask.pass_index().begin(), mask.pass_index().end());
  std::vector<std::size_t> dst = mask.pass_index();
  dst.insert(dst.end(), mask.transform_index().begin(), mask.transform_index().end());
  std::vector<std::size_t> perm(mask.dim());
  for (std::size_t k = 0; k < perm.size(); ++k) perm[dst[k]] = src[k];
  return TupleFlip(std::move(perm));
}

LayerResult TupleFlip::forward(const Tensor& input, const Tensor* context) const {
  check_input(input, context);
  return {gather_cols(input, perm_), std::vector<double>(input.rows(), 0.0)};
}

LayerResult TupleFlip::inverse(const Tensor& output, const Tensor* context) const {
  check_input(output, context);
  return {gather_cols(output, inverse_perm_), std::vector<double>(output.rows(), 0.0)};
}

LayerGradients TupleFlip::backward(const Tensor& input, const Tensor* context,
                                   const Tensor& grad_output, std::span<const double>,
                                   std::span<Tensor> grads) const {
  check_input(input, context);
  check_grads(grads, params_);
  return {gather_cols(grad_output, inverse_perm_), Tensor()};
}

// --------------------------------------------------------- AffineCoupling

AffineCoupling::AffineCoupling(SplitMask mask, const CouplingOptions& options)
    : mask_(std::move(mask)),
      options_(options),
      net_(CouplingNetSpec{mask_.pass_index().size(), options.hidden_units, options.hidden_layers,
                           2 * mask_.transform_index().size(), options.context_dim}) {}

LayerResult AffineCoupling::forward(const Tensor& input, const Tensor* context) const {
  check_input(input, context);
  const std::size_t n = input.rows();
  const auto& ti = mask_.transform_index();
  const std::size_t m = ti.size();
  const Tensor o = net_.forward(gather_cols(input, mask_.pass_index()), context);
  Tensor out = input;
  std::vector<double> ld(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < m; ++j) {
      const double s = clamp_log_scale(o(r, m + j), options_.clamp_scale);
      out(r, ti[j]) = o(r, j) + std::exp(s) * input(r, ti[j]);
      ld[r] += s;
    }
  }
  require_finite(out, "AffineCoupling");
  return {std::move(out), std::move(ld)};
}

LayerResult AffineCoupling::inverse(const Tensor& output, const Tensor* context) const {
  check_input(output, context);
  const std::size_t n = output.rows();
  const auto& ti = mask_.transform_index();
  const std::size_t m = ti.size();
  const Tensor o = net_.forward(gather_cols(output, mask_.pass_index()), context);
  Tensor in = output;
  std::vector<double> ld(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < m; ++j) {
      const double s = clamp_log_scale(o(r, m + j), options_.clamp_scale);
      in(r, ti[j]) = (output(r, ti[j]) - o(r, j)) * std::exp(-s);
      ld[r] -= s;
    }
  }
  require_finite(in, "AffineCoupling inverse");
  return {std::move(in), std::move(ld)};
}

LayerGradients AffineCoupling::backward(const Tensor& input, const Tensor* context,
                                        const Tensor& grad_output,
                                        std::span<const double> grad_logdet,
                                        std::span<Tensor> grads) const {
  check_input(input, context);
  check_grads(grads, net_.params());
  const std::size_t n = input.rows();
  const auto& pi = mask_.pass_index();
  const auto& ti = mask_.transform_index();
  const std::size_t m = ti.size();
  Mlp::Cache cache;
  const Tensor o = net_.forward(gather_cols(input, pi), context, &cache);

  Tensor gin = Tensor::Matrix(n, dim());
  Tensor gnet = Tensor::Matrix(n, 2 * m);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < m; ++j) {
      const double raw = o(r, m + j);
      const double es = std::exp(clamp_log_scale(raw, options_.clamp_scale));
      const double gy = grad_output(r, ti[j]);
      gnet(r, j) = gy;
      gnet(r, m + j) = (gy * es * input(r, ti[j]) + grad_logdet[r]) *
                       clamp_log_scale_derivative(raw, options_.clamp_scale);
      gin(r, ti[j]) = gy * es;
    }
  }
  Tensor gx1, gctx;
  net_.backward(cache, gnet, &gx1, context ? &gctx : nullptr, grads);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < pi.size(); ++k) gin(r, pi[k]) = grad_output(r, pi[k]) + gx1(r, k);
  }
  return {std::move(gin), std::move(gctx)};
}

// ----------------------------------------------------------- MixLogistic

namespace {

// Everything about one coordinate of the mixture transform that the
// forward, backward and inverse passes need.
struct MixEval {
  double y = 0, logdet = 0, isig_logderiv = 0;
  double w = 0, t = 0, c = 0, log_pdf = 0;
};

double mix_cdf(double x, std::span<const double> pi, std::span<const double> mu,
               std::span<const double> ls) {
  double c = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) c += pi[i] * sigmoid((x - mu[i]) * std::exp(-ls[i]));
  return c;
}

void softmax(std::span<const double> logits, std::span<double> out) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (out[i] = std::exp(logits[i] - m));
  for (double& v : out) v /= z;
}

// `r` receives the posterior responsibilities of the pdf terms.
MixEval mix_eval(double x, std::span<const double> pi, std::span<const double> mu,
                 std::span<const double> ls, double a, double b, std::span<double> r) {
  const std::size_t k = pi.size();
  MixEval e;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    const double v = (x - mu[i]) * std::exp(-ls[i]);
    e.c += pi[i] * sigmoid(v);
    r[i] = std::log(pi[i]) + log_sigmoid(v) + log_sigmoid(-v) - ls[i];
    mx = std::max(mx, r[i]);
  }
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) z += (r[i] = std::exp(r[i] - mx));
  for (std::size_t i = 0; i < k; ++i) r[i] /= z;
  e.log_pdf = mx + std::log(z);
  e.t = kMixClampLow + kMixClampWidth * e.c;
  e.w = std::log(e.t) - std::log1p(-e.t);
  e.y = e.w * std::exp(a) + b;
  e.isig_logderiv = -std::log(e.t) - std::log1p(-e.t);
  e.logdet = a + e.isig_logderiv + std::log(kMixClampWidth) + e.log_pdf;
  return e;
}

}  // namespace

double mix_log_cdf(double x, std::span<const double> weights, std::span<const double> means,
                   std::span<const double> log_scales) {
  return mix_cdf(x, weights, means, log_scales);
}

MixTransformResult mix_logistic_transform(double x, const MixLogisticParams& params) {
  const std::size_t k = params.logits.size();
  if (k == 0 || params.means.size() != k || params.log_scales.size() != k) {
    throw DimensionError("mixture parameters need K >= 1 matching entries");
  }
  std::vector<double> pi(k), r(k);
  softmax(params.logits, pi);
  const MixEval e =
      mix_eval(x, pi, params.means, params.log_scales, params.log_scale, params.shift, r);
  return {e.y, e.logdet, e.isig_logderiv};
}

double mix_logistic_inverse(double y, const MixLogisticParams& params) {
  const std::size_t k = params.logits.size();
  std::vector<double> pi(k);
  softmax(params.logits, pi);
  const double w = (y - params.shift) * std::exp(-params.log_scale);
  const double t = sigmoid(w);
  const double c = (t - kMixClampLow) / kMixClampWidth;
  if (!(c > 0.0 && c < 1.0) || !std::isfinite(w)) {
    throw InversionError("value outside the image of the mixture-of-logistics transform");
  }
  const auto [mu_lo, mu_hi] = std::minmax_element(params.means.begin(), params.means.end());
  double max_scale = 0.0;
  for (double s : params.log_scales) max_scale = std::max(max_scale, std::exp(s));
  double lo = *mu_lo - 20.0 * max_scale;
  double hi = *mu_hi + 20.0 * max_scale;
  double width = hi - lo;
  for (int i = 0; mix_cdf(lo, pi, params.means, params.log_scales) > c; ++i) {
    if (i == 200) throw InversionError("mixture inverse: could not bracket the root");
    lo -= width;
    width *= 2.0;
  }
  width = hi - lo;
  for (int i = 0; mix_cdf(hi, pi, params.means, params.log_scales) < c; ++i) {
    if (i == 200) throw InversionError("mixture inverse: could not bracket the root");
    hi += width;
    width *= 2.0;
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mix_cdf(mid, pi, params.means, params.log_scales) < c) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 1e-12 * std::max(1.0, std::abs(mid))) return 0.5 * (lo + hi);
  }
  throw InversionError("mixture inverse: bisection did not converge in 200 iterations");
}

MixLogisticCoupling::MixLogisticCoupling(SplitMask mask, std::size_t components,
                                         const CouplingOptions& options)
    : mask_(std::move(mask)),
      components_(components),
      options_(options),
      net_(CouplingNetSpec{mask_.pass_index().size(), options.hidden_units, options.hidden_layers,
                           mask_.transform_index().size() * (3 * components + 2),
                           options.context_dim}) {
  if (components == 0) throw DimensionError("mixture needs K >= 1");
}

MixLogisticParams MixLogisticCoupling::decode(std::span<const double> net_row,
                                              std::size_t coord) const {
  const std::size_t k = components_;
  const std::size_t base = coord * (3 * k + 2);
  MixLogisticParams p;
  p.logits.assign(net_row.begin() + base, net_row.begin() + base + k);
  p.means.assign(net_row.begin() + base + k, net_row.begin() + base + 2 * k);
  p.log_scales.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    p.log_scales[i] = clamp_log_scale(net_row[base + 2 * k + i], options_.clamp_scale);
  }
  p.log_scale = clamp_log_scale(net_row[base + 3 * k], options_.clamp_scale);
  p.shift = net_row[base + 3 * k + 1];
  return p;
}

LayerResult MixLogisticCoupling::forward(const Tensor& input, const Tensor* context) const {
  check_input(input, context);
  const std::size_t n = input.rows();
  const auto& ti = mask_.transform_index();
  const Tensor o = net_.forward(gather_cols(input, mask_.pass_index()), context);
  Tensor out = input;
  std::vector<double> ld(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < ti.size(); ++j) {
      const MixTransformResult res = mix_logistic_transform(input(r, ti[j]), decode(o.row(r), j));
      out(r, ti[j]) = res.value;
      ld[r] += res.logdet;
    }
  }
  require_finite(out, "MixLogisticCoupling");
  return {std::move(out), std::move(ld)};
}

LayerResult MixLogisticCoupling::inverse(const Tensor& output, const Tensor* context) const {
  check_input(output, context);
  const std::size_t n = output.rows();
  const auto& ti = mask_.transform_index();
  const Tensor o = net_.forward(gather_cols(output, mask_.pass_index()), context);
  Tensor in = output;
  std::vector<double> ld(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < ti.size(); ++j) {
      const MixLogisticParams p = decode(o.row(r), j);
      const double x = mix_logistic_inverse(output(r, ti[j]), p);
      in(r, ti[j]) = x;
      ld[r] -= mix_logistic_transform(x, p).logdet;
    }
  }
  return {std::move(in), std::move(ld)};
}

LayerGradients MixLogisticCoupling::backward(const Tensor& input, const Tensor* context,
                                             const Tensor& grad_output,
                                             std::span<const double> grad_logdet,
                                             std::span<Tensor> grads) const {
  check_input(input, context);
  check_grads(grads, net_.params());
  const std::size_t n = input.rows();
  const std::size_t k = components_;
  const std::size_t stride = 3 * k + 2;
  const bool clamp = options_.clamp_scale;
  const auto& pidx = mask_.pass_index();
  const auto& ti = mask_.transform_index();
  Mlp::Cache cache;
  const Tensor o = net_.forward(gather_cols(input, pidx), context, &cache);

  Tensor gin = Tensor::Matrix(n, dim());
  Tensor gnet = Tensor::Matrix(n, o.cols());
  std::vector<double> pi(k), mu(k), ls(k), resp(k), sig(k);
  for (std::size_t r = 0; r < n; ++r) {
    const double gl = grad_logdet[r];
    for (std::size_t j = 0; j < ti.size(); ++j) {
      const double* raw = o.row(r).data() + j * stride;
      softmax(std::span<const double>(raw, k), pi);
      for (std::size_t i = 0; i < k; ++i) {
        mu[i] = raw[k + i];
        ls[i] = clamp_log_scale(raw[2 * k + i], clamp);
      }
      const double a = clamp_log_scale(raw[3 * k], clamp);
      const double x = input(r, ti[j]);
      const MixEval e = mix_eval(x, pi, mu, ls, a, raw[3 * k + 1], resp);

      const double gy = grad_output(r, ti[j]);
      const double ea = std::exp(a);
      const double gw = gy * ea;
      const double ga = gy * e.w * ea + gl;
      const double gt = gw * (1.0 / e.t + 1.0 / (1.0 - e.t)) + gl * (-1.0 / e.t + 1.0 / (1.0 - e.t));
      const double gc = kMixClampWidth * gt;
      const double pdf = std::exp(e.log_pdf);

      double gx = gc * pdf;
      double* g = gnet.row(r).data() + j * stride;
      for (std::size_t i = 0; i < k; ++i) {
        const double inv_scale = std::exp(-ls[i]);
        const double v = (x - mu[i]) * inv_scale;
        const double s = sigmoid(v);
        const double ds = s * (1.0 - s);
        const double curv = 1.0 - 2.0 * s;
        gx += gl * resp[i] * curv * inv_scale;
        g[i] = gc * pi[i] * (s - e.c) + gl * (resp[i] - pi[i]);
        g[k + i] = -gc * pi[i] * ds * inv_scale - gl * resp[i] * curv * inv_scale;
        g[2 * k + i] = (-gc * pi[i] * ds * v - gl * resp[i] * (curv * v + 1.0)) *
                       clamp_log_scale_derivative(raw[2 * k + i], clamp);
      }
      g[3 * k] = ga * clamp_log_scale_derivative(raw[3 * k], clamp);
      g[3 * k + 1] = gy;
      gin(r, ti[j]) = gx;
    }
  }
  Tensor gx1, gctx;
  net_.backward(cache, gnet, &gx1, context ? &gctx : nullptr, grads);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t q = 0; q < pidx.size(); ++q) {
      gin(r, pidx[q]) = grad_output(r, pidx[q]) + gx1(r, q);
    }
  }
  return {std::move(gin), std::move(gctx)};
}

// ---------------------------------------------------- GaussianConditional

GaussianConditional::GaussianConditional(std::size_t dim, const CouplingOptions& options)
    : dim_(dim),
      options_(options),
      net_(CouplingNetSpec{options.context_dim, options.hidden_units, options.hidden_layers,
                           2 * dim, 0}) {
  if (options.context_dim == 0) throw DimensionError("GaussianConditional needs a context");
}

std::pair<Tensor, Tensor> GaussianConditional::moments(const Tensor& context) const {
  const Tensor o = net_.forward(context, nullptr);
  const std::size_t n = context.rows();
  Tensor mean = Tensor::Matrix(n, dim_), log_sigma = Tensor::Matrix(n, dim_);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < dim_; ++j) {
      mean(r, j) = o(r, j);
      log_sigma(r, j) = clamp_log_scale(o(r, dim_ + j), options_.clamp_scale);
    }
  }
  return {std::move(mean), std::move(log_sigma)};
}

LayerResult GaussianConditional::forward(const Tensor& input, const Tensor* context) const {
  check_input(input, context);
  const auto [mean, log_sigma] = moments(*context);
  const std::size_t n = input.rows();
  Tensor out = Tensor::Matrix(n, dim_);
  std::vector<double> ld(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < dim_; ++j) {
      out(r, j) = mean(r, j) + std::exp(log_sigma(r, j)) * input(r, j);
      ld[r] += log_sigma(r, j);
    }
  }
  require_finite(out, "GaussianConditional");
  return {std::move(out), std::move(ld)};
}

LayerResult GaussianConditional::inverse(const Tensor& output, const Tensor* context) const {
  check_input(output, context);
  const auto [mean, log_sigma] = moments(*context);
  const std::size_t n = output.rows();
  Tensor in = Tensor::Matrix(n, dim_);
  std::vector<double> ld(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < dim_; ++j) {
      in(r, j) = (output(r, j) - mean(r, j)) * std::exp(-log_sigma(r, j));
      ld[r] -= log_sigma(r, j);
    }
  }
  return {std::move(in), std::move(ld)};
}

LayerGradients GaussianConditional::backward(const Tensor& input, const Tensor* context,
                                             const Tensor& grad_output,
                                             std::span<const double> grad_logdet,
                                             std::span<Tensor> grads) const {
  check_input(input, context);
  check_grads(grads, net_.params());
  const std::size_t n = input.rows();
  Mlp::Cache cache;
  const Tensor o = net_.forward(*context, nullptr, &cache);
  Tensor gin = Tensor::Matrix(n, dim_);
  Tensor gnet = Tensor::Matrix(n, 2 * dim_);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < dim_; ++j) {
      const double raw = o(r, dim_ + j);
      const double sigma = std::exp(clamp_log_scale(raw, options_.clamp_scale));
      const double gy = grad_output(r, j);
      gin(r, j) = gy * sigma;
      gnet(r, j) = gy;
      gnet(r, dim_ + j) = (gy * sigma * input(r, j) + grad_logdet[r]) *
                          clamp_log_scale_derivative(raw, options_.clamp_scale);
    }
  }
  Tensor gctx;
  net_.backward(cache, gnet, &gctx, nullptr, grads);
  return {std::move(gin), std::move(gctx)};
}

// -------------------------------------------------------------- MixAffine

MixAffine::MixAffine(std::size_t d_x, std::size_t d_z, const CouplingOptions& options)
    : d_x_(d_x),
      d_z_(d_z),
      options_(options),
      net_(CouplingNetSpec{d_z, options.hidden_units, options.hidden_layers, 2 * d_x, 0}) {
  if (d_x == 0 || d_z == 0) throw DimensionError("MixAffine needs D_X >= 1 and D_Z >= 1");
}

LayerResult MixAffine::forward(const Tensor& input, const Tensor* context) const {
  check_input(input, context);
  const std::size_t n = input.rows();
  const Tensor z = take_cols(input, d_x_, d_z_);
  const Tensor o = net_.forward(z, nullptr);
  Tensor out = Tensor::Matrix(n, dim());
  std::vector<double> ld(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d_z_; ++j) out(r, j) = z(r, j);
    for (std::size_t j = 0; j < d_x_; ++j) {
      const double s = clamp_log_scale(o(r, d_x_ + j), options_.clamp_scale);
      out(r, d_z_ + j) = o(r, j) + std::exp(s) * input(r, j);
      ld[r] += s;
    }
  }
  require_finite(out, "MixAffine");
  return {std::move(out), std::move(ld)};
}

LayerResult MixAffine::inverse(const Tensor& output, const Tensor* context) const {
  check_input(output, context);
  const std::size_t n = output.rows();
  const Tensor z = take_cols(output, 0, d_z_);
  const Tensor o = net_.forward(z, nullptr);
  Tensor in = Tensor::Matrix(n, dim());
  std::vector<double> ld(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d_x_; ++j) {
      const double s = clamp_log_scale(o(r, d_x_ + j), options_.clamp_scale);
      in(r, j) = (output(r, d_z_ + j) - o(r, j)) * std::exp(-s);
      ld[r] -= s;
    }
    for (std::size_t j = 0; j < d_z_; ++j) in(r, d_x_ + j) = z(r, j);
  }
  return {std::move(in), std::move(ld)};
}

LayerGradients MixAffine::backward(const Tensor& input, const Tensor* context,
                                   const Tensor& grad_output, std::span<const double> grad_logdet,
                                   std::span<Tensor> grads) const {
  check_input(input, context);
  check_grads(grads, net_.params());
  const std::size_t n = input.rows();
  Mlp::Cache cache;
  const Tensor o = net_.forward(take_cols(input, d_x_, d_z_), nullptr, &cache);
  Tensor gin = Tensor::Matrix(n, dim());
  Tensor gnet = Tensor::Matrix(n, 2 * d_x_);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d_x_; ++j) {
      const double raw = o(r, d_x_ + j);
      const double es = std::exp(clamp_log_scale(raw, options_.clamp_scale));
      const double gy = grad_output(r, d_z_ + j);
      gin(r, j) = gy * es;
      gnet(r, j) = gy;
      gnet(r, d_x_ + j) = (gy * es * input(r, j) + grad_logdet[r]) *
                          clamp_log_scale_derivative(raw, options_.clamp_scale);
    }
  }
  Tensor gz;
  net_.backward(cache, gnet, &gz, nullptr, grads);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < d_z_; ++j) gin(r, d_x_ + j) = grad_output(r, j) + gz(r, j);
  }
  return {std::move(gin), Tensor()};
}

}  // namespace vflow
