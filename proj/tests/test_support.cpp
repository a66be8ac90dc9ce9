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

#include "test_support.hpp"

#include <algorithm>
#include <cmath>

#include "vflow/architecture.hpp"

namespace vflow::testing {

void randomize(FlowLayer& layer, Rng& rng, double scale) {
  if (auto* pl = dynamic_cast<PointwiseLinear*>(&layer)) {
    Tensor& w = pl->weight();
    for (std::size_t i = 0; i < w.rows(); ++i) {
      for (std::size_t j = 0; j < w.cols(); ++j) w(i, j) = (i == j ? 1.0 : 0.0) + scale * rng.normal();
    }
    return;
  }
  for (auto& p : layer.params()) {
    for (double& v : p.value.values()) v = scale * rng.normal();
  }
}

std::unique_ptr<FlowLayer> random_layer(LayerKind kind, std::size_t dim, std::size_t context_dim,
                                        Rng& rng) {
  CouplingOptions opts;
  opts.hidden_units = 6;
  opts.hidden_layers = 2;
  opts.context_dim = context_dim;
  std::unique_ptr<FlowLayer> layer;
  switch (kind) {
    case LayerKind::kActNorm: layer = std::make_unique<ActNorm>(dim); break;
    case LayerKind::kPointwiseLinear: layer = std::make_unique<PointwiseLinear>(dim); break;
    case LayerKind::kSigmoid: layer = std::make_unique<Sigmoid>(dim); break;
    case LayerKind::kTupleFlip:
      layer = std::make_unique<TupleFlip>(TupleFlip::FromMask(SplitMask::Checker(dim)));
      break;
    case LayerKind::kAffineCoupling:
      layer = std::make_unique<AffineCoupling>(SplitMask::Checker(dim), opts);
      break;
    case LayerKind::kMixLogisticCoupling:
      layer = std::make_unique<MixLogisticCoupling>(SplitMask::Channel(dim), 3, opts);
      break;
    case LayerKind::kGaussianConditional:
      opts.context_dim = std::max<std::size_t>(context_dim, 1);
      layer = std::make_unique<GaussianConditional>(dim, opts);
      break;
    case LayerKind::kMixAffine: {
      const std::size_t dx = std::max<std::size_t>(dim / 2, 1);
      layer = std::make_unique<MixAffine>(dx, dim - dx, opts);
      break;
    }
  }
  randomize(*layer, rng);
  return layer;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

namespace {

// Ridders' method: central differences at a geometric sequence of steps,
// extrapolated to h -> 0 with the estimate whose error bound is smallest.
// A fixed step cannot serve every layer: ~1e-11 of rounding swamps gradient
// entries of order 1e-7, while large steps are biased near singular weights.
// Returns {estimate, error bound}.
std::pair<double, double> ridders_derivative(const ScalarFn& f, Tensor& x, std::size_t i, double h) {
  constexpr int kTable = 10;
  constexpr double kShrink = 1.4, kShrink2 = kShrink * kShrink, kSafe = 2.0;
  const double saved = x[i];
  const auto central = [&](double step) {
    x[i] = saved + step;
    const double up = f(x);
    x[i] = saved - step;
    const double down = f(x);
    x[i] = saved;
    return (up - down) / (2.0 * step);
  };
  double a[kTable][kTable];
  double best = 0.0, err = std::numeric_limits<double>::infinity();
  a[0][0] = central(h);
  best = a[0][0];
  for (int col = 1; col < kTable; ++col) {
    h /= kShrink;
    a[0][col] = central(h);
    double fac = kShrink2;
    for (int row = 1; row <= col; ++row) {
      a[row][col] = (a[row - 1][col] * fac - a[row - 1][col - 1]) / (fac - 1.0);
      fac *= kShrink2;
      const double e = std::max(std::abs(a[row][col] - a[row - 1][col]),
                                std::abs(a[row][col] - a[row - 1][col - 1]));
      if (e <= err) {
        err = e;
        best = a[row][col];
      }
    }
    if (std::abs(a[col][col] - a[col - 1][col - 1]) >= kSafe * err) break;
  }
  return {best, err};
}

Tensor ridders_gradient(const ScalarFn& f, const Tensor& x, double h) {
  Tensor work = x;
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    // Restart from smaller steps when the error bound stays large, which
    // happens within ~h of a singularity (e.g. a nearly singular weight).
    double err = std::numeric_limits<double>::infinity();
    for (double step = h; step >= h * 1e-2; step *= 0.1) {
      const auto [est, e] = ridders_derivative(f, work, i, step);
      if (e < err) {
        err = e;
        g[i] = est;
      }
      if (err <= 1e-9 * std::max(1.0, std::abs(g[i]))) break;
    }
  }
  return g;
}

}  // namespace

GradCheck check_layer_gradients(FlowLayer& layer, const Tensor& input, const Tensor* context,
                                Rng& rng, double h) {
  const std::size_t n = input.rows();
  const Tensor g_out = sample_standard_normal(rng, {n, layer.dim()});
  std::vector<double> g_ld(n);
  for (double& v : g_ld) v = rng.normal();

  const auto loss = [&](const Tensor& x, const Tensor* ctx) {
    const LayerResult res = layer.forward(x, ctx);
    double l = 0.0;
    for (std::size_t i = 0; i < res.output.size(); ++i) l += g_out[i] * res.output[i];
    for (std::size_t r = 0; r < n; ++r) l += g_ld[r] * res.logdet[r];
    return l;
  };

  std::vector<Tensor> grads;
  for (const auto& p : layer.params()) grads.emplace_back(p.value.shape());
  const LayerGradients analytic = layer.backward(input, context, g_out, g_ld, grads);

  GradCheck out;
  const auto record = [&](const Tensor& a, const Tensor& num, const std::string& where) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double e = relative_error(a[i], num[i]);
      if (e > out.worst_relative) {
        out.worst_relative = e;
        out.worst_where = where + "[" + std::to_string(i) + "]";
      }
    }
  };

  record(analytic.input,
         ridders_gradient([&](const Tensor& x) { return loss(x, context); }, input, h), "input");
  if (context) {
    record(analytic.context,
           ridders_gradient([&](const Tensor& c) { return loss(input, &c); }, *context, h),
           "context");
  }
  for (std::size_t k = 0; k < layer.params().size(); ++k) {
    Tensor& p = layer.params()[k].value;
    const Tensor saved = p;
    const Tensor num = ridders_gradient(
        [&](const Tensor& v) {
          p = v;
          const double l = loss(input, context);
          p = saved;
          return l;
        },
        saved, h);
    record(grads[k], num, layer.params()[k].name);
  }
  return out;
}

double round_trip_error(const FlowLayer& layer, const Tensor& input, const Tensor* context) {
  const LayerResult fwd = layer.forward(input, context);
  const LayerResult inv = layer.inverse(fwd.output, context);
  double worst = 0.0;
  for (std::size_t i = 0; i < input.size(); ++i) {
    worst = std::max(worst, std::abs(inv.output[i] - input[i]));
  }
  for (std::size_t r = 0; r < fwd.logdet.size(); ++r) {
    worst = std::max(worst, std::abs(fwd.logdet[r] + inv.logdet[r]));
  }
  return worst;
}

double logdet_error(const FlowLayer& layer, const Tensor& input, const Tensor* context) {
  const std::size_t d = layer.dim();
  const std::vector<std::size_t> first{0};
  const Tensor x0 = take_rows(input, first);
  Tensor c0;
  if (context) c0 = take_rows(*context, first);
  const double analytic = layer.forward(x0, context ? &c0 : nullptr).logdet[0];
  const double numeric = numeric_jacobian_logdet(
      [&](const Tensor& v) {
        Tensor row({1, d}, v.values());
        Tensor y = layer.forward(row, context ? &c0 : nullptr).output;
        return Tensor({d}, y.values());
      },
      Tensor({d}, x0.values()));
  // The numeric Jacobian carries ~1e-11 rounding noise, so a 1e-8 floor
  // would fail volume-preserving layers whose logdet is exactly zero.
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

Flow random_flow(std::size_t dim, std::size_t steps, Rng& rng, double scale) {
  Flow flow(dim);
  CouplingOptions opts;
  opts.hidden_units = 8;
  opts.hidden_layers = 2;
  for (std::size_t s = 0; s < steps; ++s) {
    auto& an = flow.layers().emplace<ActNorm>(dim);
    randomize(an, rng, scale);
    auto& pl = flow.layers().emplace<PointwiseLinear>(PointwiseLinear::RandomRotation(dim, rng));
    (void)pl;
    auto& ac = flow.layers().emplace<AffineCoupling>(
        s % 2 == 0 ? SplitMask::Checker(dim) : SplitMask::Channel(dim), opts);
    randomize(ac, rng, scale);
  }
  return flow;
}

VFlowModel random_vflow(std::size_t d_x, std::size_t d_z, Rng& rng, double scale,
                        bool dequantize) {
  ArchitectureSpec spec;
  spec.d_x = d_x;
  spec.d_z = d_z;
  spec.p_steps = 2;
  spec.hidden_units = 8;
  spec.dequantize = dequantize;
  spec.r_steps = 1;
  VFlowModel m = build_model(spec, rng);
  const auto shake = [&](LayerStack& stack) {
    for (std::size_t i = 0; i < stack.size(); ++i) randomize(stack.layer(i), rng, scale);
    stack.mark_actnorms_initialized();
  };
  shake(m.p.layers());
  if (m.q) shake(m.q->layers());
  if (m.r) shake(m.r->layers());
  return m;
}

double discrete_log_prob_by_quadrature(const VFlowModel& model, std::span<const double> x,
                                       std::size_t u_nodes, std::size_t z_nodes) {
  if (model.d_x != 2 || model.d_z != 1 || x.size() != 2) {
    throw DimensionError("joint quadrature oracle supports D_X = 2, D_Z = 1 only");
  }
  const QuadratureSpec us{0.0, 1.0, u_nodes}, zs{-8.0, 8.0, z_nodes};
  const std::vector<double> wu = simpson_weights(us), wz = simpson_weights(zs);
  const std::size_t nu = wu.size(), nz = wz.size();
  const double hu = 1.0 / static_cast<double>(nu - 1);
  const double hz = 16.0 / static_cast<double>(nz - 1);
  std::vector<double> terms;
  terms.reserve(nu * nu * nz);
  Tensor pts = Tensor::Matrix(nu * nz, 3);
  for (std::size_t a = 0; a < nu; ++a) {
    for (std::size_t b = 0; b < nu; ++b) {
      for (std::size_t c = 0; c < nz; ++c) {
        pts(b * nz + c, 0) = x[0] + hu * static_cast<double>(a);
        pts(b * nz + c, 1) = x[1] + hu * static_cast<double>(b);
        pts(b * nz + c, 2) = -8.0 + hz * static_cast<double>(c);
      }
    }
    const std::vector<double> lp = flow_log_prob(model.p, pts).log_prob;
    for (std::size_t b = 0; b < nu; ++b) {
      for (std::size_t c = 0; c < nz; ++c) {
        terms.push_back(std::log(wu[a] * wu[b] * wz[c]) + lp[b * nz + c]);
      }
    }
  }
  return logsumexp(terms);
}

MeanSe mean_and_se(std::span<const double> v) {
  MeanSe out;
  const double n = static_cast<double>(v.size());
  for (double x : v) out.mean += x;
  out.mean /= n;
  double var = 0.0;
  for (double x : v) var += (x - out.mean) * (x - out.mean);
  var /= std::max(n - 1.0, 1.0);
  out.se = std::sqrt(var / n);
  return out;
}

}  // namespace vflow::testing
