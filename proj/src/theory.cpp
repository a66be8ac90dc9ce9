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

#include "vflow/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "vflow/architecture.hpp"

namespace vflow {

namespace {

// Copies `src` into `dst` with row i of src landing at row_map[i] and column j
// at col_map[j]; everything else in dst stays zero.
void scatter_block(const Tensor& src, Tensor& dst, const std::vector<std::size_t>& row_map,
                   const std::vector<std::size_t>& col_map) {
  for (std::size_t i = 0; i < row_map.size(); ++i) {
    for (std::size_t j = 0; j < col_map.size(); ++j) dst(row_map[i], col_map[j]) = src(i, j);
  }
}

std::vector<std::size_t> identity_map(std::size_t n) {
  std::vector<std::size_t> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = i;
  return m;
}

std::unique_ptr<FlowLayer> embed_coupling(const AffineCoupling& base, std::size_t d_x,
                                          std::size_t d_z) {
  if (base.context_dim() != 0) throw UnsupportedError("conditional couplings cannot be embedded");
  const SplitMask& mask = base.mask();
  std::vector<bool> bits = mask.bits();
  // z coordinate j joins the same half as x coordinate j mod D_X.
  for (std::size_t j = 0; j < d_z; ++j) bits.push_back(mask.passes(j % d_x));
  SplitMask wide(bits);

  auto out = std::make_unique<AffineCoupling>(wide, base.options());
  const Mlp& src = base.net();
  Mlp& dst = out->net();
  // x entries come first in both index lists, so base positions map to the
  // same positions in the wide lists.
  const std::size_t tx = mask.transform_index().size();
  const std::size_t tw = wide.transform_index().size();
  std::vector<std::size_t> out_map(2 * tx);
  for (std::size_t j = 0; j < tx; ++j) {
    out_map[j] = j;            // µ
    out_map[tx + j] = tw + j;  // s
  }
  const std::vector<std::size_t> in_map = identity_map(mask.pass_index().size());

  const std::size_t layers = src.linear_count();
  for (std::size_t k = 0; k < layers; ++k) {
    const Tensor& w = src.params()[src.weight_index(k)].value;
    const Tensor& b = src.params()[src.bias_index(k)].value;
    Tensor& dw = dst.params()[dst.weight_index(k)].value;
    Tensor& db = dst.params()[dst.bias_index(k)].value;
    dw.fill(0.0);
    db.fill(0.0);
    const bool first = k == 0, last = k + 1 == layers;
    const std::vector<std::size_t> rows = first ? in_map : identity_map(w.rows());
    const std::vector<std::size_t> cols = last ? out_map : identity_map(w.cols());
    scatter_block(w, dw, rows, cols);
    for (std::size_t j = 0; j < cols.size(); ++j) db[cols[j]] = b[j];
  }
  return out;
}

}  // namespace

Flow embed_flow(const Flow& base, std::size_t d_z) {
  const std::size_t d_x = base.dim();
  const std::size_t d = d_x + d_z;
  Flow out(d);
  for (std::size_t i = 0; i < base.layers().size(); ++i) {
    const FlowLayer& layer = base.layers().layer(i);
    switch (layer.kind()) {
      case LayerKind::kActNorm: {
        const auto& an = static_cast<const ActNorm&>(layer);
        auto& e = out.layers().emplace<ActNorm>(d);
        // z gets scale exp(0) = 1 and bias 0 rather than data statistics.
        std::copy_n(an.log_scale().data(), d_x, e.log_scale().data());
        std::copy_n(an.bias().data(), d_x, e.bias().data());
        e.set_initialized(true);
        break;
      }
      case LayerKind::kPointwiseLinear: {
        const auto& pl = static_cast<const PointwiseLinear&>(layer);
        Tensor w = Tensor::Matrix(d, d);
        scatter_block(pl.weight(), w, identity_map(d_x), identity_map(d_x));
        for (std::size_t j = d_x; j < d; ++j) w(j, j) = 1.0;
        out.layers().emplace<PointwiseLinear>(d, std::move(w));
        break;
      }
      case LayerKind::kTupleFlip: {
        std::vector<std::size_t> perm = static_cast<const TupleFlip&>(layer).permutation();
        for (std::size_t j = d_x; j < d; ++j) perm.push_back(j);
        out.layers().emplace<TupleFlip>(std::move(perm));
        break;
      }
      case LayerKind::kAffineCoupling:
        out.layers().add(embed_coupling(static_cast<const AffineCoupling&>(layer), d_x, d_z));
        break;
      default:
        throw UnsupportedError(std::string(to_string(layer.kind())) +
                               " is unsupported for embedding (layer " + std::to_string(i) + ")");
    }
  }
  return out;
}

ConditionalFlow trivial_q(std::size_t d_z, std::size_t d_x, std::size_t hidden_units,
                          std::size_t hidden_layers) {
  if (d_z == 0) throw DimensionError("trivial_q needs D_Z >= 1");
  ArchitectureSpec spec;
  spec.d_x = d_x;
  spec.d_z = d_z;
  spec.hidden_units = hidden_units;
  spec.hidden_layers = hidden_layers;
  Rng rng(0);
  ConditionalFlow q = build_q(spec, rng);
  LayerStack& stack = q.layers();
  for (std::size_t i = 0; i < stack.size(); ++i) {
    FlowLayer& layer = stack.layer(i);
    if (auto* pl = dynamic_cast<PointwiseLinear*>(&layer)) {
      Tensor& w = pl->weight();
      w.fill(0.0);
      for (std::size_t j = 0; j < w.rows(); ++j) w(j, j) = 1.0;
    } else if (auto* an = dynamic_cast<ActNorm*>(&layer)) {
      an->log_scale().fill(0.0);
      an->bias().fill(0.0);
    } else if (auto* ac = dynamic_cast<AffineCoupling*>(&layer)) {
      ac->net().zero_output();
    } else if (auto* gc = dynamic_cast<GaussianConditional*>(&layer)) {
      gc->net().zero_output();
    }
  }
  stack.mark_actnorms_initialized();
  return q;
}

VFlowModel embedded_model(const Flow& base, std::size_t d_z) {
  VFlowModel model(base.dim(), d_z);
  model.p = embed_flow(base, d_z);
  if (d_z > 0) model.q = trivial_q(d_z, base.dim());
  model.validate();
  return model;
}

bool EmbeddingReport::passed(double tolerance) const {
  return worst_factorization < tolerance && worst_elbo < tolerance && worst_is < tolerance;
}

std::string EmbeddingReport::summary() const {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "d_z=%zu points=%zu max|log p_a - log p_x - log p_eps|=%.3e "
                "max|elbo - log p_x|=%.3e max|IS - log p_x|=%.3e",
                d_z, points.size(), worst_factorization, worst_elbo, worst_is);
  return buf;
}

EmbeddingReport verify_theorem1(const Flow& base, std::size_t d_z, std::size_t n_points,
                                Rng& rng) {
  if (n_points == 0) throw std::invalid_argument("verify_theorem1 needs n_points >= 1");
  const VFlowModel model = embedded_model(base, d_z);
  const Tensor x = flow_sample(base, rng, n_points);
  const Tensor z = sample_standard_normal(rng, {n_points, d_z});

  const std::vector<double> log_px = flow_log_prob(base, x).log_prob;
  const std::vector<double> log_pa = flow_log_prob(model.p, hconcat(x, z)).log_prob;
  const std::vector<double> log_pz = log_normal_pdf_rows(z);
  const ElboEstimate el = elbo(model, x, rng);
  ImportanceConfig small{1}, large{16};
  const std::vector<double> is1 = importance_log_likelihood(model, x, small, rng);
  const std::vector<double> is16 = importance_log_likelihood(model, x, large, rng);

  EmbeddingReport rep;
  rep.d_z = d_z;
  for (std::size_t i = 0; i < n_points; ++i) {
    EmbeddingPoint p;
    p.log_px = log_px[i];
    p.log_pa = log_pa[i];
    p.log_pz = log_pz[i];
    p.elbo = el.value[i];
    p.is_small = is1[i];
    p.is_large = is16[i];
    p.factorization_error = std::abs(p.log_pa - p.log_px - p.log_pz);
    p.elbo_error = std::abs(p.elbo - p.log_px);
    p.is_error = std::max(std::abs(p.is_small - p.log_px), std::abs(p.is_large - p.log_px));
    rep.worst_factorization = std::max(rep.worst_factorization, p.factorization_error);
    rep.worst_elbo = std::max(rep.worst_elbo, p.elbo_error);
    rep.worst_is = std::max(rep.worst_is, p.is_error);
    rep.points.push_back(p);
  }
  return rep;
}

double log_marginal_by_quadrature(const Flow& joint, const Tensor& x_row,
                                  std::size_t nodes) {
  if (joint.dim() != x_row.cols() + 1) {
    throw DimensionError("quadrature marginal needs a flow with exactly one extra dimension");
  }
  const QuadratureSpec spec{-8.0, 8.0, nodes};
  const std::vector<double> w = simpson_weights(spec);
  const std::size_t n = w.size();
  const double step = (spec.upper - spec.lower) / static_cast<double>(n - 1);
  Tensor grid = repeat_rows(x_row, n);
  Tensor z = Tensor::Matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) z(i, 0) = spec.lower + step * static_cast<double>(i);
  const std::vector<double> lp = flow_log_prob(joint, hconcat(grid, z)).log_prob;
  std::vector<double> terms(n);
  for (std::size_t i = 0; i < n; ++i) terms[i] = std::log(w[i]) + lp[i];
  return logsumexp(terms);
}

}  // namespace vflow
