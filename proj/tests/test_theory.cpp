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

#include <cmath>

#include "doctest.h"
#include "test_support.hpp"
#include "vflow/objective.hpp"
#include "vflow/theory.hpp"

using namespace vflow;
using vflow::testing::random_flow;

TEST_CASE("embedding an identity flow gives the identity") {
  Flow base(2);
  base.layers().emplace<ActNorm>(2);
  base.layers().emplace<PointwiseLinear>(2);
  const Flow e = embed_flow(base, 3);
  CHECK(e.dim() == 5);
  Rng rng(40);
  const Tensor x = sample_standard_normal(rng, {4, 5});
  const StackResult res = e.layers().forward(x, nullptr);
  CHECK(res.output.values() == x.values());
  CHECK(res.logdet == std::vector<double>(4, 0.0));
}

TEST_CASE("embedded PointwiseLinear acts as xW on x and leaves z alone") {
  Flow base(2);
  base.layers().emplace<PointwiseLinear>(2, Tensor::FromRows({{2.0, 1.0}, {0.5, 3.0}}));
  const Flow e = embed_flow(base, 2);
  const Tensor in = Tensor::FromRows({{1.0, -1.0, 0.25, 7.0}});
  const StackResult res = e.layers().forward(in, nullptr);
  CHECK(res.output(0, 0) == doctest::Approx(1.5));
  CHECK(res.output(0, 1) == doctest::Approx(-2.0));
  CHECK(res.output(0, 2) == 0.25);
  CHECK(res.output(0, 3) == 7.0);
  CHECK(res.logdet[0] == doctest::Approx(std::log(5.5)).epsilon(1e-14));
}

TEST_CASE("every supported layer satisfies the block condition") {
  Rng rng(41);
  for (std::size_t dz : {1u, 2u, 5u}) {
    Flow base = random_flow(2, 3, rng, 0.6);
    base.layers().emplace<TupleFlip>(std::vector<std::size_t>{1, 0});
    const Flow e = embed_flow(base, dz);
    REQUIRE(e.layers().size() == base.layers().size());
    const Tensor x = sample_standard_normal(rng, {6, 2});
    const Tensor z = sample_standard_normal(rng, {6, dz});
    Tensor cur_x = x, cur = hconcat(x, z);
    for (std::size_t i = 0; i < base.layers().size(); ++i) {
      const LayerResult bx = base.layers().layer(i).forward(cur_x, nullptr);
      const LayerResult bw = e.layers().layer(i).forward(cur, nullptr);
      for (std::size_t r = 0; r < 6; ++r) {
        for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(bw.output(r, j) - bx.output(r, j)) < 1e-12);
        for (std::size_t j = 0; j < dz; ++j) CHECK(bw.output(r, 2 + j) == z(r, j));
        CHECK(std::abs(bw.logdet[r] - bx.logdet[r]) < 1e-12);
      }
      cur_x = bx.output;
      cur = bw.output;
    }
  }
}

TEST_CASE("embedding adds only padding parameters") {
  Rng rng(42);
  const Flow base = random_flow(2, 2, rng);
  const Flow e = embed_flow(base, 3);
  CHECK(e.layers().param_count() == base.layers().param_count());
  for (std::size_t i = 0; i < base.layers().size(); ++i) {
    const auto& bp = base.layers().layer(i).params();
    const auto& ep = e.layers().layer(i).params();
    REQUIRE(bp.size() == ep.size());
    for (std::size_t k = 0; k < bp.size(); ++k) {
      CHECK(ep[k].value.size() >= bp[k].value.size());
      CHECK(ep[k].value.rank() == bp[k].value.rank());
    }
  }
}

TEST_CASE("unsupported layers are rejected") {
  Flow base(2);
  base.layers().emplace<Sigmoid>(2);
  CHECK_THROWS_AS(embed_flow(base, 1), UnsupportedError);
  Flow mix(2);
  CouplingOptions opts;
  opts.hidden_units = 4;
  mix.layers().emplace<MixLogisticCoupling>(SplitMask::Checker(2), 2, opts);
  CHECK_THROWS_WITH_AS(embed_flow(mix, 1), doctest::Contains("unsupported for embedding"),
                       UnsupportedError);
}

TEST_CASE("trivial q is the standard normal for any context") {
  for (std::size_t dz : {1u, 3u}) {
    const ConditionalFlow q = trivial_q(dz, 2);
    Rng rng(43);
    const Tensor z = sample_standard_normal(rng, {10, dz});
    const Tensor c1 = sample_standard_normal(rng, {10, 2});
    Tensor c2 = c1;
    c2 *= 5.0;
    const std::vector<double> lq = conditional_log_prob(q, z, c1);
    for (std::size_t r = 0; r < 10; ++r) CHECK(lq[r] == doctest::Approx(log_normal_pdf(z.row(r))).epsilon(1e-15));

    Rng a(7), b(7);
    const ConditionalSample s1 = conditional_sample_and_logq(q, c1, a);
    const ConditionalSample s2 = conditional_sample_and_logq(q, c2, b);
    CHECK(s1.value.values() == s2.value.values());

    ParamRegistry reg;
    ConditionalFlow qq = q;
    register_stack(reg, "q", qq.layers());
    std::vector<Tensor> grads = reg.zeros();
    const ConditionalSample s = conditional_transform(qq, c1, z);
    const std::vector<double> gl(10, 1.0);
    const Tensor gc = conditional_backward(qq, s, Tensor::Matrix(10, dz), gl, grads);
    for (double v : gc.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("embedding equalities hold for random bases") {
  Rng rng(44);
  for (std::size_t dz : {1u, 2u, 8u}) {
    const Flow base = random_flow(2, 3, rng, 0.5);
    const EmbeddingReport rep = verify_theorem1(base, dz, 100, rng);
    CAPTURE(rep.summary());
    CHECK(rep.points.size() == 100);
    CHECK(rep.passed(1e-9));
  }
}

TEST_CASE("quadrature marginal of an embedded flow matches the base") {
  Rng rng(45);
  const Flow base = random_flow(2, 3, rng, 0.5);
  const Flow e = embed_flow(base, 1);
  const Tensor x = flow_sample(base, rng, 5);
  const std::vector<double> lp = flow_log_prob(base, x).log_prob;
  for (std::size_t r = 0; r < 5; ++r) {
    const std::vector<std::size_t> idx{r};
    CHECK(std::abs(log_marginal_by_quadrature(e, take_rows(x, idx)) - lp[r]) < 1e-6);
  }
}

TEST_CASE("one gradient step from the embedded point is finite") {
  Rng rng(46);
  const Flow base = random_flow(2, 2, rng, 0.5);
  VFlowModel m = embedded_model(base, 2);
  const Tensor x = flow_sample(base, rng, 16);
  ElboCache cache;
  elbo(m, x, rng, &cache);
  ParamRegistry reg = m.registry();
  std::vector<Tensor> grads = reg.zeros();
  elbo_backward(m, cache, grads);
  for (const Tensor& g : grads) CHECK(g.all_finite());
}
