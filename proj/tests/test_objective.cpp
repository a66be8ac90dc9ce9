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

#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "test_support.hpp"
#include "vflow/objective.hpp"
#include "vflow/theory.hpp"
#include "vflow/train.hpp"

using namespace vflow;
using vflow::testing::mean_and_se;
using vflow::testing::random_vflow;
using vflow::testing::relative_error;

namespace {

// Gradient of mean(value) over every registry entry by central differences,
// with the noise held fixed.
template <class F>
void check_bound_gradients(VFlowModel& model, F&& bound, const ElboCache& cache) {
  ParamRegistry reg = model.registry();
  std::vector<Tensor> grads = reg.zeros();
  elbo_backward(model, cache, grads);
  double worst = 0.0;
  std::string where;
  for (std::size_t k = 0; k < reg.size(); ++k) {
    Tensor& p = *reg.entries()[k].value;
    const Tensor saved = p;
    const Tensor num = finite_diff_gradient(
        [&](const Tensor& v) {
          p = v;
          const double l = bound();
          p = saved;
          return l;
        },
        saved);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double e = relative_error(grads[k][i], num[i]);
      if (e > worst) {
        worst = e;
        where = reg.entries()[k].name;
      }
    }
  }
  CAPTURE(where);
  CHECK(worst < 1e-4);
}

}  // namespace

TEST_CASE("identity p with trivial q gives log N(x)") {
  VFlowModel m(1, 1);
  m.p.layers().emplace<ActNorm>(2);
  m.q = trivial_q(1, 1);
  Rng rng(20);
  const Tensor x = sample_standard_normal(rng, {25, 1});
  const ElboEstimate est = elbo(m, x, rng);
  for (std::size_t r = 0; r < 25; ++r) {
    CHECK(std::abs(est.value[r] - log_normal_pdf(x.row(r))) < 1e-12);
    CHECK(std::abs(est.log_pxz[r] - est.log_q[r] - est.value[r]) < 1e-15);
  }
}

TEST_CASE("ELBO is below the quadrature marginal in expectation") {
  Rng rng(21);
  const VFlowModel m = random_vflow(2, 1, rng);
  const Tensor x = Tensor::FromRows({{0.3, -0.5}});
  const double marginal = log_marginal_by_quadrature(m.p, x);
  const ElboEstimate est = elbo(m, repeat_rows(x, 1000), rng);
  const auto ms = mean_and_se(est.value);
  CHECK(ms.mean <= marginal + 3 * ms.se);
}

TEST_CASE("importance sampling approaches the quadrature marginal") {
  Rng rng(22);
  VFlowModel m = random_vflow(2, 1, rng);
  const Tensor x = sample_standard_normal(rng, {20, 2});
  // A random q can be several times wider than the posterior, and then
  // IS(4096) is still biased by a few hundredths. Fit q with p frozen.
  fit_proposal(m, repeat_rows(x, 8), 500, rng);
  ImportanceConfig cfg;
  cfg.samples = 4096;
  const std::vector<double> is = importance_log_likelihood(m, x, cfg, rng);
  std::vector<double> err;
  for (std::size_t r = 0; r < 20; ++r) {
    const std::vector<std::size_t> idx{r};
    err.push_back(std::abs(is[r] - log_marginal_by_quadrature(m.p, take_rows(x, idx))));
  }
  std::nth_element(err.begin(), err.begin() + 10, err.end());
  CHECK(err[10] < 0.01);
}

TEST_CASE("IS with S = 1 is a single ELBO draw") {
  Rng rng(23);
  const VFlowModel m = random_vflow(2, 2, rng);
  const Tensor x = sample_standard_normal(rng, {7, 2});
  Rng a(9), b(9);
  ImportanceConfig cfg;
  cfg.samples = 1;
  const std::vector<double> is = importance_log_likelihood(m, x, cfg, a);
  const ElboEstimate est = elbo(m, x, b);
  for (std::size_t r = 0; r < 7; ++r) CHECK(std::abs(is[r] - est.value[r]) < 1e-12);
}

TEST_CASE("ELBO mean is below IS(200), and IS grows with S") {
  Rng rng(24);
  const VFlowModel m = random_vflow(2, 1, rng);
  const Tensor x = Tensor::FromRows({{-0.4, 1.1}});
  const ElboEstimate est = elbo(m, repeat_rows(x, 200), rng);
  const auto ms = mean_and_se(est.value);
  ImportanceConfig cfg;
  cfg.samples = 200;
  const double is200 = importance_log_likelihood(m, x, cfg, rng)[0];
  CHECK(ms.mean <= is200 + 3 * ms.se);

  std::vector<double> small, large;
  for (int t = 0; t < 30; ++t) {
    cfg.samples = 4;
    small.push_back(importance_log_likelihood(m, x, cfg, rng)[0]);
    cfg.samples = 16;
    large.push_back(importance_log_likelihood(m, x, cfg, rng)[0]);
  }
  const auto s4 = mean_and_se(small), s16 = mean_and_se(large);
  CHECK(s16.mean >= s4.mean - 3 * std::hypot(s4.se, s16.se));
}

TEST_CASE("ELBO gradients match finite differences with fixed noise") {
  for (std::size_t dz : {1u, 2u}) {
    Rng rng(25 + dz);
    VFlowModel m = random_vflow(2, dz, rng);
    const Tensor x = sample_standard_normal(rng, {3, 2});
    const Tensor noise = sample_standard_normal(rng, {3, dz});
    ElboCache cache;
    elbo_with_noise(m, x, noise, &cache);
    check_bound_gradients(m, [&] { return elbo_with_noise(m, x, noise).mean(); }, cache);
  }
}

TEST_CASE("ELBO gradient reaches q through the reparameterized path") {
  Rng rng(27);
  VFlowModel m = random_vflow(2, 2, rng);
  const Tensor x = sample_standard_normal(rng, {8, 2});
  ElboCache cache;
  elbo(m, x, rng, &cache);
  ParamRegistry reg = m.registry();
  std::vector<Tensor> grads = reg.zeros();
  elbo_backward(m, cache, grads);
  double q_norm = 0.0;
  for (std::size_t k = m.p_param_count(); k < reg.size(); ++k) {
    for (double v : grads[k].values()) q_norm += v * v;
  }
  CHECK(q_norm > 0.0);
}

TEST_CASE("elbo_discrete gradients match finite differences with fixed noise") {
  Rng rng(28);
  VFlowModel m = random_vflow(2, 1, rng, 0.3, true);
  const Tensor x = Tensor::FromRows({{0, 3}, {2, 1}, {1, 1}});
  const Tensor nr = sample_standard_normal(rng, {3, 2});
  const Tensor nq = sample_standard_normal(rng, {3, 1});
  ElboCache cache;
  const ElboEstimate est = elbo_discrete_with_noise(m, x, nr, nq, &cache);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(std::abs(est.value[r] - (est.log_pxz[r] - est.log_q[r] - est.log_r[r])) < 1e-12);
  }
  check_bound_gradients(m, [&] { return elbo_discrete_with_noise(m, x, nr, nq).mean(); }, cache);
}

TEST_CASE("zero-net dequantizer reduces to a fixed closed form") {
  VFlowModel m(2, 0);
  m.p.layers().emplace<ActNorm>(2);
  ConditionalFlow r(2, 2);
  r.layers().emplace<Sigmoid>(2);
  m.r = r;
  Rng rng(29);
  const Tensor x = Tensor::FromRows({{1, 2}, {0, 0}});
  ElboCache cache;
  const ElboEstimate est = elbo_discrete(m, x, rng, &cache);
  for (std::size_t row = 0; row < 2; ++row) {
    double expected = 0.0;
    for (std::size_t j = 0; j < 2; ++j) {
      const double u = cache.r->value(row, j);
      const double e = logit(u);
      expected += -0.5 * e * e - 0.5 * kLog2Pi - (log_sigmoid(e) + log_sigmoid(-e));
    }
    CHECK(std::abs(est.log_r[row] - expected) < 1e-10);
  }
}

TEST_CASE("discrete bound stays below the brute-force marginal") {
  Rng rng(30);
  VFlowModel m = random_vflow(2, 1, rng, 0.3, true);
  // Unfitted r and q give heavy-tailed weights; a lucky draw can put IS(2000)
  // well above log P at low-probability bins.
  const Tensor fit_points = Tensor::FromRows({{0, 0}, {1, 3}, {2, 1}});
  fit_proposal(m, repeat_rows(fit_points, 16), 500, rng, 1e-2, Objective::kDiscrete);
  for (const auto& pt : {std::vector<double>{0, 0}, std::vector<double>{1, 3}, std::vector<double>{2, 1}}) {
    const double exact = vflow::testing::discrete_log_prob_by_quadrature(m, pt);
    const Tensor x = repeat_rows(Tensor({1, 2}, pt), 2000);
    const ElboEstimate est = elbo_discrete(m, x, rng);
    const auto ms = mean_and_se(est.value);
    CHECK(ms.mean <= exact + 3 * ms.se);
    // The IS version of the bound tightens towards the exact value.
    ImportanceConfig cfg;
    cfg.samples = 2000;
    const double is = importance_log_likelihood(m, Tensor({1, 2}, pt), cfg, rng)[0];
    CHECK(is <= exact + 0.02);
    CHECK(is >= ms.mean - 3 * ms.se);
  }
}

TEST_CASE("bits_per_dim") {
  CHECK(bits_per_dim(-3 * std::numbers::ln2, 3) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(bits_per_dim(-2 * 5 * std::numbers::ln2, 2) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK_THROWS(bits_per_dim(1.0, 0));
}

TEST_CASE("objective argument checks") {
  Rng rng(31);
  const VFlowModel m = random_vflow(2, 1, rng);
  CHECK_THROWS_AS(elbo(m, Tensor::Matrix(2, 3), rng), DimensionError);
  CHECK_THROWS_AS(elbo_discrete(m, Tensor::Matrix(2, 2), rng), std::invalid_argument);
  ImportanceConfig cfg;
  cfg.samples = 0;
  CHECK_THROWS_AS(importance_log_likelihood(m, Tensor::Matrix(1, 2), cfg, rng),
                  std::invalid_argument);
}
