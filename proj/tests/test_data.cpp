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
#include <set>
#include <sstream>

#include "doctest.h"
#include "vflow/data.hpp"

using namespace vflow;

TEST_CASE("checkerboard samples stay on black cells inside the support") {
  CheckerboardSpec spec;
  Rng rng(50);
  const Tensor x = sample_checkerboard(spec, 100000, rng);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    REQUIRE(std::abs(x(r, 0)) <= 4.0);
    REQUIRE(std::abs(x(r, 1)) <= 4.0);
    // Parity in unit coordinates.
    const double c0 = std::floor(x(r, 0) / 2.0), c1 = std::floor(x(r, 1) / 2.0);
    REQUIRE(std::fmod(std::abs(c0 + c1), 2.0) == 0.0);
    REQUIRE(on_black_cell(x(r, 0), x(r, 1)));
  }
  CHECK(spec.log_density() == doctest::Approx(-std::log(32.0)).epsilon(1e-15));
  CHECK(spec.log_density() == doctest::Approx(-3.4657).epsilon(1e-4));
}

TEST_CASE("checkerboard is uniform over its 32 unit cells") {
  CheckerboardSpec spec;
  Rng rng(51);
  const std::size_t n = 100000;
  const Tensor x = sample_checkerboard(spec, n, rng);
  std::vector<double> counts(64, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto i = static_cast<std::size_t>(std::floor(x(r, 0) + 4.0));
    const auto j = static_cast<std::size_t>(std::floor(x(r, 1) + 4.0));
    counts[i * 8 + j] += 1.0;
  }
  std::size_t occupied = 0;
  double chi2 = 0.0;
  const double expected = static_cast<double>(n) / 32.0;
  for (double c : counts) {
    if (c == 0.0) continue;
    ++occupied;
    chi2 += (c - expected) * (c - expected) / expected;
  }
  CHECK(occupied == 32);
  // χ²(31) critical value at α = 0.01.
  CHECK(chi2 < 52.19);
}

TEST_CASE("quantize") {
  QuantizedSpec q;
  const Tensor lo = quantize(Tensor::FromRows({{-4.0 + 1e-9, -4.0 + 1e-9}}), q);
  CHECK(lo.values() == std::vector<double>{0, 0});
  const Tensor hi = quantize(Tensor::FromRows({{4.0, 3.5}}), q);
  CHECK(hi.values() == std::vector<double>{7, 7});
  CHECK_THROWS_AS(quantize(Tensor::FromRows({{4.5, 0.0}}), q), DimensionError);

  double prev = -1.0;
  for (int k = 0; k <= 1000; ++k) {
    const double v = -4.0 + 8.0 * k / 1000.0;
    const double b = quantize(Tensor::FromRows({{v, 0.0}}), q)(0, 0);
    REQUIRE(b >= prev);
    prev = b;
  }
}

TEST_CASE("quantized checkerboard has 32 equiprobable bins and 2.5 bits/dim") {
  QuantizedSpec q;
  std::size_t nonzero = 0;
  double total = 0.0, entropy_bits = 0.0;
  for (std::size_t a = 0; a < 8; ++a) {
    for (std::size_t b = 0; b < 8; ++b) {
      const double lp = quantized_log_prob(a, b, q);
      if (!std::isfinite(lp)) continue;
      ++nonzero;
      const double p = std::exp(lp);
      total += p;
      entropy_bits -= p * lp / std::log(2.0);
    }
  }
  CHECK(nonzero == 32);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(entropy_bits / 2.0 == doctest::Approx(2.5).epsilon(1e-12));

  Rng rng(52);
  const Tensor bins = quantize(sample_checkerboard(q.board, 20000, rng), q);
  for (std::size_t r = 0; r < bins.rows(); ++r) {
    REQUIRE(std::isfinite(quantized_log_prob(static_cast<std::size_t>(bins(r, 0)),
                                             static_cast<std::size_t>(bins(r, 1)), q)));
  }
}

TEST_CASE("make_splits") {
  CheckerboardSpec spec;
  spec.n_train = 5000;
  spec.seed = 3;
  const auto [train, test] = make_splits(spec);
  CHECK(test.rows() == 1000);
  CHECK(train.rows() == 5000);
  const auto [train2, test2] = make_splits(spec);
  CHECK(train.values() == train2.values());
  CHECK(test.values() == test2.values());

  std::set<double> seen(train.values().begin(), train.values().end());
  std::size_t shared = 0;
  for (double v : test.values()) shared += seen.count(v);
  CHECK(shared == 0);

  // Two-sample Kolmogorov-Smirnov on each marginal, α = 0.01.
  for (std::size_t j = 0; j < 2; ++j) {
    std::vector<double> a, b;
    for (std::size_t r = 0; r < train.rows(); ++r) a.push_back(train(r, j));
    for (std::size_t r = 0; r < test.rows(); ++r) b.push_back(test(r, j));
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double d = 0.0;
    std::size_t i = 0, k = 0;
    while (i < a.size() && k < b.size()) {
      if (a[i] <= b[k]) ++i; else ++k;
      d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(k) / b.size()));
    }
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    CHECK(d < 1.628 * std::sqrt((na + nb) / (na * nb)));
  }
}

TEST_CASE("csv dump") {
  std::ostringstream out;
  write_csv(out, Tensor::FromRows({{0.1, -2.5}, {3.0, 1e-300}}));
  CHECK(out.str() == "x0,x1\n0.1,-2.5\n3,1e-300\n");
  std::ostringstream bins;
  write_csv(bins, Tensor::FromRows({{1, 7}}), true);
  CHECK(bins.str() == "x0,x1\n1,7\n");
}

TEST_CASE("spec validation") {
  CheckerboardSpec bad;
  bad.scale = -1.0;
  Rng rng(1);
  CHECK_THROWS(sample_checkerboard(bad, 1, rng));
  QuantizedSpec q;
  q.levels = 1;
  CHECK_THROWS(quantize(Tensor::FromRows({{0.0, 0.0}}), q));
}

TEST_CASE("csv read round trip") {
  const Tensor x = Tensor::FromRows({{0.1, -2.5}, {3.0, 1e-300}, {-0.0, 7.25}});
  std::stringstream io;
  write_csv(io, x);
  const Tensor y = read_csv(io);
  CHECK(y.values() == x.values());
  CHECK(y.cols() == 2);

  std::istringstream ragged("x0,x1\n1,2\n3\n");
  CHECK_THROWS_WITH_AS(read_csv(ragged), doctest::Contains("line 3"), FormatError);
  std::istringstream junk("x0\nabc\n");
  CHECK_THROWS_AS(read_csv(junk), FormatError);
  std::istringstream empty("");
  CHECK_THROWS_AS(read_csv(empty), FormatError);
}
