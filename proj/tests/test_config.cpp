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
#include <string>

#include "doctest.h"
#include "vflow/config.hpp"
#include "vflow/errors.hpp"

using namespace vflow;

namespace {

int error_line(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  return -1;
}

}  // namespace

TEST_CASE("full configuration parses") {
  const RunConfig c = parse_config(R"(
model:
  d_x: 2
  d_z: 8
  p_steps: 2
  q_steps: 1
  hidden_units: 50
  hidden_layers: 2
  coupling: affine
data:
  kind: checkerboard
  n_train: 1000
  seed: 3
train:
  batch_size: 32
  iterations: 500
  eval_every: 100
  log_every: 50
  schedule:
    kind: warmup_decay
    warmup_steps: 10
    decay_start: 20
importance:
  samples: 64
output:
  dir: out/run
)");
  CHECK(c.model.d_z == 8);
  CHECK(c.model.p_steps == 2);
  CHECK(c.data.board.n_train == 1000);
  CHECK(c.data.board.seed == 3);
  CHECK(c.train.batch_size == 32);
  CHECK(c.train.schedule.kind == LrSchedule::Kind::kWarmupDecay);
  CHECK(c.train.schedule.warmup_steps == 10);
  CHECK(c.train.eval_samples == 64);
  CHECK(c.train.objective == Objective::kElbo);
  CHECK(c.output_dir == "out/run");
  CHECK_FALSE(c.theory.has_value());
}

TEST_CASE("defaults apply to missing sections") {
  const RunConfig c = parse_config("output:\n  dir: x\n");
  CHECK(c.model.d_z == 0);
  CHECK(c.model.hidden_units == 50);
  CHECK(c.train.batch_size == 64);
  CHECK(c.train.iterations == 100000);
  CHECK(c.importance.samples == 100);
}

TEST_CASE("unknown keys are rejected with their line") {
  CHECK(error_line("model:\n  d_z: 1\n  hiden_units: 3\n") == 3);
  CHECK(error_line("modle:\n  d_z: 1\n") == 1);
  CHECK(error_line("train:\n  schedule:\n    kind: constant\n    rate: 1\n") == 4);
  CHECK_THROWS_WITH_AS(parse_config("model:\n  hiden_units: 3\n"), doctest::Contains("hiden_units"),
                       ConfigError);
}

TEST_CASE("bad values are line-anchored") {
  CHECK(error_line("model:\n  d_z: -1\n") == 2);
  CHECK(error_line("model:\n  d_z: two\n") == 2);
  CHECK(error_line("model:\n  coupling: spline\n") == 2);
  CHECK(error_line("data:\n  kind: moons\n") == 2);
  CHECK(error_line("train:\n  batch_size: 0\n") == 2);
  CHECK(error_line("theory:\n  d_z: [1, 0]\n") == 2);
  CHECK(error_line("model: [1, 2]\n") == 1);
  CHECK(error_line("model:\n  d_z: [1\n") > 0);
}

TEST_CASE("dequantization must match the dataset") {
  CHECK_THROWS_AS(parse_config("data:\n  kind: quantized_checkerboard\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("model:\n  dequantize: true\n"), ConfigError);
  const RunConfig c = parse_config("model:\n  dequantize: true\ndata:\n  kind: quantized_checkerboard\n");
  CHECK(c.train.objective == Objective::kDiscrete);
  CHECK(c.data.quantized().levels == 8);
}

TEST_CASE("theory section") {
  const RunConfig c = parse_config("theory:\n  d_z: [1, 2]\n  points: 10\n  train_iterations: 5\n");
  REQUIRE(c.theory.has_value());
  CHECK(c.theory->d_z == std::vector<std::size_t>{1, 2});
  CHECK(c.theory->points == 10);
  CHECK(c.theory->train_iterations == 5);
  CHECK_FALSE(c.theory->base_checkpoint.has_value());
}

TEST_CASE("empty and missing files") {
  CHECK_THROWS_AS(parse_config(""), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/cfg.yaml"), ConfigError);
}

TEST_CASE("load_dataset quantizes when asked") {
  RunConfig c = parse_config(
      "model:\n  dequantize: true\ndata:\n  kind: quantized_checkerboard\n  n_train: 50\n  n_test: 10\n");
  const auto [train, test] = load_dataset(c.data);
  CHECK(train.rows() == 50);
  CHECK(test.rows() == 10);
  for (double v : train.values()) CHECK(v == std::floor(v));
}
