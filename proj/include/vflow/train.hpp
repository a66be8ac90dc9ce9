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

#ifndef VFLOW_TRAIN_HPP_
#define VFLOW_TRAIN_HPP_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "vflow/model.hpp"
#include "vflow/objective.hpp"

namespace vflow {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  // Zeroed moments shaped like `registry`.
  void reset(const ParamRegistry& registry);
};

// One Adam update with bias correction. Returns false and leaves everything
// untouched when any gradient entry is non-finite.
bool adam_step(const ParamRegistry& params, std::span<const Tensor> grads, AdamState& state,
               double lr);

struct LrSchedule {
  enum class Kind { kConstant, kWarmupDecay };
  Kind kind = Kind::kConstant;
  double constant = 1e-3;
  std::uint64_t warmup_steps = 2000;
  double peak = 0.0012;
  double decay_rate = 0.99999;
  std::uint64_t decay_start = 50000;
  double floor = 0.0003;

  void validate() const;
};

double lr_at(const LrSchedule& schedule, std::uint64_t step);

// Rescales `grads` to global L2 norm `max_norm` when above it; returns the
// norm before clipping. max_norm <= 0 disables clipping.
double clip_global_norm(std::span<Tensor> grads, double max_norm);

enum class Objective { kElbo, kDiscrete };

// Trains q (and r, when present) on `x` by maximizing the bound with p held
// fixed. Every row of `x` is used at every step. Returns the mean bound of
// the last step. Useful before importance sampling a frozen p, where the
// estimator's bias shrinks as q approaches the posterior.
double fit_proposal(VFlowModel& model, const Tensor& x, std::size_t steps, Rng& rng,
                    double lr = 1e-2, Objective objective = Objective::kElbo);

struct TrainConfig {
  std::size_t batch_size = 64;
  std::uint64_t iterations = 100000;
  std::uint64_t seed = 0;
  std::uint64_t eval_every = 10000;   // 0 evaluates only at the end
  std::uint64_t log_every = 1000;
  std::size_t eval_samples = 100;     // S for the test IS estimate
  LrSchedule schedule;
  double clip_norm = 100.0;           // <= 0 disables
  double max_skip_fraction = 0.01;
  Objective objective = Objective::kElbo;

  void validate() const;
};

struct MetricRow {
  std::uint64_t step = 0;
  double lr = 0.0;
  double train_elbo = 0.0;  // mean over the steps since the previous row
  double test_is = 0.0;     // NaN when not evaluated at this row
};

void write_metrics_header(std::ostream& out);
void write_metric_row(std::ostream& out, const MetricRow& row);

// Owns the optimizer state and the training stream for one model. The model
// and data must outlive the trainer.
class Trainer {
 public:
  Trainer(VFlowModel& model, const Tensor& train, const Tensor& test, TrainConfig config);

  // Runs until `config.iterations` steps have been taken (or `until_step`,
  // when smaller). Metric rows are appended to metrics() and, if given,
  // streamed to `csv`. Throws NumericError when too many steps are skipped.
  void run(std::ostream* csv = nullptr, std::uint64_t until_step = UINT64_MAX);

  // Mean test IS log-likelihood (nats) with `samples` draws per point.
  double evaluate(std::size_t samples) const;

  std::uint64_t step() const { return step_; }
  std::uint64_t skipped() const { return skipped_; }
  const std::vector<MetricRow>& metrics() const { return metrics_; }
  const TrainConfig& config() const { return config_; }
  AdamState& adam() { return adam_; }
  const AdamState& adam() const { return adam_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }
  VFlowModel& model() { return model_; }

  // Restores counters from a checkpoint; the caller loads parameters and
  // Adam moments separately.
  void restore(std::uint64_t step, std::uint64_t skipped);

 private:
  void initialize_actnorms();
  Tensor next_batch();
  // Returns the batch objective, or NaN when the step was skipped.
  double train_step(double lr);

  VFlowModel& model_;
  const Tensor& train_;
  const Tensor& test_;
  TrainConfig config_;
  ParamRegistry registry_;
  AdamState adam_;
  Rng rng_;
  std::uint64_t step_ = 0;
  std::uint64_t skipped_ = 0;
  bool initialized_ = false;
  std::vector<MetricRow> metrics_;
  double window_sum_ = 0.0;
  std::uint64_t window_count_ = 0;
};

// Binary checkpoint. Layout (little-endian): "VFLOWCKP", u32 version,
// then length-prefixed strings (RNG tag, RNG state, config text), u64 step,
// u64 skipped steps, u64 Adam t, u64 tensor count, and per tensor a
// length-prefixed name, u32 rank, u64 extents, f64 values.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string rng_tag;
  std::string rng_state;
  std::string config_text;
  std::uint64_t step = 0;
  std::uint64_t skipped = 0;
  std::uint64_t adam_t = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckp);
Checkpoint load_checkpoint(const std::string& path);

// Snapshot of model parameters, Adam moments and trainer counters.
Checkpoint make_checkpoint(VFlowModel& model, const Trainer* trainer,
                           const std::string& config_text);
// Copies parameters into `model` (shapes must match); when `trainer` is given
// also restores Adam moments, counters and the training RNG.
void apply_checkpoint(const Checkpoint& ckp, VFlowModel& model, Trainer* trainer);

}  // namespace vflow

#endif  // VFLOW_TRAIN_HPP_
