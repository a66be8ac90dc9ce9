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

#include "vflow/train.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

namespace vflow {

namespace {

constexpr char kMagic[8] = {'V', 'F', 'L', 'O', 'W', 'C', 'K', 'P'};
constexpr std::uint64_t kEvalStream = 0x5EED0000ULL;

bool all_finite(std::span<const Tensor> grads) {
  for (const Tensor& g : grads) {
    if (!g.all_finite()) return false;
  }
  return true;
}

void write_double(std::ostream& out, double v) {
  if (std::isnan(v)) return;  // empty field
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.write(buf, res.ptr - buf);
}

// Little-endian primitives; the host byte order is normalized explicitly.
template <class T>
void put(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw FormatError(std::string("truncated checkpoint while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const char* what) {
  const auto n = get<std::uint64_t>(in, what);
  if (n > (1ULL << 30)) throw FormatError(std::string("implausible length for ") + what);
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw FormatError(std::string("truncated checkpoint while reading ") + what);
  }
  return s;
}

}  // namespace

void AdamState::reset(const ParamRegistry& registry) {
  t = 0;
  m = registry.zeros();
  v = registry.zeros();
}

bool adam_step(const ParamRegistry& params, std::span<const Tensor> grads, AdamState& state,
               double lr) {
  const auto& entries = params.entries();
  if (grads.size() != entries.size() || state.m.size() != entries.size() ||
      state.v.size() != entries.size()) {
    throw DimensionError("Adam state does not match the parameter registry");
  }
  if (!all_finite(grads)) return false;
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor& p = *entries[k].value;
    const Tensor& g = grads[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    if (!p.same_shape(g)) throw DimensionError("gradient shape mismatch for " + entries[k].name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
  return true;
}

void LrSchedule::validate() const {
  if (kind == Kind::kConstant) {
    if (!(constant > 0.0)) throw std::invalid_argument("learning rate must be positive");
    return;
  }
  if (!(peak > 0.0) || !(floor > 0.0) || floor > peak) {
    throw std::invalid_argument("schedule needs 0 < floor <= peak");
  }
  if (!(decay_rate > 0.0 && decay_rate <= 1.0)) throw std::invalid_argument("decay_rate in (0, 1]");
  if (decay_start < warmup_steps) throw std::invalid_argument("decay_start before warmup end");
}

double lr_at(const LrSchedule& s, std::uint64_t step) {
  if (s.kind == LrSchedule::Kind::kConstant) return s.constant;
  if (step < s.warmup_steps) {
    return s.peak * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  if (step <= s.decay_start) return s.peak;
  const double decayed =
      s.peak * std::pow(s.decay_rate, static_cast<double>(step - s.decay_start));
  return std::max(decayed, s.floor);
}

double clip_global_norm(std::span<Tensor> grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads) {
    for (double v : g.values()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && std::isfinite(norm) && norm > max_norm) {
    for (Tensor& g : grads) g *= max_norm / norm;
  }
  return norm;
}

double fit_proposal(VFlowModel& model, const Tensor& x, std::size_t steps, Rng& rng, double lr,
                    Objective objective) {
  if (!model.q && !model.r) throw std::invalid_argument("model has no q or r to fit");
  const ParamRegistry full = model.registry();
  const std::size_t skip = model.p_param_count();
  ParamRegistry sub;
  for (std::size_t k = skip; k < full.size(); ++k) sub.add(full.entries()[k].name, full.entries()[k].value);
  AdamState adam;
  adam.reset(sub);
  double last = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    ElboCache cache;
    const ElboEstimate est = objective == Objective::kDiscrete ? elbo_discrete(model, x, rng, &cache)
                                                               : elbo(model, x, rng, &cache);
    last = est.mean();
    std::vector<Tensor> grads = full.zeros();
    elbo_backward(model, cache, grads);
    // Adam minimizes, the bound is maximized.
    std::vector<Tensor> g(grads.begin() + static_cast<std::ptrdiff_t>(skip), grads.end());
    for (Tensor& v : g) v *= -1.0;
    clip_global_norm(g, 100.0);
    adam_step(sub, g, adam, lr);
  }
  return last;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (iterations == 0) throw std::invalid_argument("iterations must be positive");
  if (log_every == 0) throw std::invalid_argument("log_every must be positive");
  if (eval_samples == 0) throw std::invalid_argument("eval_samples must be positive");
  if (!(max_skip_fraction >= 0.0)) throw std::invalid_argument("max_skip_fraction must be >= 0");
  schedule.validate();
}

void write_metrics_header(std::ostream& out) {
  out << "step,lr,train_elbo_nats,test_is_loglik_nats\n";
}

void write_metric_row(std::ostream& out, const MetricRow& row) {
  out << row.step << ',';
  write_double(out, row.lr);
  out << ',';
  write_double(out, row.train_elbo);
  out << ',';
  write_double(out, row.test_is);
  out << '\n';
}

Trainer::Trainer(VFlowModel& model, const Tensor& train, const Tensor& test, TrainConfig config)
    : model_(model),
      train_(train),
      test_(test),
      config_(std::move(config)),
      registry_(model.registry()),
      rng_(Rng(config_.seed).fork(1)) {
  config_.validate();
  model_.validate();
  if (train.cols() != model.d_x || test.cols() != model.d_x) {
    throw DimensionError("data width does not match the model's D_X");
  }
  if (train.rows() == 0 || test.rows() == 0) throw DimensionError("empty training or test set");
  if (config_.objective == Objective::kDiscrete && !model.r) {
    throw std::invalid_argument("discrete objective needs a model with an r flow");
  }
  adam_.reset(registry_);
}

void Trainer::restore(std::uint64_t step, std::uint64_t skipped) {
  step_ = step;
  skipped_ = skipped;
  initialized_ = true;
}

Tensor Trainer::next_batch() {
  std::vector<std::size_t> idx(config_.batch_size);
  for (auto& i : idx) i = rng_.index(train_.rows());
  return take_rows(train_, idx);
}

void Trainer::initialize_actnorms() {
  const Tensor x = next_batch();
  Tensor xc = x;
  if (config_.objective == Objective::kDiscrete) {
    const Tensor noise = sample_standard_normal(rng_, {x.rows(), model_.d_x});
    model_.r->layers().initialize_actnorms(noise, &x);
    xc += conditional_transform(*model_.r, x, noise).value;
  }
  Tensor joint = xc;
  if (model_.q) {
    const Tensor noise = sample_standard_normal(rng_, {x.rows(), model_.d_z});
    model_.q->layers().initialize_actnorms(noise, &xc);
    joint = hconcat(xc, conditional_transform(*model_.q, xc, noise).value);
  }
  model_.p.layers().initialize_actnorms(joint, nullptr);
  initialized_ = true;
}

double Trainer::train_step(double lr) {
  const Tensor x = next_batch();
  ElboCache cache;
  ElboEstimate est;
  try {
    est = config_.objective == Objective::kDiscrete ? elbo_discrete(model_, x, rng_, &cache)
                                                    : elbo(model_, x, rng_, &cache);
  } catch (const NumericError&) {
    ++skipped_;
    return std::numeric_limits<double>::quiet_NaN();
  }
  std::vector<Tensor> grads = registry_.zeros();
  elbo_backward(model_, cache, grads);
  // Ascend the bound: Adam minimizes, so hand it the negated gradient.
  for (Tensor& g : grads) g *= -1.0;
  clip_global_norm(grads, config_.clip_norm);
  if (!adam_step(registry_, grads, adam_, lr)) {
    ++skipped_;
    return std::numeric_limits<double>::quiet_NaN();
  }
  return est.mean();
}

double Trainer::evaluate(std::size_t samples) const {
  Rng eval_rng = Rng(config_.seed).fork(kEvalStream + step_);
  ImportanceConfig cfg;
  cfg.samples = samples;
  const std::vector<double> ll = importance_log_likelihood(model_, test_, cfg, eval_rng);
  double sum = 0.0;
  for (double v : ll) sum += v;
  return sum / static_cast<double>(ll.size());
}

void Trainer::run(std::ostream* csv, std::uint64_t until_step) {
  if (!initialized_) initialize_actnorms();
  const std::uint64_t end = std::min(until_step, config_.iterations);
  while (step_ < end) {
    const double lr = lr_at(config_.schedule, step_);
    const double value = train_step(lr);
    ++step_;
    if (std::isfinite(value)) {
      window_sum_ += value;
      ++window_count_;
    }
    if (step_ >= 100 &&
        static_cast<double>(skipped_) > config_.max_skip_fraction * static_cast<double>(step_)) {
      throw NumericError("aborting: " + std::to_string(skipped_) + " of " +
                         std::to_string(step_) + " steps had non-finite values");
    }
    const bool last = step_ == config_.iterations;
    const bool eval = last || (config_.eval_every > 0 && step_ % config_.eval_every == 0);
    if (last || eval || step_ % config_.log_every == 0) {
      MetricRow row;
      row.step = step_;
      row.lr = lr;
      row.train_elbo = window_count_ > 0 ? window_sum_ / static_cast<double>(window_count_)
                                         : std::numeric_limits<double>::quiet_NaN();
      row.test_is = eval ? evaluate(config_.eval_samples) : std::numeric_limits<double>::quiet_NaN();
      window_sum_ = 0.0;
      window_count_ = 0;
      metrics_.push_back(row);
      if (csv) {
        write_metric_row(*csv, row);
        csv->flush();
      }
    }
  }
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckp) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, ckp.rng_tag);
  put_string(out, ckp.rng_state);
  put_string(out, ckp.config_text);
  put<std::uint64_t>(out, ckp.step);
  put<std::uint64_t>(out, ckp.skipped);
  put<std::uint64_t>(out, ckp.adam_t);
  put<std::uint64_t>(out, ckp.tensors.size());
  for (const auto& [name, t] : ckp.tensors) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put<std::uint64_t>(out, e);
    for (double v : t.values()) put<double>(out, v);
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw FormatError(path + " is not a checkpoint (bad magic bytes)");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckp;
  ckp.rng_tag = get_string(in, "rng tag");
  if (ckp.rng_tag != Rng::kAlgorithmTag) {
    throw FormatError("checkpoint RNG '" + ckp.rng_tag + "' does not match " + Rng::kAlgorithmTag);
  }
  ckp.rng_state = get_string(in, "rng state");
  ckp.config_text = get_string(in, "config");
  ckp.step = get<std::uint64_t>(in, "step");
  ckp.skipped = get<std::uint64_t>(in, "skipped steps");
  ckp.adam_t = get<std::uint64_t>(in, "adam step");
  const auto count = get<std::uint64_t>(in, "tensor count");
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = get_string(in, "tensor name");
    const auto rank = get<std::uint32_t>(in, "tensor rank");
    if (rank > 8) throw FormatError("implausible rank for tensor " + name);
    std::vector<std::size_t> shape(rank);
    std::uint64_t total = 1;
    for (auto& e : shape) {
      e = get<std::uint64_t>(in, "tensor extent");
      total *= e;
      if (total > (1ULL << 32)) throw FormatError("implausible size for tensor " + name);
    }
    Tensor t(shape);
    for (double& v : t.values()) v = get<double>(in, "tensor data");
    ckp.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in checkpoint");
  return ckp;
}

Checkpoint make_checkpoint(VFlowModel& model, const Trainer* trainer,
                           const std::string& config_text) {
  Checkpoint ckp;
  ckp.rng_tag = Rng::kAlgorithmTag;
  ckp.config_text = config_text;
  const ParamRegistry reg = model.registry();
  for (const auto& e : reg.entries()) ckp.tensors.emplace_back(e.name, *e.value);
  if (trainer) {
    ckp.rng_state = trainer->rng().serialize_state();
    ckp.step = trainer->step();
    ckp.skipped = trainer->skipped();
    const AdamState& adam = trainer->adam();
    ckp.adam_t = adam.t;
    for (std::size_t k = 0; k < reg.size(); ++k) {
      ckp.tensors.emplace_back("adam.m." + reg.entries()[k].name, adam.m[k]);
      ckp.tensors.emplace_back("adam.v." + reg.entries()[k].name, adam.v[k]);
    }
  }
  return ckp;
}

void apply_checkpoint(const Checkpoint& ckp, VFlowModel& model, Trainer* trainer) {
  const ParamRegistry reg = model.registry();
  const auto copy_into = [&](const std::string& name, Tensor& dst) {
    const Tensor* src = ckp.find(name);
    if (!src) throw FormatError("checkpoint is missing tensor " + name);
    if (!src->same_shape(dst)) {
      throw FormatError("shape mismatch for " + name + ": checkpoint " + src->shape_string() +
                        ", model " + dst.shape_string());
    }
    dst = *src;
  };
  for (const auto& e : reg.entries()) copy_into(e.name, *e.value);
  model.p.layers().mark_actnorms_initialized();
  if (model.q) model.q->layers().mark_actnorms_initialized();
  if (model.r) model.r->layers().mark_actnorms_initialized();
  if (!trainer) return;
  AdamState& adam = trainer->adam();
  adam.reset(reg);
  adam.t = ckp.adam_t;
  for (std::size_t k = 0; k < reg.size(); ++k) {
    copy_into("adam.m." + reg.entries()[k].name, adam.m[k]);
    copy_into("adam.v." + reg.entries()[k].name, adam.v[k]);
  }
  if (!ckp.rng_state.empty()) trainer->rng().restore_state(ckp.rng_state);
  trainer->restore(ckp.step, ckp.skipped);
}

}  // namespace vflow
