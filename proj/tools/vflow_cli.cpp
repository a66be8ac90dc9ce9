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

// Command-line front end: train, eval, grid, sample, data-dump, check-theory.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vflow/architecture.hpp"
#include "vflow/config.hpp"
#include "vflow/data.hpp"
#include "vflow/errors.hpp"
#include "vflow/objective.hpp"
#include "vflow/theory.hpp"
#include "vflow/train.hpp"

namespace fs = std::filesystem;
using namespace vflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& seed) {
  if (seed) return *seed;
  std::random_device rd;
  const std::uint64_t s = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  std::cerr << "seed: " << s << "\n";
  return s;
}

// Opens `dir/name` for writing, creating `dir`; an empty dir means stdout.
class Output {
 public:
  Output(const std::string& dir, const std::string& name) {
    if (dir.empty()) return;
    fs::create_directories(dir);
    path_ = (fs::path(dir) / name).string();
    file_.open(path_);
    if (!file_) throw std::runtime_error("cannot open " + path_ + " for writing");
  }
  std::ostream& stream() { return path_.empty() ? std::cout : file_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream file_;
};

struct LoadedModel {
  RunConfig config;
  VFlowModel model;
};

LoadedModel load_model(const std::string& checkpoint) {
  const Checkpoint ckp = load_checkpoint(checkpoint);
  RunConfig cfg = parse_config(ckp.config_text);
  Rng init(0);
  VFlowModel model = build_model(cfg.model, init);
  apply_checkpoint(ckp, model, nullptr);
  return {std::move(cfg), std::move(model)};
}

std::size_t samples_or_default(std::size_t flag, const RunConfig& cfg) {
  return flag > 0 ? flag : cfg.importance.samples;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed_flag,
              const std::string& out_flag) {
  // Parse everything before touching the filesystem.
  const std::string text = read_text(config_path);
  RunConfig cfg = parse_config(text);
  const std::uint64_t seed = resolve_seed(seed_flag);
  cfg.train.seed = seed;
  const std::string dir = out_flag.empty() ? cfg.output_dir : out_flag;

  const auto [train, test] = load_dataset(cfg.data);
  Rng init(seed);
  VFlowModel model = build_model(cfg.model, init);
  Trainer trainer(model, train, test, cfg.train);

  Output metrics(dir, "metrics.csv");
  write_metrics_header(metrics.stream());
  trainer.run(&metrics.stream());
  const std::string ckp = (fs::path(dir) / "final.ckp").string();
  save_checkpoint(ckp, make_checkpoint(model, &trainer, text));

  const double ll = trainer.metrics().back().test_is;
  std::cout << "final test IS(" << cfg.importance.samples << ") log-likelihood: " << ll << " nats";
  if (cfg.train.objective == Objective::kDiscrete) {
    std::cout << " (" << bits_per_dim(ll, cfg.model.d_x) << " bits/dim)";
  }
  std::cout << "\nskipped steps: " << trainer.skipped() << "\ncheckpoint: " << ckp << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& split, const std::string& data_path,
             std::size_t samples_flag, std::optional<std::uint64_t> seed_flag, const std::string& out) {
  LoadedModel lm = load_model(checkpoint);
  Tensor x;
  if (!data_path.empty()) {
    std::ifstream in(data_path);
    if (!in) throw FormatError("cannot read " + data_path);
    x = read_csv(in);
  } else {
    auto [train, test] = load_dataset(lm.config.data);
    x = split == "train" ? std::move(train) : std::move(test);
  }
  if (x.cols() != lm.model.d_x) {
    throw DimensionError("data has " + std::to_string(x.cols()) + " columns but the model expects D_X = " +
                         std::to_string(lm.model.d_x));
  }
  ImportanceConfig icfg = lm.config.importance;
  icfg.samples = samples_or_default(samples_flag, lm.config);
  Rng rng(resolve_seed(seed_flag));
  const std::vector<double> ll = importance_log_likelihood(lm.model, x, icfg, rng);
  for (double v : ll) {
    if (!std::isfinite(v)) throw NumericError("non-finite log-likelihood estimate");
  }
  const double n = static_cast<double>(ll.size());
  const double mean = std::accumulate(ll.begin(), ll.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : ll) ss += (v - mean) * (v - mean);
  const double se = ll.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;

  std::cout << "points: " << ll.size() << "\nsamples: " << icfg.samples << "\nmean IS log-likelihood: " << mean
            << " nats (se " << se << ")\n";
  if (lm.model.r) std::cout << "bits/dim: " << bits_per_dim(mean, lm.model.d_x) << "\n";
  if (!out.empty()) {
    Output csv(out, "eval.csv");
    csv.stream() << "index,loglik\n";
    for (std::size_t i = 0; i < ll.size(); ++i) {
      csv.stream() << i << ',';
      write_csv_value(csv.stream(), ll[i]);
      csv.stream() << '\n';
    }
  }
  return kExitOk;
}

int cmd_grid(const std::string& checkpoint, const std::vector<double>& bounds, std::size_t resolution,
             std::size_t samples_flag, std::optional<std::uint64_t> seed_flag, const std::string& out) {
  LoadedModel lm = load_model(checkpoint);
  if (lm.model.d_x != 2) throw DimensionError("grid needs a model with D_X = 2");
  if (lm.model.r) throw DimensionError("grid is defined for continuous models only");
  if (bounds.size() != 4 || !(bounds[0] < bounds[1]) || !(bounds[2] < bounds[3])) {
    throw ConfigError("--bounds expects x0min,x0max,x1min,x1max with min < max");
  }
  if (resolution == 0) throw ConfigError("--resolution must be positive");
  const double h0 = (bounds[1] - bounds[0]) / static_cast<double>(resolution);
  const double h1 = (bounds[3] - bounds[2]) / static_cast<double>(resolution);
  Tensor pts = Tensor::Matrix(resolution * resolution, 2);
  for (std::size_t i = 0; i < resolution; ++i) {
    for (std::size_t j = 0; j < resolution; ++j) {
      pts(i * resolution + j, 0) = bounds[0] + (static_cast<double>(i) + 0.5) * h0;
      pts(i * resolution + j, 1) = bounds[2] + (static_cast<double>(j) + 0.5) * h1;
    }
  }
  ImportanceConfig icfg = lm.config.importance;
  icfg.samples = samples_or_default(samples_flag, lm.config);
  Rng rng(resolve_seed(seed_flag));
  const std::vector<double> lp = importance_log_likelihood(lm.model, pts, icfg, rng);

  Output csv(out, "grid.csv");
  csv.stream() << "x0,x1,logp\n";
  double mass = 0.0;
  for (std::size_t k = 0; k < lp.size(); ++k) {
    write_csv_value(csv.stream(), pts(k, 0));
    csv.stream() << ',';
    write_csv_value(csv.stream(), pts(k, 1));
    csv.stream() << ',';
    write_csv_value(csv.stream(), lp[k]);
    csv.stream() << '\n';
    mass += std::exp(lp[k]) * h0 * h1;
  }
  std::cerr << "grid mass: " << mass << "\n";
  return kExitOk;
}

int cmd_sample(const std::string& checkpoint, std::size_t n, std::optional<std::uint64_t> seed_flag,
               const std::string& out) {
  if (n == 0) throw ConfigError("-n must be at least 1");
  LoadedModel lm = load_model(checkpoint);
  Rng rng(resolve_seed(seed_flag));
  // Sampling [x | z] and dropping z marginalizes it.
  Tensor x = take_cols(flow_sample(lm.model.p, rng, n), 0, lm.model.d_x);
  const bool discrete = lm.model.r.has_value();
  if (discrete) {
    // The dequantized flow lives on x + u; the integer part is the bin.
    for (double& v : x.values()) v = std::floor(v);
  }
  Output csv(out, "samples.csv");
  write_csv(csv.stream(), x, discrete);
  return kExitOk;
}

int cmd_data_dump(const std::string& config_path, const std::string& split, const std::string& out) {
  const RunConfig cfg = load_config(config_path);
  const auto [train, test] = load_dataset(cfg.data);
  const bool integer = cfg.data.kind == DatasetKind::kQuantizedCheckerboard;
  if (split == "train" || split == "both") {
    Output csv(out, "train.csv");
    write_csv(csv.stream(), train, integer);
  }
  if (split == "test" || split == "both") {
    Output csv(out, "test.csv");
    write_csv(csv.stream(), test, integer);
  }
  return kExitOk;
}

int cmd_check_theory(const std::string& config_path, std::optional<std::uint64_t> seed_flag) {
  RunConfig cfg = load_config(config_path);
  const TheoryConfig th = cfg.theory.value_or(TheoryConfig{});
  const std::uint64_t seed = resolve_seed(seed_flag);

  std::optional<VFlowModel> base_model;
  if (th.base_checkpoint) {
    LoadedModel lm = load_model(*th.base_checkpoint);
    base_model.emplace(std::move(lm.model));
  } else {
    Rng init(seed);
    base_model.emplace(build_model(cfg.model, init));
    if (th.train_iterations > 0) {
      const auto [train, test] = load_dataset(cfg.data);
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      tc.iterations = th.train_iterations;
      tc.eval_every = 0;
      tc.log_every = std::min<std::uint64_t>(tc.log_every, th.train_iterations);
      Trainer trainer(*base_model, train, test, tc);
      trainer.run();
      std::cout << "trained base for " << th.train_iterations << " steps, test IS log-likelihood "
                << trainer.metrics().back().test_is << "\n";
    }
  }
  if (base_model->d_z != 0 || base_model->r) {
    throw ConfigError("check-theory needs a plain flow base (d_z = 0, no dequantization)");
  }

  Rng rng = Rng(seed).fork(7);
  bool ok = true;
  for (std::size_t dz : th.d_z) {
    const EmbeddingReport rep = verify_theorem1(base_model->p, dz, th.points, rng);
    std::cout << rep.summary() << "\n";
    ok = ok && rep.passed(1e-9);
  }
  std::cout << (ok ? "PASS" : "FAIL") << ": all discrepancies below 1e-9\n";
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational flow models on toy data"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::string out, config, checkpoint, split = "test", data_path;
  std::size_t samples = 0, resolution = 100, n = 1000;
  std::vector<double> bounds{-10.0, 10.0, -10.0, 10.0};

  auto* train = app.add_subcommand("train", "Train a model from a YAML config");
  train->add_option("config", config, "YAML config")->required();
  train->add_option("--seed", seed, "RNG seed (derived from entropy if omitted)");
  train->add_option("--out", out, "Output directory (overrides output.dir)");

  auto* eval = app.add_subcommand("eval", "Importance-sampled log-likelihood of a checkpoint");
  eval->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--split", split, "Dataset split from the checkpoint config")
      ->check(CLI::IsMember({"train", "test"}));
  eval->add_option("--data", data_path, "CSV file to evaluate instead of a split");
  eval->add_option("--samples,-S", samples, "Importance samples per point");
  eval->add_option("--seed", seed, "RNG seed");
  eval->add_option("--out", out, "Directory for per-point eval.csv");

  auto* grid = app.add_subcommand("grid", "Log-density on a regular 2-D grid");
  grid->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
  grid->add_option("--bounds", bounds, "x0min,x0max,x1min,x1max")->delimiter(',')->expected(4);
  grid->add_option("--resolution", resolution, "Cells per axis");
  grid->add_option("--samples,-S", samples, "Importance samples per point");
  grid->add_option("--seed", seed, "RNG seed");
  grid->add_option("--out", out, "Directory for grid.csv (stdout if omitted)");

  auto* sample = app.add_subcommand("sample", "Draw samples of x");
  sample->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
  sample->add_option("-n", n, "Number of samples");
  sample->add_option("--seed", seed, "RNG seed");
  sample->add_option("--out", out, "Directory for samples.csv (stdout if omitted)");

  auto* dump = app.add_subcommand("data-dump", "Write the configured dataset as CSV");
  dump->add_option("config", config, "YAML config")->required();
  dump->add_option("--split", split, "train, test or both")->check(CLI::IsMember({"train", "test", "both"}));
  dump->add_option("--out", out, "Output directory (stdout if omitted)");

  auto* theory = app.add_subcommand("check-theory", "Verify the embedding equalities for a base flow");
  theory->add_option("config", config, "YAML config with a theory section")->required();
  theory->add_option("--seed", seed, "RNG seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(config, seed, out);
    if (*eval) return cmd_eval(checkpoint, split, data_path, samples, seed, out);
    if (*grid) return cmd_grid(checkpoint, bounds, resolution, samples, seed, out);
    if (*sample) return cmd_sample(checkpoint, n, seed, out);
    if (*dump) return cmd_data_dump(config, split, out);
    if (*theory) return cmd_check_theory(config, seed);
  } catch (const InversionError& e) {
    std::cerr << "numeric error: " << e.what();
    if (e.layer() >= 0) std::cerr << " (layer " << e.layer() << ")";
    std::cerr << "\n";
    return kExitNumeric;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
