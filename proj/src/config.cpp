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

#include "vflow/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "vflow/errors.hpp"

namespace vflow {
namespace {

int line_of(const YAML::Node& node) {
  const YAML::Mark m = node.Mark();
  return m.line >= 0 ? m.line + 1 : 0;
}

// A mapping whose keys must all be consumed by the reader. Keys are checked
// eagerly against the allowed set so that typos fail before anything runs.
class Section {
 public:
  Section(const YAML::Node& node, std::string name, std::set<std::string> allowed)
      : node_(node), name_(std::move(name)) {
    if (!node_.IsMap()) throw ConfigError("'" + name_ + "' must be a mapping", line_of(node_));
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!allowed.count(key)) {
        throw ConfigError("unknown key '" + key + "' in " + name_, line_of(kv.first));
      }
    }
  }

  bool has(const std::string& key) const { return static_cast<bool>(node_[key]); }
  YAML::Node node(const std::string& key) const { return node_[key]; }
  int line() const { return line_of(node_); }

  template <class T>
  void read(const std::string& key, T& out) const {
    const YAML::Node v = node_[key];
    if (!v) return;
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError("bad value for " + name_ + "." + key, line_of(v));
    }
  }

  // Non-negative integers; yaml-cpp happily wraps "-1" into a size_t.
  template <class T>
  void read_count(const std::string& key, T& out) const {
    const YAML::Node v = node_[key];
    if (!v) return;
    long long raw = 0;
    try {
      raw = v.as<long long>();
    } catch (const YAML::Exception&) {
      throw ConfigError(name_ + "." + key + " must be an integer", line_of(v));
    }
    if (raw < 0) throw ConfigError(name_ + "." + key + " must be >= 0", line_of(v));
    out = static_cast<T>(raw);
  }

 private:
  YAML::Node node_;
  std::string name_;
};

// Runs a validate() member and re-anchors its complaint at the section.
template <class F>
void checked(F&& f, int line) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), line);
  }
}

void parse_model(const Section& s, ArchitectureSpec& m) {
  s.read_count("d_x", m.d_x);
  s.read_count("d_z", m.d_z);
  s.read_count("p_steps", m.p_steps);
  s.read_count("q_steps", m.q_steps);
  s.read_count("hidden_units", m.hidden_units);
  s.read_count("hidden_layers", m.hidden_layers);
  if (s.has("coupling")) {
    std::string kind;
    s.read("coupling", kind);
    checked([&] { m.coupling = parse_coupling_kind(kind); }, line_of(s.node("coupling")));
  }
  s.read_count("components", m.components);
  s.read("clamp_scale", m.clamp_scale);
  s.read("dequantize", m.dequantize);
  s.read_count("r_steps", m.r_steps);
  checked([&] { m.validate(); }, s.line());
}

void parse_data(const Section& s, DatasetConfig& d) {
  if (s.has("kind")) {
    std::string kind;
    s.read("kind", kind);
    if (kind == "checkerboard") {
      d.kind = DatasetKind::kCheckerboard;
    } else if (kind == "quantized_checkerboard") {
      d.kind = DatasetKind::kQuantizedCheckerboard;
    } else {
      throw ConfigError("unknown dataset kind '" + kind + "'", line_of(s.node("kind")));
    }
  }
  s.read("scale", d.board.scale);
  s.read_count("n_train", d.board.n_train);
  s.read_count("n_test", d.board.n_test);
  s.read_count("seed", d.board.seed);
  s.read_count("levels", d.levels);
  checked([&] { d.board.validate(); }, s.line());
  if (d.levels < 2) throw ConfigError("data.levels must be at least 2", s.line());
}

void parse_schedule(const Section& s, LrSchedule& lr) {
  if (s.has("kind")) {
    std::string kind;
    s.read("kind", kind);
    if (kind == "constant") {
      lr.kind = LrSchedule::Kind::kConstant;
    } else if (kind == "warmup_decay") {
      lr.kind = LrSchedule::Kind::kWarmupDecay;
    } else {
      throw ConfigError("unknown schedule kind '" + kind + "'", line_of(s.node("kind")));
    }
  }
  s.read("lr", lr.constant);
  s.read_count("warmup_steps", lr.warmup_steps);
  s.read("peak", lr.peak);
  s.read("decay_rate", lr.decay_rate);
  s.read_count("decay_start", lr.decay_start);
  s.read("floor", lr.floor);
}

void parse_train(const Section& s, TrainConfig& t) {
  s.read_count("batch_size", t.batch_size);
  s.read_count("iterations", t.iterations);
  s.read_count("eval_every", t.eval_every);
  s.read_count("log_every", t.log_every);
  s.read("clip_norm", t.clip_norm);
  s.read("max_skip_fraction", t.max_skip_fraction);
  if (s.has("schedule")) {
    parse_schedule(Section(s.node("schedule"), "train.schedule",
                           {"kind", "lr", "warmup_steps", "peak", "decay_rate", "decay_start", "floor"}),
                   t.schedule);
  }
  checked([&] { t.validate(); }, s.line());
}

void parse_theory(const Section& s, TheoryConfig& th) {
  if (s.has("base_checkpoint")) {
    std::string path;
    s.read("base_checkpoint", path);
    th.base_checkpoint = path;
  }
  s.read_count("train_iterations", th.train_iterations);
  if (s.has("d_z")) {
    const YAML::Node list = s.node("d_z");
    if (!list.IsSequence() || list.size() == 0) {
      throw ConfigError("theory.d_z must be a non-empty list", line_of(list));
    }
    th.d_z.clear();
    for (const auto& v : list) {
      long long dz = 0;
      try {
        dz = v.as<long long>();
      } catch (const YAML::Exception&) {
        throw ConfigError("theory.d_z entries must be integers", line_of(v));
      }
      if (dz < 1) throw ConfigError("theory.d_z entries must be >= 1", line_of(v));
      th.d_z.push_back(static_cast<std::size_t>(dz));
    }
  }
  s.read_count("points", th.points);
  if (th.points == 0) throw ConfigError("theory.points must be positive", s.line());
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(e.msg, e.mark.line >= 0 ? e.mark.line + 1 : 0);
  }
  if (!root || root.IsNull()) throw ConfigError("empty configuration");
  const Section top(root, "configuration", {"model", "data", "train", "importance", "output", "theory"});

  RunConfig cfg;
  if (top.has("model")) {
    parse_model(Section(top.node("model"), "model",
                        {"d_x", "d_z", "p_steps", "q_steps", "hidden_units", "hidden_layers", "coupling",
                         "components", "clamp_scale", "dequantize", "r_steps"}),
                cfg.model);
  }
  if (top.has("data")) {
    parse_data(Section(top.node("data"), "data", {"kind", "scale", "n_train", "n_test", "seed", "levels"}),
               cfg.data);
  }
  if (top.has("train")) {
    parse_train(Section(top.node("train"), "train",
                        {"batch_size", "iterations", "eval_every", "log_every", "clip_norm",
                         "max_skip_fraction", "schedule"}),
                cfg.train);
  }
  if (top.has("importance")) {
    const Section s(top.node("importance"), "importance", {"samples", "max_batch_rows"});
    s.read_count("samples", cfg.importance.samples);
    s.read_count("max_batch_rows", cfg.importance.max_batch_rows);
    if (cfg.importance.samples == 0 || cfg.importance.max_batch_rows == 0) {
      throw ConfigError("importance settings must be positive", s.line());
    }
  }
  if (top.has("output")) {
    const Section s(top.node("output"), "output", {"dir"});
    s.read("dir", cfg.output_dir);
    if (cfg.output_dir.empty()) throw ConfigError("output.dir must not be empty", s.line());
  }
  if (top.has("theory")) {
    cfg.theory.emplace();
    parse_theory(Section(top.node("theory"), "theory", {"base_checkpoint", "train_iterations", "d_z", "points"}),
                 *cfg.theory);
  }

  // Cross-section consistency.
  const bool quantized = cfg.data.kind == DatasetKind::kQuantizedCheckerboard;
  if (cfg.model.d_x != 2) throw ConfigError("model.d_x must be 2 for the checkerboard data", top.line());
  if (quantized != cfg.model.dequantize) {
    throw ConfigError("model.dequantize must be true exactly when data.kind is quantized_checkerboard",
                      top.line());
  }
  cfg.train.objective = quantized ? Objective::kDiscrete : Objective::kElbo;
  cfg.train.eval_samples = cfg.importance.samples;
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::pair<Tensor, Tensor> load_dataset(const DatasetConfig& data) {
  auto [train, test] = make_splits(data.board);
  if (data.kind == DatasetKind::kQuantizedCheckerboard) {
    const QuantizedSpec q = data.quantized();
    return {quantize(train, q), quantize(test, q)};
  }
  return {std::move(train), std::move(test)};
}

}  // namespace vflow
