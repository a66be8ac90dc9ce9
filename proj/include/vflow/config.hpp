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

#ifndef VFLOW_CONFIG_HPP_
#define VFLOW_CONFIG_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vflow/architecture.hpp"
#include "vflow/data.hpp"
#include "vflow/objective.hpp"
#include "vflow/train.hpp"

namespace vflow {

enum class DatasetKind { kCheckerboard, kQuantizedCheckerboard };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::kCheckerboard;
  CheckerboardSpec board;
  std::size_t levels = 8;  // quantized only

  QuantizedSpec quantized() const { return QuantizedSpec{levels, board}; }
};

// Settings for check-theory. The base is either read from a checkpoint or
// built from the model section (D_Z must then be 0) and trained for
// `train_iterations` steps with the train section.
struct TheoryConfig {
  std::optional<std::string> base_checkpoint;
  std::uint64_t train_iterations = 0;
  std::vector<std::size_t> d_z{1, 2, 8};
  std::size_t points = 100;
};

struct RunConfig {
  ArchitectureSpec model;
  DatasetConfig data;
  TrainConfig train;
  ImportanceConfig importance;
  std::string output_dir = "runs/default";
  std::optional<TheoryConfig> theory;
};

// Parses and fully validates a YAML document. Unknown keys, wrong types and
// out-of-range values throw ConfigError carrying the 1-based line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Train/test tensors for the configured dataset (bins for the quantized one).
std::pair<Tensor, Tensor> load_dataset(const DatasetConfig& data);

}  // namespace vflow

#endif  // VFLOW_CONFIG_HPP_
