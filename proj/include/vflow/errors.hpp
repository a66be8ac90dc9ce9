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

#ifndef VFLOW_ERRORS_HPP_
#define VFLOW_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace vflow {

// Shape or dimensionality disagreement between arguments.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values, singular matrices, divergent training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A value outside the image of a layer, or an inversion that failed to
// converge. `layer` is the index inside the owning flow when known.
class InversionError : public NumericError {
 public:
  explicit InversionError(const std::string& what, int layer = -1)
      : NumericError(what), layer_(layer) {}
  int layer() const { return layer_; }

 private:
  int layer_;
};

// Checkpoint and dataset file problems.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration problems. `line` is 1-based, 0 when unknown.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// A layer kind that a construction does not cover.
class UnsupportedError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace vflow

#endif  // VFLOW_ERRORS_HPP_
