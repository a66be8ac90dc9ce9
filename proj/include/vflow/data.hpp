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

#ifndef VFLOW_DATA_HPP_
#define VFLOW_DATA_HPP_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <utility>

#include "vflow/numerics.hpp"

namespace vflow {

// Uniform density over the black cells of a 4x4 board on [-2, 2]², scaled by
// `scale`. At the default scale the support is a union of 2x2 squares with
// total area 32 inside [-4, 4]².
struct CheckerboardSpec {
  double scale = 2.0;
  std::size_t n_train = 100000;
  std::size_t n_test = 1000;
  std::uint64_t seed = 0;

  void validate() const;
  // Exact log-density on the support: -log(8 * 4 * scale² / 4).
  double log_density() const;
};

struct QuantizedSpec {
  std::size_t levels = 8;
  CheckerboardSpec board;

  void validate() const;
};

Tensor sample_checkerboard(const CheckerboardSpec& spec, std::size_t n, Rng& rng);

// True when (x0, x1) lies on a black cell: ⌊x0/s⌋ + ⌊x1/s⌋ even.
bool on_black_cell(double x0, double x1, double scale = 2.0);

// Bin indices of x over [-2·scale, 2·scale] in `levels` equal bins per
// coordinate. Throws DimensionError for out-of-range input.
Tensor quantize(const Tensor& x, const QuantizedSpec& spec);

// Exact per-point log probability of the quantized checkerboard at a bin pair,
// computed by integrating the continuous density over the bin. -inf outside
// the support.
double quantized_log_prob(std::size_t b0, std::size_t b1, const QuantizedSpec& spec);

// Independent train and test draws from streams forked off spec.seed.
std::pair<Tensor, Tensor> make_splits(const CheckerboardSpec& spec);

// Shortest representation that parses back to the same double.
void write_csv_value(std::ostream& out, double v);

// Writes `x` as CSV with header x0,x1,... Integer-valued tensors are written
// without a fractional part.
void write_csv(std::ostream& out, const Tensor& x, bool integer = false);

// Reads a numeric CSV with one header line. Every row must have the header's
// width. Throws FormatError with the offending line number.
Tensor read_csv(std::istream& in);

}  // namespace vflow

#endif  // VFLOW_DATA_HPP_
