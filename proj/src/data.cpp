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

#include "vflow/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <istream>
#include <ostream>
#include <string>

namespace vflow {

namespace {

double overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

}  // namespace

void CheckerboardSpec::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw std::invalid_argument("scale must be > 0");
  if (n_train == 0 || n_test == 0) throw std::invalid_argument("split sizes must be >= 1");
}

double CheckerboardSpec::log_density() const { return -std::log(8.0 * scale * scale); }

void QuantizedSpec::validate() const {
  if (levels < 2) throw std::invalid_argument("quantization needs levels >= 2");
  board.validate();
}

Tensor sample_checkerboard(const CheckerboardSpec& spec, std::size_t n, Rng& rng) {
  spec.validate();
  Tensor out = Tensor::Matrix(n, 2);
  for (std::size_t r = 0; r < n; ++r) {
    const double x1 = rng.uniform(-2.0, 2.0);
    const double k = static_cast<double>(rng.index(2));
    const double parity = std::fmod(std::floor(x1), 2.0);
    const double x2 = rng.uniform() - 2.0 * k + (parity < 0 ? parity + 2.0 : parity);
    out(r, 0) = x1 * spec.scale;
    out(r, 1) = x2 * spec.scale;
  }
  return out;
}

bool on_black_cell(double x0, double x1, double scale) {
  const double c0 = std::floor(x0 / scale), c1 = std::floor(x1 / scale);
  if (std::abs(x0) > 2 * scale || std::abs(x1) > 2 * scale) return false;
  return std::fmod(std::abs(c0 + c1), 2.0) == 0.0;
}

Tensor quantize(const Tensor& x, const QuantizedSpec& spec) {
  spec.validate();
  const double lo = -2.0 * spec.board.scale, hi = 2.0 * spec.board.scale;
  const double width = (hi - lo) / static_cast<double>(spec.levels);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    if (!(v >= lo && v <= hi)) {
      throw DimensionError("value " + std::to_string(v) + " outside the quantization range");
    }
    const auto bin = static_cast<std::size_t>(std::floor((v - lo) / width));
    out[i] = static_cast<double>(std::min(bin, spec.levels - 1));
  }
  return out;
}

double quantized_log_prob(std::size_t b0, std::size_t b1, const QuantizedSpec& spec) {
  spec.validate();
  if (b0 >= spec.levels || b1 >= spec.levels) throw DimensionError("bin index out of range");
  const double s = spec.board.scale;
  const double lo = -2.0 * s;
  const double width = 4.0 * s / static_cast<double>(spec.levels);
  const double a0 = lo + width * static_cast<double>(b0);
  const double a1 = lo + width * static_cast<double>(b1);
  double area = 0.0;
  for (int i = -2; i < 2; ++i) {
    for (int j = -2; j < 2; ++j) {
      if ((i + j) % 2 != 0) continue;
      area += overlap(a0, a0 + width, i * s, (i + 1) * s) * overlap(a1, a1 + width, j * s, (j + 1) * s);
    }
  }
  if (area <= 0.0) return -std::numeric_limits<double>::infinity();
  return std::log(area) + spec.board.log_density();
}

std::pair<Tensor, Tensor> make_splits(const CheckerboardSpec& spec) {
  spec.validate();
  Rng root(spec.seed);
  Rng train_rng = root.fork(1);
  Rng test_rng = root.fork(2);
  Tensor train = sample_checkerboard(spec, spec.n_train, train_rng);
  Tensor test = sample_checkerboard(spec, spec.n_test, test_rng);
  return {std::move(train), std::move(test)};
}

void write_csv_value(std::ostream& out, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  out.write(buf, res.ptr - buf);
}

void write_csv(std::ostream& out, const Tensor& x, bool integer) {
  for (std::size_t j = 0; j < x.cols(); ++j) out << (j ? ",x" : "x") << j;
  out << '\n';
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (j) out << ',';
      if (integer) {
        out << static_cast<long long>(x(r, j));
      } else {
        write_csv_value(out, x(r, j));
      }
    }
    out << '\n';
  }
}

Tensor read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV input");
  const std::size_t width = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  std::vector<double> values;
  std::size_t rows = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t cols = 0;
    const char* p = line.data();
    const char* end = p + line.size();
    while (true) {
      double v = 0.0;
      const auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc()) throw FormatError("line " + std::to_string(lineno) + ": not a number");
      values.push_back(v);
      ++cols;
      p = res.ptr;
      if (p == end) break;
      if (*p != ',') throw FormatError("line " + std::to_string(lineno) + ": expected ','");
      ++p;
    }
    if (cols != width) {
      throw FormatError("line " + std::to_string(lineno) + ": expected " + std::to_string(width) +
                        " fields, got " + std::to_string(cols));
    }
    ++rows;
  }
  Tensor out = Tensor::Matrix(rows, width);
  std::copy(values.begin(), values.end(), out.values().begin());
  return out;
}

}  // namespace vflow
