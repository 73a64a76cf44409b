// Copyright 2026 The MTA Attack Authors
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

#include "mta/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>

#include "mta/errors.hpp"

namespace mta {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : data_(1, 0.0) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape_));
  }
  data_.assign(numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape_));
  }
  if (numel(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape_) + " does not hold " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape_) + " is not a scalar");
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin >= end || end > shape_[0]) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for " + shape_str(shape_));
  }
  const std::size_t row = data_.size() / shape_[0];
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                                                  data_.begin() + static_cast<std::ptrdiff_t>(end * row)));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> rows) const {
  if (shape_.empty() || rows.empty()) throw ShapeError("gather_rows: empty selection or rank-0 tensor");
  const std::size_t row = data_.size() / shape_[0];
  std::vector<double> out(rows.size() * row);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= shape_[0]) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " + shape_str(shape_));
    }
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(rows[i] * row), row,
                out.begin() + static_cast<std::ptrdiff_t>(i * row));
  }
  Shape s = shape_;
  s[0] = rows.size();
  return Tensor(std::move(s), std::move(out));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::uint64_t checksum(const Tensor& t, std::uint64_t seed) {
  std::uint64_t h = seed;
  auto mix = [&h](const unsigned char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (auto d : t.shape()) {
    const std::uint64_t v = d;
    mix(reinterpret_cast<const unsigned char*>(&v), sizeof v);
  }
  mix(reinterpret_cast<const unsigned char*>(t.values().data()), t.size() * sizeof(double));
  return h;
}

}  // namespace mta
