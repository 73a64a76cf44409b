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

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mta {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. A rank-0 shape holds a single scalar.
//
// Tensor is a plain value; gradient bookkeeping lives in Var (autograd.hpp).
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(double value) { return Tensor(Shape{}, value); }
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Scalar value; requires size() == 1.
  double item() const;

  Tensor reshaped(Shape shape) const;

  // Rows [begin, end) along axis 0.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  // Rows along axis 0 selected by index, in the given order.
  Tensor gather_rows(std::span<const std::size_t> rows) const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Largest |a - b| over all elements; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

// FNV-1a over shape and raw bytes. Used to prove tensors were not mutated.
std::uint64_t checksum(const Tensor& t, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace mta
