// Copyright 2026 The endorecon Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace endorecon::diffnum {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major array of doubles. A value type; copies are deep.
class Array {
 public:
  Array() : shape_{1}, values_(1, 0.0) {}
  Array(Shape shape, std::vector<double> values);

  static Array zeros(Shape shape);
  static Array full(Shape shape, double value);
  static Array scalar(double value);
  static Array vector(std::vector<double> values);
  static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Array identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool is_scalar() const { return values_.size() == 1; }

  /// Leading dimension for 2-D arrays; the length for 1-D arrays.
  std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
  /// Trailing dimension for 2-D arrays; 1 for 1-D arrays.
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  const std::vector<double>& data() const { return values_; }

  double item() const;
  Array reshaped(Shape shape) const;
  bool all_finite() const;

  friend bool operator==(const Array& a, const Array& b) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

}  // namespace endorecon::diffnum
