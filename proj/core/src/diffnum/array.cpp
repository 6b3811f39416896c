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

#include "endorecon/diffnum/array.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "endorecon/error.hpp"

namespace endorecon::diffnum {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Array::Array(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size()) {
    fail(ErrorKind::kData, "array shape " + shape_string(shape_) + " does not hold " +
                               std::to_string(values_.size()) + " values");
  }
}

Array Array::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Array Array::full(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return Array(std::move(shape), std::vector<double>(n, value));
}

Array Array::scalar(double value) { return Array({1}, {value}); }

Array Array::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Array({n}, std::move(values));
}

Array Array::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Array({rows, cols}, std::move(values));
}

Array Array::identity(std::size_t n) {
  Array out = zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) out.at(i, i) = 1.0;
  return out;
}

double Array::item() const {
  if (values_.size() != 1) fail(ErrorKind::kData, "item() on array of shape " + shape_string(shape_));
  return values_[0];
}

Array Array::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size()) {
    fail(ErrorKind::kData, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Array(std::move(shape), values_);
}

bool Array::all_finite() const {
  for (double v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace endorecon::diffnum
