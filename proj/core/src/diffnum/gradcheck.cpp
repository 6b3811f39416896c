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

#include "endorecon/diffnum/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace endorecon::diffnum {

namespace {

bool is_trainable(const std::vector<bool>& trainable, std::size_t i) { return trainable.empty() || trainable[i]; }

double evaluate(const Expression& expr, std::span<const Array> inputs, const std::vector<bool>& trainable) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) leaves.push_back(tape.input(inputs[i], is_trainable(trainable, i)));
  return expr(tape, leaves).value().item();
}

}  // namespace

std::vector<Array> evaluate_gradients(const Expression& expr, std::span<const Array> inputs,
                                      const std::vector<bool>& trainable, double* value_out) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) leaves.push_back(tape.input(inputs[i], is_trainable(trainable, i)));
  Var out = expr(tape, leaves);
  if (value_out) *value_out = out.value().item();
  Gradients grads = tape.backward(out);
  std::vector<Array> result;
  result.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    result.push_back(grads.contains(leaves[i]) ? grads.at(leaves[i]) : Array::zeros(inputs[i].shape()));
  }
  return result;
}

GradCheckResult finite_diff_check(const Expression& expr, std::span<const Array> inputs,
                                  const std::vector<bool>& trainable, double eps) {
  GradCheckResult result;
  const std::vector<Array> analytic = evaluate_gradients(expr, inputs, trainable, nullptr);
  std::vector<Array> work(inputs.begin(), inputs.end());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!is_trainable(trainable, i)) continue;
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double orig = work[i][j];
      work[i][j] = orig + eps;
      const double fp = evaluate(expr, work, trainable);
      work[i][j] = orig - eps;
      const double fm = evaluate(expr, work, trainable);
      work[i][j] = orig;
      const double fd = (fp - fm) / (2.0 * eps);
      const double ad = analytic[i][j];
      ++result.entries_checked;
      if (!std::isfinite(fd) || !std::isfinite(ad)) {
        if (result.finite) {
          std::ostringstream os;
          os << "non-finite gradient at input " << i << " index " << j << " (ad=" << ad << ", fd=" << fd << ")";
          result.message = os.str();
          result.worst_input = i;
          result.worst_index = j;
        }
        result.finite = false;
        continue;
      }
      const double err = std::abs(ad - fd) / std::max(1.0, std::abs(fd));
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = i;
        result.worst_index = j;
      }
    }
  }
  return result;
}

}  // namespace endorecon::diffnum
