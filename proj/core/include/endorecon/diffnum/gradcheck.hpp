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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "endorecon/diffnum/tape.hpp"

namespace endorecon::diffnum {

/// Builds a scalar expression on `tape` from leaves created for each input.
using Expression = std::function<Var(Tape& tape, std::span<const Var> inputs)>;

struct GradCheckResult {
  /// max |g_ad - g_fd| / max(1, |g_fd|) over every checked entry.
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
  /// False when either gradient produced a NaN/Inf; `message` names the entry.
  bool finite = true;
  std::string message;

  bool passed(double tolerance) const { return finite && max_rel_error < tolerance; }
};

/// Compares reverse-mode gradients with central differences. Inputs whose
/// `trainable` flag is false are created as frozen leaves and skipped. An empty
/// `trainable` list means every input is trainable.
GradCheckResult finite_diff_check(const Expression& expr, std::span<const Array> inputs,
                                  const std::vector<bool>& trainable = {}, double eps = 1e-5);

/// Evaluates `expr` once and returns the reverse-mode gradient of every input
/// (zeros for frozen inputs).
std::vector<Array> evaluate_gradients(const Expression& expr, std::span<const Array> inputs,
                                      const std::vector<bool>& trainable, double* value_out = nullptr);

}  // namespace endorecon::diffnum
