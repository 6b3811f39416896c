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
#include <vector>

#include "endorecon/diffnum/array.hpp"

namespace endorecon::diffnum {

struct AdamWOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. Moment buffers are keyed by slot index so
/// callers can keep their own parameter layout.
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  /// Advances the shared step counter; call once before the updates of a step.
  void begin_step() { ++step_; }
  void update(std::size_t slot, Array& param, const Array& grad, double lr_multiplier = 1.0);
  /// Multiplies the base learning rate (used for step halving on numeric failure).
  void scale_learning_rate(double factor) { options_.learning_rate *= factor; }

  std::size_t step() const { return step_; }
  const AdamWOptions& options() const { return options_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };

  AdamWOptions options_;
  std::size_t step_ = 0;
  std::vector<Moments> moments_;
};

}  // namespace endorecon::diffnum
