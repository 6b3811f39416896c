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

#include "endorecon/diffnum/adamw.hpp"

#include <cmath>

#include "endorecon/error.hpp"

namespace endorecon::diffnum {

void AdamW::update(std::size_t slot, Array& param, const Array& grad, double lr_multiplier) {
  if (param.size() != grad.size()) {
    fail(ErrorKind::kData, "AdamW: gradient " + shape_string(grad.shape()) + " does not match parameter " +
                               shape_string(param.shape()));
  }
  if (step_ == 0) fail(ErrorKind::kData, "AdamW: update() before begin_step()");
  if (moments_.size() <= slot) moments_.resize(slot + 1);
  Moments& mom = moments_[slot];
  if (mom.m.empty()) {
    mom.m.assign(param.size(), 0.0);
    mom.v.assign(param.size(), 0.0);
  }
  const double lr = options_.learning_rate * lr_multiplier;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  auto p = param.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double g = grad[i];
    mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * g;
    mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * g * g;
    const double mhat = mom.m[i] / c1;
    const double vhat = mom.v[i] / c2;
    p[i] -= lr * options_.weight_decay * p[i];
    p[i] -= lr * mhat / (std::sqrt(vhat) + options_.epsilon);
  }
}

}  // namespace endorecon::diffnum
