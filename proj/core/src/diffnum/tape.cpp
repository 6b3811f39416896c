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

#include "endorecon/diffnum/tape.hpp"

#include "endorecon/error.hpp"

namespace endorecon::diffnum {

namespace {
const Array& empty_array() {
  static const Array kEmpty(Shape{0}, {});
  return kEmpty;
}
}  // namespace

const Array& Var::value() const { return tape_->value(*this); }

const Array& Gradients::at(Var v) const {
  auto it = grads_.find(v.id());
  if (it == grads_.end()) fail(ErrorKind::kData, "no gradient recorded for node " + std::to_string(v.id()));
  return it->second;
}

Var Tape::constant(Array value) {
  nodes_.push_back(Node{std::move(value), false, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(Array value, bool trainable) {
  nodes_.push_back(Node{std::move(value), trainable, trainable, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Array value, std::initializer_list<Var> parents, Backward backward) {
  bool needs = false;
  for (Var p : parents) {
    if (&p.tape() != this) fail(ErrorKind::kData, "operands recorded on different tapes");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), needs, false, needs ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

Array& Tape::slot(std::vector<Array>& grads, std::size_t id, const Shape& shape) {
  Array& g = grads[id];
  if (g.size() == 0) g = Array::zeros(shape);
  return g;
}

void Tape::accumulate(std::vector<Array>& grads, std::size_t id, const Array& g) {
  Array& dst = grads[id];
  if (dst.size() == 0) {
    dst = g;
    return;
  }
  auto d = dst.values();
  auto s = g.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

Gradients Tape::backward(Var output) const {
  const Array& out = value(output);
  if (!out.is_scalar()) {
    fail(ErrorKind::kData, "backward() needs a scalar output, got shape " + shape_string(out.shape()));
  }
  std::vector<Array> grads(nodes_.size(), empty_array());
  grads[output.id()] = Array(out.shape(), {1.0});
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!node.requires_grad || grads[i].size() == 0) continue;
    if (node.backward) node.backward(*this, grads[i], grads);
  }
  Gradients result;
  for (std::size_t i = 0; i <= output.id(); ++i) {
    if (!nodes_[i].trainable) continue;
    result.grads_.emplace(i, grads[i].size() == 0 ? Array::zeros(nodes_[i].value.shape()) : std::move(grads[i]));
  }
  return result;
}

}  // namespace endorecon::diffnum
