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
#include <map>
#include <vector>

#include "endorecon/diffnum/array.hpp"

namespace endorecon::diffnum {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of a scalar output with respect to the trainable inputs of a tape.
class Gradients {
 public:
  bool contains(Var v) const { return grads_.count(v.id()) != 0; }
  const Array& at(Var v) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::map<std::size_t, Array> grads_;
};

/// Linear record of primitive evaluations. Nodes are appended in execution
/// order, so reverse index order is a valid reverse topological order.
class Tape {
 public:
  /// Backward rule: receives the output adjoint and accumulates parent adjoints.
  using Backward = std::function<void(const Tape&, const Array& grad_out, std::vector<Array>& grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array value);
  Var constant(double value) { return constant(Array::scalar(value)); }
  /// Leaf value. Only trainable leaves get an entry in backward().
  Var input(Array value, bool trainable = true);

  const Array& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Records a node. `parents` decide whether gradients must flow through it.
  Var record(Array value, std::initializer_list<Var> parents, Backward backward);

  /// Reverse sweep from a scalar output. Throws on non-scalar outputs.
  Gradients backward(Var output) const;

  static void accumulate(std::vector<Array>& grads, std::size_t id, const Array& g);
  static Array& slot(std::vector<Array>& grads, std::size_t id, const Shape& shape);

 private:
  struct Node {
    Array value;
    bool requires_grad = false;
    bool trainable = false;
    Backward backward;
  };

  std::vector<Node> nodes_;
};

}  // namespace endorecon::diffnum
