/* Copyright 2026 The attnprune Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "attnprune/tensor.hpp"

namespace attnprune {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid only while the
// owning tape is alive.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  bool valid() const { return tape != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

// View handed to a backward rule. Input gradients are zero-initialized on
// first access and accumulate across consumers.
class BackwardContext {
 public:
  BackwardContext(Tape& tape, std::uint32_t node) : tape_(tape), node_(node) {}

  const Tensor& output() const;
  std::span<const double> grad_output() const;
  std::size_t num_inputs() const;
  const Tensor& input(std::size_t k) const;
  bool needs_grad(std::size_t k) const;
  std::span<double> input_grad(std::size_t k);

 private:
  Tape& tape_;
  std::uint32_t node_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

// Per-forward-pass arena of recorded operations. Nodes are appended in
// topological order; backward() walks them in reverse once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an op result. The backward rule is kept only when some input
  // requires a gradient.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::initializer_list<Var> inputs,
             BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Populates gradients for every requires_grad node reachable from `loss`.
  // The loss must hold exactly one element. A tape supports one traversal.
  void backward(Var loss);

  // Gradient of a node after backward(); zeros when nothing flowed into it.
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class BackwardContext;

  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<double>& grad_buffer(std::uint32_t id);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// ---- differentiable operations ----------------------------------------

// [.., n, k] x [.., k, m] -> [.., n, m]. Batch dims must match, or one side
// may be a plain matrix that is broadcast over the other's batch.
Var matmul(Var a, Var b);
// a x b^T: [.., n, k] x [.., m, k] -> [.., n, m].
Var matmul_nt(Var a, Var b);

enum class ElementwiseOp { kAdd, kSub, kMul, kScale, kRelu, kExp, kLog, kSqrt, kMaxScalar };

// Binary ops take `b` with shape equal to a trailing suffix of a's shape
// (leading-dimension broadcast). kScale and kMaxScalar read `scalar`.
Var elementwise(ElementwiseOp op, Var a, std::optional<Var> b = std::nullopt,
                double scalar = 0.0);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var max_scalar(Var a, double s);

// Adds a constant tensor whose shape is a trailing suffix of a's shape.
Var add_constant(Var a, const Tensor& c);

enum class ReduceOp { kSum, kMean, kMax };

// Removes `axis`. Max routes the gradient to the first maximal entry.
Var reduce(ReduceOp op, Var a, std::size_t axis);
Var sum_all(Var a);

Var reshape(Var a, Shape shape);
// [A, B, C, D] -> [A, C, B, D].
Var swap_middle_axes(Var a);

// Gathers rows of a [V, d] table. Result is [ids.size(), d].
Var embedding_lookup(Var table, std::span<const int> ids);

// Layer normalization over the last axis with affine gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// Mean negative log-softmax of the target entries over positions whose
// target differs from ignore_id. logits: [n, V].
Var cross_entropy(Var logits, std::span<const int> targets,
                  std::optional<int> ignore_id = std::nullopt);

}  // namespace attnprune
