// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense float64 tensors.
//
// A Tape is an append-only list of nodes. Every node records the ids of its
// inputs (which always precede it), its forward value and a backward rule.
// backward() walks the list in reverse once. Gradients of leaves accumulate
// additively across calls; intermediate gradients are recomputed each call.

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "slu/tensor.hpp"

namespace slu::ad {

/// A named trainable array with its gradient accumulator.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name_, Tensor value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Backward rule: receives the tape, the node's output gradient and its
  /// forward value, and accumulates into input gradients via grad_slot().
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad, const Tensor& out_value)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is read back with grad().
  Var variable(Tensor value);
  /// Leaf bound to a Parameter; backward() adds into param.grad. A parameter
  /// is recorded once per tape no matter how often it is requested. With
  /// trainable=false the value is used as a constant.
  Var parameter(Parameter& param, bool trainable = true);

  /// Record an op. `inputs` must already be on this tape.
  Var record(std::string_view op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::string_view op_name(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer for node `id`, zero-initialized on first use. Returns
  /// nullptr when the node does not require a gradient.
  Tensor* grad_slot(std::size_t id);

  /// Accumulated gradient of a variable() leaf.
  const Tensor& grad(Var leaf) const;

  /// Back-propagate from a scalar loss.
  void backward(Var loss);

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    const Tensor* external = nullptr;  // parameter value, not copied
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool is_leaf = false;
    Tensor leaf_grad;  // persistent accumulator for variable() leaves
  };

  std::deque<Node> nodes_;  // stable references across appends
  std::unordered_map<const Parameter*, std::size_t> param_ids_;
};

}  // namespace slu::ad
