// SPDX-License-Identifier: Apache-2.0

#include "slu/tape.hpp"

#include "slu/error.hpp"

namespace slu::ad {

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  node.is_leaf = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  Node node;
  node.op = "variable";
  node.leaf_grad = Tensor(value.shape());
  node.value = std::move(value);
  node.is_leaf = true;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& param, bool trainable) {
  if (auto it = param_ids_.find(&param); it != param_ids_.end()) return Var(this, it->second);
  if (trainable && !param.grad.same_shape(param.value)) param.grad = Tensor(param.value.shape());
  Node node;
  node.op = "parameter";
  node.external = &param.value;
  node.is_leaf = true;
  node.requires_grad = trainable;
  node.param = trainable ? &param : nullptr;
  nodes_.push_back(std::move(node));
  param_ids_.emplace(&param, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node node;
  node.op = op;
  node.value = std::move(value);
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) throw ContractError(std::string(op) + ": input is not on this tape");
    node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
  }
  node.inputs = std::move(inputs);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& node = nodes_.at(id);
  return node.external ? *node.external : node.value;
}

Tensor* Tape::grad_slot(std::size_t id) {
  Node& node = nodes_.at(id);
  if (!node.requires_grad) return nullptr;
  if (node.grad.empty() && !value(id).empty()) node.grad = Tensor(value(id).shape());
  if (node.grad.shape() != value(id).shape()) node.grad = Tensor(value(id).shape());
  return &node.grad;
}

const Tensor& Tape::grad(Var leaf) const {
  const Node& node = nodes_.at(leaf.id());
  if (node.op != "variable") throw ContractError("grad: node is not a variable leaf");
  return node.leaf_grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  const Tensor& loss_value = value(loss.id());
  if (loss_value.size() != 1 || loss_value.rank() != 0) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(loss_value.shape()));
  }
  for (Node& node : nodes_) node.grad = Tensor();
  if (!nodes_[loss.id()].requires_grad) return;
  grad_slot(loss.id())->fill(1.0);

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.is_leaf) {
      if (node.param) {
        node.param->grad.add_(node.grad);
      } else {
        node.leaf_grad.add_(node.grad);
      }
    } else if (node.backward) {
      node.backward(*this, node.grad, node.value);
    }
  }
}

}  // namespace slu::ad
