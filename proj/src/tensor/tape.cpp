#include <string>

#include "meshalign/autodiff.hpp"

namespace meshalign {

Tape& Var::tape() const {
  if (!tape_) throw AutodiffError("Var: handle is not bound to a tape");
  return *tape_;
}

const NdArray& Var::value() const { return tape().value(id_); }

bool Var::requires_grad() const { return tape().requires_grad(id_); }

const NdArray* Var::grad() const {
  const Tape& t = tape();
  return t.has_grad(id_) ? &t.grad_of(id_) : nullptr;
}

Var Tape::leaf(NdArray value, bool requires_grad, std::string_view name) {
  if (!value.all_finite()) throw NonFiniteError(std::string(name), nodes_.size());
  Node node;
  node.op = std::string(name);
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<NodeId>(nodes_.size() - 1));
}

Var Tape::record(std::string_view op, NdArray value, std::initializer_list<Var> parents,
                 BackwardFn backward) {
  return record(op, std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backward));
}

Var Tape::record(std::string_view op, NdArray value, std::span<const Var> parents,
                 BackwardFn backward) {
  const auto id = static_cast<NodeId>(nodes_.size());
  if (!value.all_finite()) throw NonFiniteError(std::string(op), id);
  Node node;
  node.op = std::string(op);
  node.value = std::move(value);
  for (const Var& p : parents) {
    if (!p.valid()) continue;
    if (&p.tape() != this) throw AutodiffError(node.op + ": operand belongs to another tape");
    if (p.id() >= id) throw AutodiffError(node.op + ": cycle detected");
    node.parents.push_back(p.id());
    node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, id);
}

NdArray* Tape::accumulator(NodeId id) {
  Node& node = nodes_.at(id);
  if (!node.requires_grad) return nullptr;
  if (!node.has_grad) {
    node.grad = NdArray(node.value.shape(), 0.0);
    node.has_grad = true;
  }
  return &node.grad;
}

void Tape::backward(const Var& root) {
  if (&root.tape() != this) throw AutodiffError("backward: root belongs to another tape");
  if (swept_) throw AutodiffError("backward: gradients already computed; call zero_grad() first");
  const Node& r = nodes_.at(root.id());
  if (r.value.size() != 1) {
    throw AutodiffError("backward: root must be scalar, got " + to_string(r.value.shape()));
  }
  swept_ = true;
  if (!r.requires_grad) return;
  accumulator(root.id())->fill(1.0);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad || !node.backward) continue;
    if (!node.grad.all_finite()) throw NonFiniteError(node.op + " (gradient)", i);
    node.backward(*this, static_cast<NodeId>(i));
  }
}

void Tape::zero_grad() {
  for (Node& node : nodes_) {
    node.grad = NdArray();
    node.has_grad = false;
  }
  swept_ = false;
}

}  // namespace meshalign
