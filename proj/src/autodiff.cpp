#include "uniemo/autodiff.hpp"

#include <algorithm>

namespace uniemo::ad {

Tape& Var::tape() const {
  if (tape_ == nullptr) throw Error("use of an unbound autodiff variable");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(*this); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_grad_;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value;
  n.requires_grad = record_grad_ && p.trainable;
  n.param = &p;
  nodes_.push_back(std::move(n));
  param_ids_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

const Tensor* Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  return n.grad.empty() ? nullptr : &n.grad;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (record_grad_) {
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [this](const Var& v) {
      return v.valid() && nodes_[v.id()].requires_grad;
    });
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && n.value.size() > 0) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var root) {
  if (!record_grad_) throw Error("backward() on a tape recorded without gradients");
  Node& r = nodes_[root.id()];
  if (r.value.size() != 1) {
    throw Error("backward() root must be a scalar, got shape " + shape_str(r.value.shape()));
  }
  if (!r.requires_grad) return;
  r.grad = Tensor(r.value.shape(), 1.0);
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
  }
  for (Node& n : nodes_) {
    if (n.param == nullptr || n.grad.empty()) continue;
    Tensor& pg = n.param->grad;
    if (pg.shape() != n.grad.shape()) pg = Tensor(n.grad.shape());
    for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
  }
}

}  // namespace uniemo::ad
