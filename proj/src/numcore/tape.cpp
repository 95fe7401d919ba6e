#include "dfe/numcore/tape.hpp"

#include "dfe/numcore/errors.hpp"

namespace dfe::nc {

const Tensor& Var::value() const {
  if (!tape_) throw ContractViolation("Var: uninitialised handle");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

void Tape::check_owned(const Var& v) const {
  if (v.tape_ != this) throw ContractViolation("Tape: variable belongs to a different tape");
}

Var Tape::constant(Tensor value) {
  if (consumed_) throw ContractViolation("Tape: recording on a consumed tape");
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  if (consumed_) throw ContractViolation("Tape: recording on a consumed tape");
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  if (!p.value.all_finite()) throw NumericFault("param", "parameter '" + p.name + "' holds non-finite values");
  Node n;
  n.op = "param";
  n.value = p.value;
  n.param = &p;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(op, std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  if (consumed_) throw ContractViolation("Tape: recording on a consumed tape");
  if (!value.all_finite()) throw NumericFault(std::string(op), "non-finite output");
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    check_owned(v);
    n.inputs.push_back(v.id_);
    n.requires_grad = n.requires_grad || nodes_[v.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (consumed_) throw ContractViolation("Tape::backward: tape already consumed");
  const Tensor& lv = nodes_[loss.id_].value;
  if (lv.size() != 1) throw ContractViolation("Tape::backward: loss is not a scalar " + shape_string(lv.shape()));
  consumed_ = true;
  trace_.clear();
  if (!nodes_[loss.id_].requires_grad) return;

  nodes_[loss.id_].grad = Tensor(lv.shape(), 1.0);
  BackwardContext ctx;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || node.grad.size() == 0 || !node.backward) continue;
    ctx.out_grad_ = &node.grad;
    ctx.out_value_ = &node.value;
    ctx.inputs_.clear();
    ctx.input_grads_.clear();
    for (std::size_t in : node.inputs) {
      Node& src = nodes_[in];
      ctx.inputs_.push_back(&src.value);
      if (src.requires_grad) {
        if (src.grad.size() == 0) src.grad = Tensor::like(src.value);
        ctx.input_grads_.push_back(&src.grad);
      } else {
        ctx.input_grads_.push_back(nullptr);
      }
    }
    node.backward(ctx);
    trace_.push_back(id);
  }

  for (Node& node : nodes_) {
    if (!node.param || node.grad.size() == 0) continue;
    Parameter& p = *node.param;
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor::like(p.value);
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += node.grad[i];
  }
}

}  // namespace dfe::nc
