#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dfe/numcore/tensor.hpp"

namespace dfe::nc {

/// A named trainable tensor. `grad` is accumulated by Tape::backward and
/// must be cleared by the caller between steps.
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::like(value)) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor::like(value);
    else grad.fill(0.0);
  }

  std::string name;
  Tensor value;
  Tensor grad;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// What a primitive's adjoint sees while the tape is replayed.
class BackwardContext {
 public:
  const Tensor& grad() const { return *out_grad_; }
  const Tensor& value() const { return *out_value_; }
  const Tensor& input(std::size_t i) const { return *inputs_[i]; }
  /// Accumulation target for input i, or nullptr if that input needs no gradient.
  Tensor* input_grad(std::size_t i) const { return input_grads_[i]; }

 private:
  friend class Tape;
  const Tensor* out_grad_ = nullptr;
  const Tensor* out_value_ = nullptr;
  std::vector<const Tensor*> inputs_;
  std::vector<Tensor*> input_grads_;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

/// Single-use reverse-mode record.
///
/// Every primitive appends one node; `backward` replays the adjoints in exact
/// reverse order and then adds each parameter leaf's gradient into
/// `Parameter::grad` once. A consumed tape rejects further backward calls and
/// further recording; build a new tape for the next forward pass.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to `p`. Calling twice with the same parameter returns the same node.
  Var param(Parameter& p);
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  void backward(Var loss);

  bool grad_enabled() const noexcept { return grad_enabled_; }
  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::string_view op(std::size_t id) const { return nodes_[id].op; }
  /// Node ids whose adjoints ran during the last backward, in visiting order.
  const std::vector<std::size_t>& backward_trace() const noexcept { return trace_; }

 private:
  struct Node {
    std::string_view op;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  void check_owned(const Var& v) const;

  bool grad_enabled_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  std::vector<std::size_t> trace_;
};

}  // namespace dfe::nc
