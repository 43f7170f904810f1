#ifndef GRAPY_AUTODIFF_HPP
#define GRAPY_AUTODIFF_HPP

#include <deque>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "grapy/tensor.hpp"

namespace grapy {

template <typename Scalar>
class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, Index id) : tape_(tape), id_(id) {}

  const Tensor<Scalar>& value() const { return tape_->value(*this); }
  const Tensor<Scalar>& grad() const { return tape_->grad(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(*this); }
  Tape<Scalar>& tape() const { return *tape_; }
  Index id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  Index id_ = -1;
};

// Append-only record of operations. Inputs always precede outputs, so a reverse
// sweep over the node list is a valid topological order.
template <typename Scalar>
class Tape {
 public:
  // Receives the node's own value and the incoming gradient; pushes gradients to inputs.
  using Backward =
      std::function<void(Tape&, const Tensor<Scalar>& out_value, const Tensor<Scalar>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> leaf(Tensor<Scalar> value, bool requires_grad = true) {
    if (!value.all_finite()) throw NumericError("non-finite value supplied as tape leaf");
    nodes_.push_back(Node{std::move(value), {}, requires_grad, true, nullptr});
    return Var<Scalar>(this, static_cast<Index>(nodes_.size()) - 1);
  }

  Var<Scalar> constant(Tensor<Scalar> value) { return leaf(std::move(value), false); }

  Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs,
                     Backward backward, const char* op_name) {
    if (!value.all_finite()) {
      throw NumericError(std::string("non-finite output from ") + op_name);
    }
    bool needs = false;
    for (const auto& v : inputs) needs = needs || requires_grad(v);
    return push(std::move(value), needs, std::move(backward));
  }

  Var<Scalar> record(Tensor<Scalar> value, const std::vector<Var<Scalar>>& inputs,
                     Backward backward, const char* op_name) {
    if (!value.all_finite()) {
      throw NumericError(std::string("non-finite output from ") + op_name);
    }
    bool needs = false;
    for (const auto& v : inputs) needs = needs || requires_grad(v);
    return push(std::move(value), needs, std::move(backward));
  }

  const Tensor<Scalar>& value(Var<Scalar> v) const { return node(v).value; }

  // Zero tensor when no gradient reached v.
  const Tensor<Scalar>& grad(Var<Scalar> v) const {
    const Node& n = node(v);
    if (!n.grad) n.grad = zeros_like(n.value);
    return *n.grad;
  }

  bool requires_grad(Var<Scalar> v) const { return node(v).requires_grad; }

  void accumulate(Var<Scalar> v, const Tensor<Scalar>& g) {
    Node& n = node(v);
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape()) {
      throw ShapeError("gradient shape " + shape_string(g.shape()) + " does not match value " +
                       shape_string(n.value.shape()));
    }
    if (!n.grad) {
      n.grad = g;
    } else {
      n.grad->array() += g.array();
    }
  }

  // Leaf gradients accumulate across calls; intermediate gradients are reset.
  void backward(Var<Scalar> loss) {
    if (loss.value().size() != 1) {
      throw ShapeError("backward() needs a scalar loss, got shape " +
                       shape_string(loss.value().shape()));
    }
    for (auto& n : nodes_) {
      if (!n.is_leaf) n.grad.reset();
    }
    accumulate(loss, Tensor<Scalar>::ones(loss.value().shape()));
    for (Index id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.is_leaf || !n.backward || !n.grad) continue;
      n.backward(*this, n.value, *n.grad);
    }
  }

  void zero_grad() {
    for (auto& n : nodes_) n.grad.reset();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Scalar> value;
    mutable std::optional<Tensor<Scalar>> grad;
    bool requires_grad = false;
    bool is_leaf = false;
    Backward backward;
  };

  Var<Scalar> push(Tensor<Scalar> value, bool needs, Backward backward) {
    nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backward) : nullptr});
    return Var<Scalar>(this, static_cast<Index>(nodes_.size()) - 1);
  }

  Node& node(Var<Scalar> v) {
    if (v.valid() && &v.tape() != this) throw std::logic_error("variable belongs to another tape");
    return nodes_.at(static_cast<std::size_t>(v.id()));
  }
  const Node& node(Var<Scalar> v) const {
    if (v.valid() && &v.tape() != this) throw std::logic_error("variable belongs to another tape");
    return nodes_.at(static_cast<std::size_t>(v.id()));
  }

  // deque keeps references to earlier values stable while the tape grows.
  std::deque<Node> nodes_;
};

}  // namespace grapy

#endif  // GRAPY_AUTODIFF_HPP
