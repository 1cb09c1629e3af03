#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "seqplace/nn/tensor.hpp"

namespace seqplace::nn {

template <typename T>
class Tape;

/**
 * Lightweight handle to a node on a Tape. Copies are cheap; the tape owns
 * the storage and must outlive every Var pointing into it.
 */
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Tensor<T>& grad() const { return tape_->grad(id_); }
  const std::vector<std::size_t>& shape() const { return value().shape; }
  std::size_t id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }
  bool defined() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/**
 * Reverse-mode autodiff tape. Ops append nodes in execution order; backward()
 * walks the tape in reverse, so gradient accumulation order is fixed and runs
 * are bit-reproducible. Construct with grad_enabled=false for inference: ops
 * skip closures and gradient buffers entirely.
 */
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    Node node;
    node.value = std::move(value);
    node.needs_grad = grad_enabled_ && requires_grad;
    if (node.needs_grad) {
      node.grad = Tensor<T>::zeros(node.value.shape);
    }
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /** Appends an op result. backward may be empty for non-differentiable ops. */
  Var<T> make(Tensor<T> value, const std::vector<std::size_t>& parents, Backward backward) {
    Node node;
    node.value = std::move(value);
    if (grad_enabled_) {
      for (std::size_t p : parents) {
        if (nodes_[p].needs_grad) {
          node.needs_grad = true;
          break;
        }
      }
    }
    if (node.needs_grad) {
      node.grad = Tensor<T>::zeros(node.value.shape);
      node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var<T>(this, nodes_.size() - 1);
  }

  Tensor<T>& value(std::size_t id) { return nodes_[id].value; }
  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }

  Tensor<T>& grad(std::size_t id) {
    if (!nodes_[id].needs_grad) {
      throw ConfigError("gradient requested for a node that does not track gradients");
    }
    return nodes_[id].grad;
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /** Adds g into the gradient buffer of id, if that node tracks gradients. */
  void accumulate(std::size_t id, const Tensor<T>& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (!n.grad.same_shape(g)) {
      throw ConfigError("gradient shape mismatch: " + n.grad.shape_string() + " vs " + g.shape_string());
    }
    for (std::size_t i = 0; i < g.v.size(); ++i) n.grad.v[i] += g.v[i];
  }

  /**
   * Seeds root with gradient 1 and propagates back through every node created
   * before it. root must be scalar.
   */
  void backward(const Var<T>& root) {
    if (!grad_enabled_) {
      throw ConfigError("backward() on a tape constructed without gradients");
    }
    if (root.value().numel() != 1) {
      throw ConfigError("backward() root must be scalar, got shape " + root.value().shape_string());
    }
    if (!nodes_[root.id()].needs_grad) {
      throw ConfigError("backward() root does not depend on any gradient-tracking leaf");
    }
    nodes_[root.id()].grad.v[0] = T(1);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.backward) {
        n.backward(*this, i);
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

}  // namespace seqplace::nn
