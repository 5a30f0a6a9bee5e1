#pragma once

// Minimal reverse-mode automatic differentiation over Tensor values.
// A Var is a shared handle to a graph node; operations record a backward
// closure that pushes the node's gradient into its parents.

#include <functional>
#include <memory>
#include <vector>

#include "cloudmamba/tensor.hpp"

namespace cloudmamba::ag {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  // Zero-initialised gradient buffer matching `value`.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const std::vector<int>& shape() const { return node_->value.shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  // Gradient after backward(); zeros when nothing reached this node.
  Tensor grad() const;
  void zero_grad() { node_->grad = Tensor(); }

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled() noexcept;

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds the result node of an operation. The backward closure is dropped
// (and the result is a constant) when recording is off or no parent needs a
// gradient.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

// Adds `g` into the parent's gradient if that parent requires one.
void accumulate(const std::shared_ptr<Node>& parent, const Tensor& g);
// Takes ownership of g when the parent has no gradient yet.
void accumulate(const std::shared_ptr<Node>& parent, Tensor&& g);

// Reverse pass from a scalar root. Intermediate gradients are released as
// soon as they have been propagated; leaf gradients accumulate.
void backward(const Var& root);

Var detach(const Var& v);

}  // namespace cloudmamba::ag
