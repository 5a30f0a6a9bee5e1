#include "cloudmamba/autograd.hpp"

#include <unordered_set>

namespace cloudmamba::ag {
namespace {
thread_local bool g_grad_enabled = true;
}

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape(), 0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor(node_->value.shape(), 0);
  return node_->grad;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  Var out(std::move(value), needs);
  if (needs) {
    auto& node = *out.node();
    node.parents.reserve(parents.size());
    for (auto& p : parents) node.parents.push_back(p.node());
    node.backward = std::move(backward);
  }
  return out;
}

void accumulate(const std::shared_ptr<Node>& parent, const Tensor& g) {
  if (!parent || !parent->requires_grad) return;
  Tensor& dst = parent->grad_buffer();
  if (dst.size() != g.size()) throw ShapeError("gradient shape mismatch during backward");
  Real* d = dst.data();
  const Real* s = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) d[i] += s[i];
}

void accumulate(const std::shared_ptr<Node>& parent, Tensor&& g) {
  if (!parent || !parent->requires_grad) return;
  if (parent->grad.empty() && g.size() == parent->value.size() && !g.empty()) {
    parent->grad = g.shape() == parent->value.shape() ? std::move(g) : g.reshaped(parent->value.shape());
    return;
  }
  accumulate(parent, static_cast<const Tensor&>(g));
}

void backward(const Var& root) {
  if (!root.defined()) throw InvalidParameter("backward on an undefined Var");
  if (root.value().size() != 1) throw ShapeError("backward requires a scalar root, got " + shape_string(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;
    if (!n->grad.empty()) n->backward(*n);
    n->grad = Tensor();
  }
}

Var detach(const Var& v) { return Var(v.value(), false); }

}  // namespace cloudmamba::ag
