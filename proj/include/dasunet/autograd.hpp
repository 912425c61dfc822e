#pragma once

// Minimal tape-free reverse-mode differentiation over Tensor values. Every
// operation returns a Var whose node remembers its parents and a closure that
// pushes the node's gradient into them. Nodes are only linked when at least one
// input requires a gradient, so inference builds no graph.

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dasunet/tensor.hpp"

namespace dasunet::ag {

/// Graph recording switch; see NoGradGuard.
inline thread_local bool grad_enabled = true;

/// Disables graph construction in the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(grad_enabled) { grad_enabled = false; }
    ~NoGradGuard() { grad_enabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor<T>& ensure_grad() {
        if (grad.size() != value.size() || !(grad.shape() == value.shape())) grad = Tensor<T>(value.shape());
        return grad;
    }
    [[nodiscard]] bool has_grad() const { return grad.size() == value.size() && !grad.empty(); }
};

template <class T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    [[nodiscard]] bool defined() const { return static_cast<bool>(node_); }
    [[nodiscard]] const Tensor<T>& value() const { return node_->value; }
    /// Direct write access; only for leaves (parameters), never inside a live graph.
    Tensor<T>& mutable_value() { return node_->value; }
    [[nodiscard]] const Tensor<T>& grad() const { return node_->ensure_grad(); }
    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
    [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
    void zero_grad() {
        if (node_->has_grad()) node_->grad.fill(T(0));
    }
    [[nodiscard]] const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Wraps a constant (no gradient).
template <class T>
Var<T> constant(Tensor<T> v) {
    return Var<T>(std::move(v), false);
}

/// Builds the result node of an operation.
template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    bool any = false;
    if (grad_enabled)
        for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (const auto& p : parents) node->parents.push_back(p.node());
        node->backward_fn = std::move(backward);
    }
    return Var<T>(std::move(node));
}

/// Gradient accumulator of parent `i`, or nullptr when it needs none.
template <class T>
Tensor<T>* parent_grad(Node<T>& self, std::size_t i) {
    auto& p = self.parents[i];
    return p->requires_grad ? &p->ensure_grad() : nullptr;
}

/// Reverse sweep from a scalar root; gradients accumulate into leaves.
template <class T>
void backward(const Var<T>& root) {
    if (root.value().size() != 1) throw ShapeError("backward needs a scalar root, got " + root.shape().str());
    if (!root.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->ensure_grad().fill(T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
    }
    // intermediate gradients are not needed after the sweep
    for (Node<T>* n : order) {
        if (n->backward_fn) n->grad = Tensor<T>();
    }
}

} // namespace dasunet::ag
