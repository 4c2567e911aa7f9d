#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "overlord/core/tensor.hpp"

namespace overlord::ad {

// Reverse-mode tape. Nodes are created in topological order by construction;
// backward() walks the tape in reverse and accumulates into parent grads.
// Grad buffers are allocated lazily, so subgraphs that do not feed the loss
// cost nothing on the way back.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::function<void()> backward;  // captures parent node pointers

  Tensor<T>& ensure_grad() {
    if (grad.empty()) grad = Tensor<T>::zeros_like(value);
    return grad;
  }
  bool has_grad() const { return !grad.empty(); }
};

template <typename T>
using NodeRef = Node<T>*;

template <typename T>
class Tape {
 public:
  NodeRef<T> leaf(Tensor<T> value, bool requires_grad = true) {
    auto node = std::make_unique<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return nodes_.back().get();
  }

  NodeRef<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  NodeRef<T> make(Tensor<T> value, std::function<void()> backward) {
    auto node = std::make_unique<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = true;
    node->backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return nodes_.back().get();
  }

  // Seeds d(root)/d(root) = 1 and propagates. The root must be scalar.
  void backward(NodeRef<T> root) {
    if (root->value.numel() != 1)
      throw std::invalid_argument("backward: root must be a scalar");
    root->ensure_grad()[0] = T(1);
    run_backward();
  }

  // Propagates an externally seeded gradient (root->grad must be set).
  void backward_seeded(NodeRef<T> root) {
    if (!root->has_grad())
      throw std::invalid_argument("backward_seeded: root grad not set");
    run_backward();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  void run_backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>& n = **it;
      if (n.backward && n.has_grad()) n.backward();
    }
  }

  std::vector<std::unique_ptr<Node<T>>> nodes_;
};

// Accumulates g into dst->grad if dst wants gradients.
template <typename T>
inline void accumulate(NodeRef<T> dst, const Tensor<T>& g) {
  if (!dst->requires_grad && !dst->backward) return;
  Tensor<T>& acc = dst->ensure_grad();
  for (std::size_t i = 0; i < g.numel(); ++i) acc[i] += g[i];
}

}  // namespace overlord::ad
