#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "cll/tensor.hpp"

namespace cll {

// Handle to a node on a Tape. Only meaningful together with the tape that issued it.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

// Append-only record of a forward computation. backward() walks nodes in
// strict reverse insertion order, so every node's gradient is complete before
// its own backward function runs. A tape belongs to one worker; tapes never
// share nodes.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Var leaf(Tensor<T> value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), std::nullopt, requires_grad, {}});
    return Var{nodes_.size() - 1};
  }

  // Records an interior node. The backward function is kept only when some
  // parent participates in differentiation.
  Var record(Tensor<T> value, std::initializer_list<Var> parents, Backward backward) {
    bool needs = false;
    for (Var p : parents) needs = needs || node(p).requires_grad;
    nodes_.push_back(Node{std::move(value), std::nullopt, needs, needs ? std::move(backward) : Backward{}});
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  bool has_grad(Var v) const { return node(v).grad.has_value(); }

  const Tensor<T>& grad(Var v) const {
    const Node& n = node(v);
    if (!n.grad) throw TapeError("no gradient recorded for node " + std::to_string(v.id));
    return *n.grad;
  }

  void accumulate(Var v, const Tensor<T>& g) {
    Node& n = node(v);
    if (!n.requires_grad) return;
    require_same_shape(n.value.shape(), g.shape(), "gradient accumulation");
    if (!n.grad) {
      n.grad = g;
      return;
    }
    auto dst = n.grad->data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  // Seeds d(root)/d(root) = 1; root must hold a single element.
  void backward(Var root) {
    if (value(root).size() != 1) {
      throw DimensionError("backward without a seed requires a scalar root, got " +
                           value(root).shape().str());
    }
    backward(root, Tensor<T>(value(root).shape(), T(1)));
  }

  void backward(Var root, const Tensor<T>& seed) {
    accumulate(root, seed);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.grad || !n.backward) continue;
      // Parents always precede the node, so accumulation never aliases g.
      const Tensor<T>& g = *n.grad;
      n.backward(*this, g);
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) n.grad.reset();
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw TapeError("dangling tape reference " + std::to_string(v.id));
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw TapeError("dangling tape reference " + std::to_string(v.id));
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
};

}  // namespace cll
