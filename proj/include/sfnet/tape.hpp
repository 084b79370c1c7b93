#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sfnet/tensor.hpp"

namespace sfnet {

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

// Reverse-mode gradient tape. Nodes are appended in evaluation order, so a
// reverse sweep over the node list is a reverse topological order. A tape is
// built for one loss evaluation and then discarded.
template <class S>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Var leaf(Tensor<S> value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), {}, {}, requires_grad, false});
    return Var{nodes_.size() - 1};
  }

  // Records an op output. `backward` is invoked once during the reverse sweep
  // and must accumulate into the inputs' gradients via grad_mut().
  Var record(Tensor<S> value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    for (Var in : inputs) needs = needs || nodes_.at(in.id).requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{},
                          needs, false});
    return Var{nodes_.size() - 1};
  }

  const Tensor<S>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient of the last backward() output with respect to v. Zero-filled if
  // v did not influence the output.
  Tensor<S> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.has_grad ? n.grad : Tensor<S>(n.value.shape());
  }

  Tensor<S>& grad_mut(Var v) { return grad_mut(v.id); }

  Tensor<S>& grad_mut(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor<S>(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  const Tensor<S>& grad_of_node(std::size_t id) const { return nodes_[id].grad; }

  void backward(Var output) {
    if (nodes_.at(output.id).value.size() != 1) {
      throw DimensionError("backward() needs a scalar output, got shape " +
                           to_string(nodes_[output.id].value.shape()));
    }
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor<S>();
    }
    grad_mut(output.id)[0] = S{1};
    for (std::size_t id = output.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, id);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    Backward backward;
    bool requires_grad = false;
    bool has_grad = false;
  };

  std::vector<Node> nodes_;
};

}  // namespace sfnet
