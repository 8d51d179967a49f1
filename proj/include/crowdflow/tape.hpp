#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "crowdflow/error.hpp"
#include "crowdflow/tensor.hpp"

namespace crowdflow {

using ValueId = std::int32_t;
inline constexpr ValueId kNoValue = -1;

enum class OpKind : std::uint8_t {
  Leaf,
  Conv2d,  // inputs: x, kernels [, bias]
  Hadamard,
  Sigmoid,
  Tanh,
  Add,
  Sub,
  Scale,  // scalar factor stored on the node
  Sum,    // -> [1]
  ConcatChannels,
};

// Gradients of a scalar loss with respect to the tape's parameter leaves,
// keyed by value id. Every parameter leaf has exactly one entry; parameters
// the loss does not reach hold zeros.
template <typename S>
class GradientSet {
 public:
  void insert(ValueId id, Tensor<S> g) { grads_.emplace(id, std::move(g)); }

  const Tensor<S>& at(ValueId id) const {
    auto it = grads_.find(id);
    if (it == grads_.end()) throw ContractError("no gradient recorded for parameter id " + std::to_string(id));
    return it->second;
  }

  bool contains(ValueId id) const { return grads_.count(id) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<ValueId, Tensor<S>> grads_;
};

// Record of primitive applications in topological order. Forward values stay
// on the tape, so each op's backward can read its saved inputs and output
// without extra bookkeeping. One backward() pass visits every record once,
// in reverse; repeated consumers of a value accumulate by summation.
template <typename S>
class Tape {
 public:
  ValueId parameter(Tensor<S> v) { return push_leaf(std::move(v), true); }
  ValueId constant(Tensor<S> v) { return push_leaf(std::move(v), false); }

  ValueId conv2d(ValueId x, ValueId kernels) {
    Tensor<S> out = crowdflow::conv2d(value(x), value(kernels));
    return push(OpKind::Conv2d, {x, kernels}, std::move(out));
  }
  ValueId conv2d(ValueId x, ValueId kernels, ValueId bias) {
    Tensor<S> out = crowdflow::conv2d(value(x), value(kernels), value(bias));
    return push(OpKind::Conv2d, {x, kernels, bias}, std::move(out));
  }
  ValueId hadamard(ValueId a, ValueId b) {
    return push(OpKind::Hadamard, {a, b}, crowdflow::hadamard(value(a), value(b)));
  }
  ValueId sigmoid(ValueId a) { return push(OpKind::Sigmoid, {a}, crowdflow::sigmoid(value(a))); }
  ValueId tanh(ValueId a) { return push(OpKind::Tanh, {a}, crowdflow::tanh(value(a))); }
  ValueId add(ValueId a, ValueId b) { return push(OpKind::Add, {a, b}, crowdflow::add(value(a), value(b))); }
  ValueId sub(ValueId a, ValueId b) { return push(OpKind::Sub, {a, b}, crowdflow::sub(value(a), value(b))); }
  ValueId scale(ValueId a, S factor) {
    const ValueId id = push(OpKind::Scale, {a}, crowdflow::scale(value(a), factor));
    nodes_[static_cast<std::size_t>(id)].factor = factor;
    return id;
  }
  ValueId sum(ValueId a) { return push(OpKind::Sum, {a}, Tensor<S>::scalar(crowdflow::sum(value(a)))); }
  ValueId concat_channels(const std::vector<ValueId>& parts) {
    std::vector<Tensor<S>> vals;
    vals.reserve(parts.size());
    for (ValueId p : parts) vals.push_back(value(p));
    return push(OpKind::ConcatChannels, parts, crowdflow::concat_channels(vals));
  }

  const Tensor<S>& value(ValueId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<ValueId>& parameters() const { return parameters_; }

  GradientSet<S> backward(ValueId loss) const {
    if (value(loss).size() != 1) throw ContractError("backward: loss must be scalar");
    std::vector<Tensor<S>> adj(nodes_.size());
    adj[static_cast<std::size_t>(loss)] = Tensor<S>::ones(value(loss).shape());

    for (std::int64_t i = static_cast<std::int64_t>(nodes_.size()) - 1; i >= 0; --i) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      const Tensor<S>& g = adj[static_cast<std::size_t>(i)];
      if (g.empty() || n.op == OpKind::Leaf) continue;
      switch (n.op) {
        case OpKind::Conv2d: {
          const bool with_bias = n.inputs.size() == 3;
          auto cg = conv2d_backward(value(n.inputs[0]), value(n.inputs[1]), g, with_bias);
          accumulate(adj, n.inputs[0], std::move(cg.input));
          accumulate(adj, n.inputs[1], std::move(cg.kernels));
          if (with_bias) accumulate(adj, n.inputs[2], std::move(cg.bias));
          break;
        }
        case OpKind::Hadamard:
          accumulate(adj, n.inputs[0], crowdflow::hadamard(g, value(n.inputs[1])));
          accumulate(adj, n.inputs[1], crowdflow::hadamard(g, value(n.inputs[0])));
          break;
        case OpKind::Sigmoid: {
          const auto& y = n.value.array();
          accumulate(adj, n.inputs[0], Tensor<S>(n.value.shape(), g.array() * y * (S(1) - y)));
          break;
        }
        case OpKind::Tanh: {
          const auto& y = n.value.array();
          accumulate(adj, n.inputs[0], Tensor<S>(n.value.shape(), g.array() * (S(1) - y * y)));
          break;
        }
        case OpKind::Add:
          accumulate(adj, n.inputs[0], g);
          accumulate(adj, n.inputs[1], g);
          break;
        case OpKind::Sub:
          accumulate(adj, n.inputs[0], g);
          accumulate(adj, n.inputs[1], crowdflow::scale(g, S(-1)));
          break;
        case OpKind::Scale:
          accumulate(adj, n.inputs[0], crowdflow::scale(g, n.factor));
          break;
        case OpKind::Sum:
          accumulate(adj, n.inputs[0], Tensor<S>::full(value(n.inputs[0]).shape(), g.data()[0]));
          break;
        case OpKind::ConcatChannels: {
          int c0 = 0;
          for (ValueId in : n.inputs) {
            const int c1 = c0 + value(in).extent(0);
            accumulate(adj, in, slice_channels(g, c0, c1));
            c0 = c1;
          }
          break;
        }
        case OpKind::Leaf:
          break;
      }
    }

    GradientSet<S> grads;
    for (ValueId p : parameters_) {
      Tensor<S>& a = adj[static_cast<std::size_t>(p)];
      grads.insert(p, a.empty() ? Tensor<S>::zeros(value(p).shape()) : std::move(a));
    }
    return grads;
  }

 private:
  struct Node {
    OpKind op;
    std::vector<ValueId> inputs;
    Tensor<S> value;
    S factor{};
    bool is_parameter = false;
  };

  ValueId push_leaf(Tensor<S> v, bool is_parameter) {
    const ValueId id = push(OpKind::Leaf, {}, std::move(v));
    nodes_[static_cast<std::size_t>(id)].is_parameter = is_parameter;
    if (is_parameter) parameters_.push_back(id);
    return id;
  }

  ValueId push(OpKind op, std::vector<ValueId> inputs, Tensor<S> v) {
    for (ValueId in : inputs)
      if (in < 0 || in >= static_cast<ValueId>(nodes_.size()))
        throw ContractError("tape: input id out of range");
    nodes_.push_back(Node{op, std::move(inputs), std::move(v), S(0), false});
    return static_cast<ValueId>(nodes_.size() - 1);
  }

  static void accumulate(std::vector<Tensor<S>>& adj, ValueId id, Tensor<S> g) {
    Tensor<S>& slot = adj[static_cast<std::size_t>(id)];
    if (slot.empty())
      slot = std::move(g);
    else
      slot.array() += g.array();
  }

  std::vector<Node> nodes_;
  std::vector<ValueId> parameters_;
};

}  // namespace crowdflow
