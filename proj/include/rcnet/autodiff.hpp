#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// A Graph records every op in creation order, which is already a topological
// order, so backward() is a single reverse sweep. A Parameter enters the graph
// once as a leaf no matter how many ops consume it; every consumer adds into
// the same leaf gradient, which is how weights reused across unroll steps
// receive the sum of their per-step gradients.

#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rcnet/parameter.hpp"
#include "rcnet/tensor.hpp"

namespace rcnet {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor<T>& grad_out)>;

  // With grad disabled, ops keep values but drop their backward closures.
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor<T> value, bool requires_grad = false);
  Var parameter(Parameter<T>& p);

  const Tensor<T>& value(Var v) const { return node(v).value; }
  const Tensor<T>& grad(Var v) const { return node(v).grad; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::string_view op(Var v) const { return node(v).op; }
  std::size_t size() const { return nodes_.size(); }
  bool grad_enabled() const { return grad_enabled_; }
  // Whether the parameter entered this graph as a leaf.
  bool uses(const Parameter<T>& p) const { return param_nodes_.count(&p) != 0; }

  // Requires a single-element loss. Parameter leaves add their gradient into
  // Parameter::grad.
  void backward(Var loss);

  // Op authoring interface.
  Var record(std::string_view op, Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn);
  Tensor<T>& grad_buffer(Var v);

 private:
  struct Node {
    std::string_view op;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }
  Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }

  bool grad_enabled_;
  std::deque<Node> nodes_;  // deque: node references stay valid while recording
  std::unordered_map<const Parameter<T>*, int> param_nodes_;
};

// ---- differentiable ops ---------------------------------------------------

template <typename T>
Var conv2d(Graph<T>& g, Var input, Var weight, std::optional<Var> bias, Index stride, Index padding);

// Train mode normalizes with batch statistics and (optionally) moves the
// group's running statistics; eval mode uses the stored running statistics.
template <typename T>
Var batchnorm2d(Graph<T>& g, Var input, BnGroup<T>& group, Mode mode, bool update_running_stats = true,
                const BnConfig& config = {});

template <typename T>
Var relu(Graph<T>& g, Var x);
template <typename T>
Var add(Graph<T>& g, Var a, Var b);
template <typename T>
Var scale(Graph<T>& g, Var x, T factor);
template <typename T>
Var avgpool2d(Graph<T>& g, Var x);  // 2x2 window, stride 2
template <typename T>
Var global_avgpool(Graph<T>& g, Var x);  // [N,C,H,W] -> [N,C]
template <typename T>
Var linear(Graph<T>& g, Var x, Var weight, Var bias);
template <typename T>
Var invpool(Graph<T>& g, Var x);
template <typename T>
Var invpool_inverse(Graph<T>& g, Var x);

// Mean cross-entropy over the batch, max-subtracted softmax.
template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::span<const int> labels);
// Mean squared error over all elements.
template <typename T>
Var mse_loss(Graph<T>& g, Var pred, const Tensor<T>& target);
// sum(x * weights), a scalar projection used to probe gradients.
template <typename T>
Var weighted_sum(Graph<T>& g, Var x, const Tensor<T>& weights);

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace rcnet
