#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "practise/tensor.hpp"

namespace practise::ad {

class Graph;

// Handle to a node in a Graph. Cheap to copy; only valid while its graph lives.
class Var {
 public:
  Var() = default;
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Tape of tensor operations recorded in creation order, which is a
// topological order. backward() walks it once in reverse.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  // Gradient of the last backward() w.r.t. v. Zero tensor if v was not on a
  // path to the loss.
  const Tensor& grad(Var v);
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse-mode sweep from a scalar loss. Gradients of parameter leaves are
  // overwritten unless accumulate is set; intermediate gradients are always
  // recomputed.
  void backward(Var loss, bool accumulate = false);

  // Used by op implementations.
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  Tensor& grad_buffer(std::size_t id);
  const Tensor& node_value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& node_grad(std::size_t id) const { return nodes_[id].grad; }
  bool node_requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool trainable = false;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
// a * b^T, the natural form of a linear layer with out x in weights.
Var matmul_bt(Var a, Var b);
Var add(Var a, Var b);
Var add_bias(Var x, Var bias);
Var relu(Var x);
Var sum(Var x);
Var scale(Var x, double s);

// beta * mean_i ||s_i - t_i||^2 over the rows of b x d features.
Var feature_mse(Var student, Var teacher, double beta);

// Mean cross-entropy of softmax(logits / T) against hard labels.
Var softmax_ce(Var logits, std::span<const int> labels, double temperature);
// Mean cross-entropy of softmax(logits / T) against probability rows.
Var softmax_ce(Var logits, const Tensor& targets, double temperature);

// Row-wise softmax(logits / T) on plain tensors.
Tensor softmax(const Tensor& logits, double temperature = 1.0);

}  // namespace practise::ad

namespace practise {

// Step decay: lr(i) = base / factor^floor(i / (frac * total)).
struct LrSchedule {
  double base_lr = 0.02;
  std::size_t total_iters = 1000;
  double decay_factor = 10.0;
  double decay_every_frac = 0.4;

  double lr(std::size_t iter) const;
  void validate() const;
};

// theta <- theta - lr * g for every pair.
void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr);

}  // namespace practise
