#include "practise/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "practise/errors.hpp"

namespace practise::ad {

const Tensor& Var::value() const { return graph_->value(*this); }

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.trainable = true;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) { return nodes_[i].requires_grad; });
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

const Tensor& Graph::grad(Var v) { return grad_buffer(v.id()); }

void Graph::backward(Var loss, bool accumulate) {
  if (loss.graph_ != this) throw ValueError("backward: loss belongs to a different graph");
  if (nodes_[loss.id()].value.size() != 1) {
    throw DimensionError("backward: loss must be scalar, got shape " + shape_to_string(nodes_[loss.id()].value.shape()));
  }
  for (auto& n : nodes_) {
    if (n.trainable && accumulate) continue;
    if (!n.grad.empty()) n.grad.fill(0.0);
  }
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, i);
  }
}

namespace {

std::vector<std::size_t> ids(std::initializer_list<Var> vs) {
  std::vector<std::size_t> out;
  Graph* g = nullptr;
  for (const auto& v : vs) {
    if (g && &v.graph() != g) throw ValueError("operands belong to different graphs");
    g = &v.graph();
    out.push_back(v.id());
  }
  return out;
}

void accumulate_into(Graph& g, std::size_t id, const Tensor& delta) {
  if (!g.node_requires_grad(id)) return;
  Tensor& buf = g.grad_buffer(id);
  auto b = buf.values();
  auto d = delta.values();
  for (std::size_t i = 0; i < b.size(); ++i) b[i] += d[i];
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = a.graph();
  auto in = ids({a, b});
  Tensor out = practise::matmul(a.value(), b.value());
  return g.record(std::move(out), in, [ia = in[0], ib = in[1]](Graph& g, std::size_t self) {
    const Tensor& up = g.node_grad(self);
    if (g.node_requires_grad(ia)) accumulate_into(g, ia, practise::matmul_bt(up, g.node_value(ib)));
    if (g.node_requires_grad(ib)) accumulate_into(g, ib, practise::matmul_at(g.node_value(ia), up));
  });
}

Var matmul_bt(Var a, Var b) {
  Graph& g = a.graph();
  auto in = ids({a, b});
  Tensor out = practise::matmul_bt(a.value(), b.value());
  return g.record(std::move(out), in, [ia = in[0], ib = in[1]](Graph& g, std::size_t self) {
    const Tensor& up = g.node_grad(self);
    // out = a b^T: da = up b, db = up^T a
    if (g.node_requires_grad(ia)) accumulate_into(g, ia, practise::matmul(up, g.node_value(ib)));
    if (g.node_requires_grad(ib)) accumulate_into(g, ib, practise::matmul_at(up, g.node_value(ia)));
  });
}

Var add(Var a, Var b) {
  Graph& g = a.graph();
  auto in = ids({a, b});
  Tensor out = practise::add(a.value(), b.value());
  return g.record(std::move(out), in, [ia = in[0], ib = in[1]](Graph& g, std::size_t self) {
    accumulate_into(g, ia, g.node_grad(self));
    accumulate_into(g, ib, g.node_grad(self));
  });
}

Var add_bias(Var x, Var bias) {
  Graph& g = x.graph();
  auto in = ids({x, bias});
  Tensor out = add_row_vector(x.value(), bias.value());
  return g.record(std::move(out), in, [ix = in[0], ib = in[1]](Graph& g, std::size_t self) {
    const Tensor& up = g.node_grad(self);
    accumulate_into(g, ix, up);
    if (g.node_requires_grad(ib)) {
      Tensor cs = column_sums(up);
      accumulate_into(g, ib, Tensor(g.node_value(ib).shape(), std::vector<double>(cs.data())));
    }
  });
}

Var relu(Var x) {
  Graph& g = x.graph();
  auto in = ids({x});
  Tensor out = practise::relu(x.value());
  return g.record(std::move(out), in, [ix = in[0]](Graph& g, std::size_t self) {
    if (!g.node_requires_grad(ix)) return;
    const Tensor& up = g.node_grad(self);
    const Tensor& xv = g.node_value(ix);
    Tensor& buf = g.grad_buffer(ix);
    for (std::size_t i = 0; i < buf.size(); ++i) {
      if (xv[i] > 0.0) buf[i] += up[i];
    }
  });
}

Var sum(Var x) {
  Graph& g = x.graph();
  auto in = ids({x});
  Tensor out({1}, practise::sum(x.value()));
  return g.record(std::move(out), in, [ix = in[0]](Graph& g, std::size_t self) {
    if (!g.node_requires_grad(ix)) return;
    const double up = g.node_grad(self)[0];
    for (auto& v : g.grad_buffer(ix).values()) v += up;
  });
}

Var scale(Var x, double s) {
  Graph& g = x.graph();
  auto in = ids({x});
  Tensor out = practise::scale(x.value(), s);
  return g.record(std::move(out), in, [ix = in[0], s](Graph& g, std::size_t self) {
    if (!g.node_requires_grad(ix)) return;
    const Tensor& up = g.node_grad(self);
    Tensor& buf = g.grad_buffer(ix);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += s * up[i];
  });
}

Var feature_mse(Var student, Var teacher, double beta) {
  if (!(beta > 0.0)) throw ValueError("feature_mse: beta must be positive");
  Graph& g = student.graph();
  auto in = ids({student, teacher});
  const Tensor& s = student.value();
  const Tensor& t = teacher.value();
  require_same_shape(s, t, "feature_mse");
  const double batch = static_cast<double>(s.rows());
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double d = s[i] - t[i];
    acc += d * d;
  }
  Tensor out({1}, beta * acc / batch);
  return g.record(std::move(out), in, [is = in[0], it = in[1], beta, batch](Graph& g, std::size_t self) {
    const double up = g.node_grad(self)[0];
    const Tensor& s = g.node_value(is);
    const Tensor& t = g.node_value(it);
    const double c = 2.0 * beta * up / batch;
    if (g.node_requires_grad(is)) {
      auto buf = g.grad_buffer(is).values();
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += c * (s[i] - t[i]);
    }
    if (g.node_requires_grad(it)) {
      auto buf = g.grad_buffer(it).values();
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] -= c * (s[i] - t[i]);
    }
  });
}

Tensor softmax(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) throw ValueError("softmax: temperature must be positive");
  if (!logits.all_finite()) throw ValueError("softmax: non-finite logits");
  const std::size_t b = logits.rows(), c = logits.cols();
  Tensor out({b, c});
  for (std::size_t i = 0; i < b; ++i) {
    double mx = logits(i, 0) / temperature;
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits(i, j) / temperature);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out(i, j) = std::exp(logits(i, j) / temperature - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out(i, j) /= z;
  }
  return out;
}

namespace {

// Shared core: targets is a full probability table (one-hot for hard labels).
Var softmax_ce_impl(Var logits, Tensor targets, double temperature) {
  Graph& g = logits.graph();
  auto in = ids({logits});
  const Tensor& z = logits.value();
  require_same_shape(z, targets, "softmax_ce");
  const std::size_t b = z.rows(), c = z.cols();
  Tensor probs = softmax(z, temperature);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double mx = z(i, 0) / temperature;
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z(i, j) / temperature);
    double lse = 0.0;
    for (std::size_t j = 0; j < c; ++j) lse += std::exp(z(i, j) / temperature - mx);
    lse = mx + std::log(lse);
    for (std::size_t j = 0; j < c; ++j) {
      if (targets(i, j) != 0.0) loss -= targets(i, j) * (z(i, j) / temperature - lse);
    }
  }
  Tensor out({1}, loss / static_cast<double>(b));
  return g.record(std::move(out), in,
                  [iz = in[0], probs = std::move(probs), targets = std::move(targets), temperature](Graph& g,
                                                                                                    std::size_t self) {
                    if (!g.node_requires_grad(iz)) return;
                    const double up = g.node_grad(self)[0];
                    const double c = up / (temperature * static_cast<double>(probs.rows()));
                    auto buf = g.grad_buffer(iz).values();
                    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += c * (probs[i] - targets[i]);
                  });
}

}  // namespace

Var softmax_ce(Var logits, std::span<const int> labels, double temperature) {
  const Tensor& z = logits.value();
  if (z.rank() != 2) throw DimensionError("softmax_ce: logits must be b x C");
  if (labels.size() != z.rows()) {
    throw DimensionError("softmax_ce: " + std::to_string(labels.size()) + " labels for " + std::to_string(z.rows()) +
                         " rows");
  }
  Tensor onehot(z.shape(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= z.cols()) {
      throw ValueError("softmax_ce: label " + std::to_string(labels[i]) + " out of range");
    }
    onehot(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  if (!(temperature > 0.0)) throw ValueError("softmax_ce: temperature must be positive");
  if (!z.all_finite()) throw ValueError("softmax_ce: non-finite logits");
  return softmax_ce_impl(logits, std::move(onehot), temperature);
}

Var softmax_ce(Var logits, const Tensor& targets, double temperature) {
  if (!(temperature > 0.0)) throw ValueError("softmax_ce: temperature must be positive");
  const Tensor& z = logits.value();
  if (!z.all_finite()) throw ValueError("softmax_ce: non-finite logits");
  require_same_shape(z, targets, "softmax_ce");
  for (std::size_t i = 0; i < targets.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < targets.cols(); ++j) {
      if (targets(i, j) < 0.0) throw ValueError("softmax_ce: negative target probability");
      s += targets(i, j);
    }
    if (std::abs(s - 1.0) > 1e-9) throw ValueError("softmax_ce: target row " + std::to_string(i) + " does not sum to 1");
  }
  return softmax_ce_impl(logits, targets, temperature);
}

}  // namespace practise::ad

namespace practise {

void LrSchedule::validate() const {
  if (!(base_lr >= 0.0)) throw ValueError("LrSchedule: base_lr must be non-negative");
  if (total_iters == 0) throw ValueError("LrSchedule: total_iters must be positive");
  if (!(decay_factor >= 1.0)) throw ValueError("LrSchedule: decay_factor must be >= 1");
  if (!(decay_every_frac > 0.0)) throw ValueError("LrSchedule: decay_every_frac must be positive");
}

double LrSchedule::lr(std::size_t iter) const {
  const double period = decay_every_frac * static_cast<double>(total_iters);
  const double steps = std::floor(static_cast<double>(iter) / period);
  return base_lr / std::pow(decay_factor, steps);
}

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr) {
  if (!(lr >= 0.0)) throw ValueError("sgd_step: learning rate must be non-negative");
  if (params.size() != grads.size()) {
    throw DimensionError("sgd_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) require_same_shape(*params[i], grads[i], "sgd_step");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    auto g = grads[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
  }
}

}  // namespace practise
