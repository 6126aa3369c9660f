#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "practise/autodiff.hpp"

namespace practise::testing {

// Builds a scalar loss on `g` from one leaf per input tensor.
using LossBuilder = std::function<ad::Var(ad::Graph& g, const std::vector<ad::Var>& leaves)>;

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

inline double relative_error(double a, double b) {
  double scale = std::max(std::abs(a), std::abs(b));
  if (scale < 1e-6) return std::abs(a - b) / 1e-6;
  return std::abs(a - b) / scale;
}

inline double eval_loss(const LossBuilder& build, const std::vector<Tensor>& inputs) {
  ad::Graph g;
  std::vector<ad::Var> leaves;
  for (const auto& t : inputs) leaves.push_back(g.constant(t));
  return build(g, leaves).value()[0];
}

// Analytic gradients against central differences with step h.
inline GradCheck gradcheck(const LossBuilder& build, std::vector<Tensor> inputs, double h = 1e-6) {
  ad::Graph g;
  std::vector<ad::Var> leaves;
  for (const auto& t : inputs) leaves.push_back(g.parameter(t));
  g.backward(build(g, leaves));
  GradCheck out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor analytic = g.grad(leaves[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      double keep = inputs[k][i];
      inputs[k][i] = keep + h;
      double up = eval_loss(build, inputs);
      inputs[k][i] = keep - h;
      double down = eval_loss(build, inputs);
      inputs[k][i] = keep;
      double numeric = (up - down) / (2 * h);
      out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[i], numeric));
      ++out.checked;
    }
  }
  return out;
}

// Normal entries kept away from zero so relu kinks are never straddled.
inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double margin = 0.05) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : t.values()) {
    double x = n(rng);
    while (std::abs(x) < margin) x = n(rng);
    v = x;
  }
  return t;
}

// One named case per differentiable op.
struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  LossBuilder build;
};

// sum_ij r_i v_ij c_j with fixed non-uniform r, c: an asymmetric scalar probe.
inline ad::Var probe(ad::Graph& g, ad::Var v) {
  const Tensor& x = v.value();
  Tensor r({1, x.rows()}), c({x.cols(), 1});
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::sin(1.3 * i + 0.7);
  for (std::size_t j = 0; j < c.size(); ++j) c[j] = std::cos(0.9 * j + 0.2);
  return ad::sum(ad::matmul(ad::matmul(g.constant(r), v), g.constant(c)));
}

inline std::vector<OpCase> autodiff_op_cases() {
  using namespace ad;
  std::vector<OpCase> cases;
  cases.push_back({"matmul", {{3, 4}, {4, 2}}, [](Graph& g, const std::vector<Var>& v) { return probe(g, matmul(v[0], v[1])); }});
  cases.push_back({"matmul_bt", {{3, 4}, {2, 4}}, [](Graph& g, const std::vector<Var>& v) { return probe(g, matmul_bt(v[0], v[1])); }});
  cases.push_back({"add", {{3, 4}, {3, 4}}, [](Graph& g, const std::vector<Var>& v) { return probe(g, add(v[0], v[1])); }});
  cases.push_back({"add_bias", {{3, 4}, {4}}, [](Graph& g, const std::vector<Var>& v) { return probe(g, add_bias(v[0], v[1])); }});
  cases.push_back({"relu", {{3, 4}}, [](Graph& g, const std::vector<Var>& v) { return probe(g, relu(v[0])); }});
  cases.push_back({"scale", {{3, 4}}, [](Graph& g, const std::vector<Var>& v) { return probe(g, scale(v[0], -2.5)); }});
  cases.push_back({"sum", {{3, 4}}, [](Graph&, const std::vector<Var>& v) { return sum(v[0]); }});
  cases.push_back({"feature_mse", {{4, 3}, {4, 3}}, [](Graph&, const std::vector<Var>& v) { return feature_mse(v[0], v[1], 0.7); }});
  cases.push_back({"softmax_ce_labels", {{4, 3}}, [](Graph&, const std::vector<Var>& v) {
                     static const std::vector<int> labels{0, 2, 1, 2};
                     return softmax_ce(v[0], labels, 2.0);
                   }});
  cases.push_back({"softmax_ce_soft", {{4, 3}}, [](Graph&, const std::vector<Var>& v) {
                     Tensor t = softmax(Tensor::matrix({{0.1, 0.5, -0.3}, {1.0, 0.0, 0.2}, {-1, 2, 0}, {0.3, 0.3, 0.9}}));
                     return softmax_ce(v[0], t, 3.0);
                   }});
  cases.push_back({"mlp_composite", {{5, 3}, {4, 3}, {4}, {2, 4}}, [](Graph& g, const std::vector<Var>& v) {
                     Var h = relu(add_bias(matmul_bt(v[0], v[1]), v[2]));
                     Var out = matmul_bt(h, v[3]);
                     return add(feature_mse(out, g.constant(Tensor({5, 2}, 0.25)), 1.0), probe(g, out));
                   }});
  return cases;
}

}  // namespace practise::testing
