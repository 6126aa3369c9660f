#pragma once

#include <algorithm>
#include <vector>

#include "practise/network.hpp"

namespace practise::testing {

using Vec = std::vector<double>;

inline Vec linear_loop(const Linear& l, const Vec& x) {
  Vec y(l.out());
  for (std::size_t o = 0; o < l.out(); ++o) {
    double s = l.bias[o];
    for (std::size_t i = 0; i < l.in(); ++i) s += l.weight(o, i) * x[i];
    y[o] = s;
  }
  return y;
}

inline Vec relu_loop(Vec v) {
  for (auto& x : v) x = std::max(x, 0.0);
  return v;
}

// Per-sample forward written with plain loops, independent of the batched
// kernels: returns logits.
inline Vec forward_loop(const ResNetModel& m, const Vec& x, Vec* feature_out = nullptr) {
  const auto& spec = m.spec();
  Vec h = relu_loop(linear_loop(m.stem(), x));
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    for (std::size_t i = 0; i < spec.stages[s].num_blocks; ++i) {
      if (m.is_dropped({s, i})) continue;
      const auto& b = m.block({s, i});
      Vec r = linear_loop(b.fc2, relu_loop(linear_loop(b.fc1, h)));
      for (std::size_t j = 0; j < h.size(); ++j) h[j] += r[j];
    }
    if (s + 1 < spec.stages.size()) h = relu_loop(linear_loop(m.boundary(s), h));
  }
  if (feature_out) *feature_out = h;
  return linear_loop(m.head(), h);
}

inline Vec row(const Tensor& t, std::size_t r) {
  return Vec(t.data().begin() + r * t.cols(), t.data().begin() + (r + 1) * t.cols());
}

}  // namespace practise::testing
