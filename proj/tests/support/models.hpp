#pragma once

#include <random>

#include "practise/compress.hpp"
#include "practise/network.hpp"

namespace practise::testing {

// Small random architecture: 1-3 stages of width 3-8 with 1-3 blocks each.
inline ResNetSpec random_spec(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> stages(1, 3), width(3, 8), blocks(1, 3), dim(2, 6), classes(2, 5);
  ResNetSpec spec{dim(rng), {}, classes(rng), rng()};
  for (std::size_t s = stages(rng); s > 0; --s) spec.stages.push_back({width(rng), blocks(rng)});
  return spec;
}

// Every adaptor replaced by identity + noise * N(0, 1).
inline void perturb(AdaptorSet& set, std::mt19937_64& rng, double noise = 0.3) {
  std::normal_distribution<double> n(0.0, noise);
  for (auto& [key, m] : set.entries())
    for (auto& v : m.values()) v += n(rng);
}

}  // namespace practise::testing
