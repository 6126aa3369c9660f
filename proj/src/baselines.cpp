#include "practise/baselines.hpp"

#include <cmath>

#include "practise/errors.hpp"

namespace practise {

std::vector<BlockId> first_k_blocks(const ResNetModel& model, std::size_t k) {
  auto blocks = model.active_blocks();
  if (k > blocks.size()) throw ValueError("first_k_blocks: k exceeds the number of droppable blocks");
  blocks.resize(k);
  return blocks;
}

ResNetModel drop_blocks(const ResNetModel& model, const std::vector<BlockId>& blocks) {
  ResNetModel out = model;
  for (auto b : blocks) out.drop(b);
  return out;
}

FilterPruneSpec flops_matched_filter_spec(const ResNetModel& model, std::size_t k) {
  const auto blocks = model.active_blocks();
  if (k == 0 || k >= blocks.size()) throw ValueError("flops_matched_filter_spec: k must lie in [1, blocks)");
  // Block FLOPs are proportional to width * hidden; removing a fraction r of
  // hidden units everywhere removes a fraction r of all block FLOPs.
  double total = 0.0;
  std::vector<double> per;
  for (auto b : blocks) {
    const auto& blk = model.block(b);
    per.push_back(static_cast<double>(blk.fc1.in() * blk.hidden()));
    total += per.back();
  }
  double removed = 0.0;
  for (std::size_t i = 0; i < k; ++i) removed += per[i];
  return {removed / total};
}

FilterPruneSpec filter_spec_for_units(std::size_t units, std::size_t width) {
  if (units == 0 || units >= width) throw ValueError("filter_spec_for_units: units must lie in [1, width)");
  return {(static_cast<double>(units) + 0.5) / static_cast<double>(width)};
}

FilterMatch filter_prune_latency_matched(const ResNetModel& model, double target_tau, const LatencyConfig& latency) {
  const auto blocks = model.active_blocks();
  if (blocks.empty()) throw ValueError("filter_prune_latency_matched: no blocks");
  const std::size_t width = model.block(blocks.front()).hidden();
  for (auto b : blocks) {
    if (model.block(b).hidden() != width) throw ValueError("filter_prune_latency_matched: blocks differ in width");
  }
  auto attempt = [&](std::size_t units) {
    FilterMatch m{prune_filters_shrunk(model, filter_spec_for_units(units, width)), units, {}, {}};
    LatencyComparison c = compare_latency(model, m.model, latency);
    m.latency = c.pruned;
    m.tau = c.ratio;
    return m;
  };
  std::size_t lo = 1, hi = width - 1;
  FilterMatch best = attempt(hi);
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    FilterMatch m = attempt(mid);
    if (m.tau.raw >= target_tau) {
      best = std::move(m);
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  if (best.pruned_units != lo) best = attempt(lo);
  return best;
}

std::vector<BlockScore> l2_block_scores(const ResNetModel& model, const Dataset& tiny) {
  const Tensor target = feature(model, tiny.features);
  std::vector<BlockScore> out;
  for (auto b : model.active_blocks()) {
    Tensor f = feature(drop_block(model, b), tiny.features);
    double d = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) d += (f[i] - target[i]) * (f[i] - target[i]);
    BlockScore s;
    s.block = b;
    s.recoverability = d / static_cast<double>(tiny.size());
    s.tau = 1.0;
    s.score = s.recoverability;
    out.push_back(s);
  }
  return out;
}

}  // namespace practise
