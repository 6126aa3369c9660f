#pragma once

#include <vector>

#include "practise/compress.hpp"
#include "practise/practise.hpp"

namespace practise {

// First k active blocks in BlockId order: (stage 0, 0..k-1) when stage 0 is deep enough.
std::vector<BlockId> first_k_blocks(const ResNetModel& model, std::size_t k);
ResNetModel drop_blocks(const ResNetModel& model, const std::vector<BlockId>& blocks);

// Filter-prune spec removing as many FLOPs as dropping k of the model's blocks.
FilterPruneSpec flops_matched_filter_spec(const ResNetModel& model, std::size_t k);
// Spec that removes exactly `units` hidden units from every block of width `width`.
FilterPruneSpec filter_spec_for_units(std::size_t units, std::size_t width);

struct FilterMatch {
  ResNetModel model;  // shrunk form
  std::size_t pruned_units = 0;
  LatencyStats latency;
  AccelerationRatio tau;
};
// Smallest per-block pruned-unit count whose measured acceleration ratio
// reaches `target_tau` (binary search; falls back to the maximum).
FilterMatch filter_prune_latency_matched(const ResNetModel& model, double target_tau, const LatencyConfig& latency);

// L2 criterion: mean squared feature change on `tiny` after dropping each
// block, without adaptors or finetuning. Lower drops first.
std::vector<BlockScore> l2_block_scores(const ResNetModel& model, const Dataset& tiny);

}  // namespace practise
