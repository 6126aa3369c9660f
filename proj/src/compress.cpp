#include "practise/compress.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "practise/errors.hpp"

namespace practise {

std::string AdaptorKey::name() const { return layer.name() + (side == Side::after ? ":after" : ":before"); }

void AdaptorSet::set(const AdaptorKey& key, Tensor matrix) {
  if (matrix.rank() != 2 || matrix.rows() != matrix.cols()) {
    throw DimensionError("adaptor " + key.name() + " must be square, got " + shape_to_string(matrix.shape()));
  }
  entries_[key] = std::move(matrix);
}

const Tensor* AdaptorSet::find(const LayerRef& layer, Side side) const {
  auto it = entries_.find(AdaptorKey{layer, side});
  return it == entries_.end() ? nullptr : &it->second;
}

Tensor& AdaptorSet::at(const AdaptorKey& key) {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ValueError("no adaptor " + key.name());
  return it->second;
}

const Tensor& AdaptorSet::at(const AdaptorKey& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ValueError("no adaptor " + key.name());
  return it->second;
}

ResNetModel zero_block(const ResNetModel& model, BlockId b) {
  ResNetModel out = model;
  ResidualBlock& blk = out.block(b);
  blk.fc1.weight.fill(0.0);
  blk.fc1.bias.fill(0.0);
  blk.fc2.weight.fill(0.0);
  blk.fc2.bias.fill(0.0);
  return out;
}

ResNetModel drop_block(const ResNetModel& model, BlockId b) {
  ResNetModel out = model;
  out.drop(b);
  return out;
}

void FilterPruneSpec::validate() const {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValueError("filter prune ratio must lie in (0, 1)");
}

std::size_t FilterPruneSpec::pruned_units(std::size_t width) const {
  validate();
  auto n = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(width)));
  return std::min(n, width - 1);
}

std::vector<std::size_t> lowest_l1_rows(const Tensor& weight, std::size_t count) {
  std::vector<double> norms(weight.rows(), 0.0);
  for (std::size_t i = 0; i < weight.rows(); ++i)
    for (std::size_t j = 0; j < weight.cols(); ++j) norms[i] += std::abs(weight(i, j));
  std::vector<std::size_t> order(weight.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norms[a] < norms[b]; });
  order.resize(std::min(count, order.size()));
  return order;
}

ResNetModel prune_filters(const ResNetModel& model, const FilterPruneSpec& spec) {
  spec.validate();
  ResNetModel out = model;
  for (auto b : out.active_blocks()) {
    ResidualBlock& blk = out.block(b);
    for (auto r : lowest_l1_rows(blk.fc1.weight, spec.pruned_units(blk.hidden()))) {
      for (std::size_t j = 0; j < blk.fc1.weight.cols(); ++j) blk.fc1.weight(r, j) = 0.0;
      blk.fc1.bias[r] = 0.0;
      for (std::size_t i = 0; i < blk.fc2.weight.rows(); ++i) blk.fc2.weight(i, r) = 0.0;
    }
  }
  return out;
}

ResNetModel prune_filters_shrunk(const ResNetModel& model, const FilterPruneSpec& spec) {
  spec.validate();
  ResNetModel out = model;
  for (auto b : out.active_blocks()) {
    const ResidualBlock& blk = out.block(b);
    auto pruned = lowest_l1_rows(blk.fc1.weight, spec.pruned_units(blk.hidden()));
    std::vector<bool> drop(blk.hidden(), false);
    for (auto r : pruned) drop[r] = true;
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < blk.hidden(); ++r) {
      if (!drop[r]) keep.push_back(r);
    }
    const std::size_t w = blk.fc1.in();
    const std::size_t h = keep.size();
    ResidualBlock shrunk{{Tensor({h, w}), Tensor({h})}, {Tensor({w, h}), blk.fc2.bias}};
    for (std::size_t k = 0; k < h; ++k) {
      for (std::size_t j = 0; j < w; ++j) shrunk.fc1.weight(k, j) = blk.fc1.weight(keep[k], j);
      shrunk.fc1.bias[k] = blk.fc1.bias[keep[k]];
      for (std::size_t i = 0; i < w; ++i) shrunk.fc2.weight(i, k) = blk.fc2.weight(i, keep[k]);
    }
    out.set_block(b, std::move(shrunk));
  }
  return out;
}

AdaptedModel insert_adaptors(const ResNetModel& pruned, BlockId dropped, AdaptorRadius radius) {
  pruned.require_block(dropped);
  if (!pruned.is_dropped(dropped)) {
    throw ValueError("insert_adaptors: block " + dropped.name() + " has not been removed from the model");
  }
  AdaptedModel out{pruned, {}};
  auto add = [&](const LayerRef& ref, Side side) {
    const Linear& l = pruned.layer(ref);
    out.adaptors.set({ref, side}, Tensor::identity(side == Side::after ? l.out() : l.in()));
  };

  const std::size_t s = dropped.stage;
  const std::size_t stages = pruned.spec().stages.size();
  add(s == 0 ? LayerRef{LayerKind::stem} : LayerRef{LayerKind::boundary, s - 1}, Side::after);
  for (std::size_t i = 0; i < pruned.spec().stages[s].num_blocks; ++i) {
    if (i == dropped.index || pruned.is_dropped({s, i})) continue;
    const std::size_t dist = i < dropped.index ? dropped.index - i : i - dropped.index;
    if (radius && dist > *radius) continue;
    const Side side = i < dropped.index ? Side::after : Side::before;
    add({LayerKind::block_fc1, s, i}, side);
    add({LayerKind::block_fc2, s, i}, side);
  }
  add(s + 1 == stages ? LayerRef{LayerKind::head} : LayerRef{LayerKind::boundary, s}, Side::before);
  return out;
}

ResNetModel fuse_adaptors(const ResNetModel& model, const AdaptorSet& adaptors) {
  ResNetModel out = model;
  for (const auto& [key, a] : adaptors.entries()) {
    Linear& l = out.layer(key.layer);
    if (key.side == Side::after) {
      if (a.rows() != l.out()) {
        throw DimensionError("fuse_adaptors: " + key.name() + " is " + shape_to_string(a.shape()) +
                             " but the layer has " + std::to_string(l.out()) + " outputs");
      }
      l.weight = matmul(a, l.weight);
      Tensor b = matmul_bt(Tensor({1, l.bias.size()}, l.bias.data()), a);
      l.bias = Tensor({l.bias.size()}, b.data());
    } else {
      if (a.rows() != l.in()) {
        throw DimensionError("fuse_adaptors: " + key.name() + " is " + shape_to_string(a.shape()) +
                             " but the layer has " + std::to_string(l.in()) + " inputs");
      }
      l.weight = matmul(l.weight, a);
    }
  }
  return out;
}

}  // namespace practise
