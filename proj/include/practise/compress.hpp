#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "practise/network.hpp"

namespace practise {

enum class Side { before, after };

struct AdaptorKey {
  LayerRef layer;
  Side side = Side::after;
  std::string name() const;
  auto operator<=>(const AdaptorKey&) const = default;
};

// Square matrices attached next to linear layers. side=after maps the layer
// output (y -> A y), side=before maps its input (x -> A x).
class AdaptorSet {
 public:
  void set(const AdaptorKey& key, Tensor matrix);
  const Tensor* find(const LayerRef& layer, Side side) const;
  Tensor& at(const AdaptorKey& key);
  const Tensor& at(const AdaptorKey& key) const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::map<AdaptorKey, Tensor>& entries() const { return entries_; }
  std::map<AdaptorKey, Tensor>& entries() { return entries_; }

 private:
  std::map<AdaptorKey, Tensor> entries_;
};

// Residual branch W1,b1,W2,b2 set to zero; architecture unchanged.
ResNetModel zero_block(const ResNetModel& model, BlockId b);
// Block removed from the forward pass and from the parameter layout.
ResNetModel drop_block(const ResNetModel& model, BlockId b);

struct FilterPruneSpec {
  double ratio = 0.25;
  void validate() const;
  std::size_t pruned_units(std::size_t width) const;
};

// Hidden units of fc1 with the smallest row L1 norm, ascending by norm with
// ties broken by lower index.
std::vector<std::size_t> lowest_l1_rows(const Tensor& weight, std::size_t count);

// Zeroed form: selected fc1 rows, b1 entries and fc2 columns set to zero.
ResNetModel prune_filters(const ResNetModel& model, const FilterPruneSpec& spec);
// Architectural form: those hidden units are physically removed.
ResNetModel prune_filters_shrunk(const ResNetModel& model, const FilterPruneSpec& spec);

// Number of neighbouring blocks (same stage) that receive adaptors; nullopt
// means the whole stage.
using AdaptorRadius = std::optional<std::size_t>;

struct AdaptedModel {
  ResNetModel model;
  AdaptorSet adaptors;
};

// Identity adaptors around a dropped position: blocks in front of it get
// side=after on fc1/fc2, blocks behind it side=before, the incoming stem or
// boundary side=after and the outgoing boundary or head side=before. The skip
// path is never adapted.
AdaptedModel insert_adaptors(const ResNetModel& pruned, BlockId dropped, AdaptorRadius radius = std::nullopt);

// after: W <- A W, b <- A b; before: W <- W A.
ResNetModel fuse_adaptors(const ResNetModel& model, const AdaptorSet& adaptors);

}  // namespace practise
