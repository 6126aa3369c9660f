#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "practise/autodiff.hpp"
#include "practise/data.hpp"
#include "practise/tensor.hpp"

namespace practise {

struct StageSpec {
  std::size_t width = 0;
  std::size_t num_blocks = 0;
  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

// stem (input_dim -> width_0) -> stages of width-preserving residual blocks,
// joined by boundary linears width_s -> width_{s+1} -> head.
struct ResNetSpec {
  std::size_t input_dim = 0;
  std::vector<StageSpec> stages;
  std::size_t num_classes = 0;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t feature_dim() const { return stages.back().width; }
  friend bool operator==(const ResNetSpec&, const ResNetSpec&) = default;
};

struct BlockId {
  std::size_t stage = 0;
  std::size_t index = 0;
  auto operator<=>(const BlockId&) const = default;
  std::string name() const;
};

std::vector<BlockId> droppable_blocks(const ResNetSpec& spec);

// y = x W^T + b with W stored out x in.
struct Linear {
  Tensor weight;
  Tensor bias;
  std::size_t in() const { return weight.cols(); }
  std::size_t out() const { return weight.rows(); }
};

// block(x) = x + W2 relu(W1 x + b1) + b2
struct ResidualBlock {
  Linear fc1;
  Linear fc2;
  std::size_t hidden() const { return fc1.out(); }
};

enum class LayerKind { stem, block_fc1, block_fc2, boundary, head };

// Stable name of one linear layer, e.g. "stem", "stage0.block1.fc2",
// "boundary0", "head".
struct LayerRef {
  LayerKind kind = LayerKind::stem;
  std::size_t stage = 0;  // block / boundary stage
  std::size_t index = 0;  // block index
  std::string name() const;
  auto operator<=>(const LayerRef&) const = default;
};

struct ParamRef {
  std::string name;
  Tensor* tensor;
};
struct ConstParamRef {
  std::string name;
  const Tensor* tensor;
};

struct LayoutEntry {
  std::string name;
  std::size_t offset = 0;
  Shape shape;
  friend bool operator==(const LayoutEntry&, const LayoutEntry&) = default;
};
using Layout = std::vector<LayoutEntry>;

struct ParamVector {
  std::vector<double> values;
  Layout layout;
};

class ResNetModel {
 public:
  ResNetModel() = default;
  explicit ResNetModel(ResNetSpec spec);  // zero-initialized; see build()

  const ResNetSpec& spec() const { return spec_; }
  const std::set<BlockId>& dropped() const { return dropped_; }
  bool is_dropped(BlockId b) const { return dropped_.count(b) != 0; }
  bool has_block(BlockId b) const;
  void require_block(BlockId b) const;

  Linear& stem() { return stem_; }
  const Linear& stem() const { return stem_; }
  Linear& head() { return head_; }
  const Linear& head() const { return head_; }
  ResidualBlock& block(BlockId b);
  const ResidualBlock& block(BlockId b) const;
  Linear& boundary(std::size_t stage);
  const Linear& boundary(std::size_t stage) const;
  Linear& layer(const LayerRef& ref);
  const Linear& layer(const LayerRef& ref) const;

  // Every linear layer present in the forward pass, in execution order.
  std::vector<LayerRef> layers() const;
  std::vector<BlockId> active_blocks() const;

  // Adds b to the dropped set and releases its parameters.
  void drop(BlockId b);
  // Replace a block's hidden width (filter pruning, architectural form).
  void set_block(BlockId b, ResidualBlock block);

  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;
  Layout layout() const;
  std::size_t parameter_count() const;

 private:
  ResNetSpec spec_;
  Linear stem_;
  std::vector<std::vector<ResidualBlock>> blocks_;
  std::vector<Linear> boundaries_;
  Linear head_;
  std::set<BlockId> dropped_;
};

// Scaled Gaussian init with std 1/sqrt(fan_in), weights and biases alike,
// seeded by spec.seed.
ResNetModel build(const ResNetSpec& spec);

class AdaptorSet;

struct ForwardResult {
  Tensor feature;  // b x width_last, pre-head
  Tensor logits;   // b x C
};

ForwardResult forward(const ResNetModel& model, const Tensor& x, const AdaptorSet* adaptors = nullptr);
Tensor feature(const ResNetModel& model, const Tensor& x, const AdaptorSet* adaptors = nullptr);

// Parameters and adaptors of one model as leaves of a graph.
struct GraphBinding {
  std::vector<ad::Var> params;  // parallel to model.parameters()
  std::map<std::string, std::pair<ad::Var, ad::Var>> linears;
  std::map<std::string, ad::Var> adaptors;  // keyed by AdaptorKey::name()
};

using TrainablePredicate = std::function<bool(std::string_view param_name)>;

GraphBinding bind(ad::Graph& graph, const ResNetModel& model, const TrainablePredicate& trainable,
                  const AdaptorSet* adaptors = nullptr, bool adaptors_trainable = false);

struct GraphForward {
  ad::Var feature;
  ad::Var logits;
};
// Graph version of forward(); adaptors come from the binding.
GraphForward forward(const ResNetModel& model, const GraphBinding& binding, ad::Var x, bool with_head = true);

ParamVector flatten(const ResNetModel& model);
// Rebuilds a model with the architecture of `shape_like` from flat values.
ResNetModel unflatten(const Layout& layout, std::span<const double> values, const ResNetModel& shape_like);
ResNetModel unflatten(const Layout& layout, std::span<const double> values, const ResNetSpec& spec,
                      const std::set<BlockId>& dropped);

std::size_t count_flops(const ResNetModel& model);

double accuracy(const ResNetModel& model, const Dataset& data);
double cross_entropy(const ResNetModel& model, const Dataset& data);

struct TeacherTraining {
  std::size_t iters = 2000;
  LrSchedule schedule{0.05, 2000};
  std::size_t batch = 64;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ResNetModel model;
  std::vector<double> loss_trace;
};

// Minimizes softmax cross-entropy (T = 1) on the train split of `data`.
TrainResult train_teacher(const ResNetModel& model, const Dataset& data, const TeacherTraining& cfg);

nlohmann::json spec_to_json(const ResNetSpec& spec);
ResNetSpec spec_from_json(const nlohmann::json& j);

void save_checkpoint(const ResNetModel& model, const std::filesystem::path& path);
ResNetModel load_checkpoint(const std::filesystem::path& path);
nlohmann::json checkpoint_json(const ResNetModel& model);
ResNetModel checkpoint_from_json(const nlohmann::json& j);

// Order-sensitive digest of every parameter value, for "untouched" checks.
std::uint64_t parameter_checksum(const ResNetModel& model);

}  // namespace practise
