#include "practise/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>

#include "practise/compress.hpp"
#include "practise/errors.hpp"

namespace practise {

void ResNetSpec::validate() const {
  if (input_dim == 0) throw ValueError("ResNetSpec: input_dim must be positive");
  if (num_classes == 0) throw ValueError("ResNetSpec: num_classes must be positive");
  if (stages.empty()) throw ValueError("ResNetSpec: at least one stage is required");
  for (const auto& s : stages) {
    if (s.width == 0) throw ValueError("ResNetSpec: stage widths must be positive");
  }
}

std::string BlockId::name() const { return "stage" + std::to_string(stage) + ".block" + std::to_string(index); }

std::vector<BlockId> droppable_blocks(const ResNetSpec& spec) {
  std::vector<BlockId> out;
  for (std::size_t s = 0; s < spec.stages.size(); ++s)
    for (std::size_t i = 0; i < spec.stages[s].num_blocks; ++i) out.push_back({s, i});
  return out;
}

std::string LayerRef::name() const {
  switch (kind) {
    case LayerKind::stem:
      return "stem";
    case LayerKind::block_fc1:
      return BlockId{stage, index}.name() + ".fc1";
    case LayerKind::block_fc2:
      return BlockId{stage, index}.name() + ".fc2";
    case LayerKind::boundary:
      return "boundary" + std::to_string(stage);
    case LayerKind::head:
      return "head";
  }
  return "?";
}

namespace {

Linear zero_linear(std::size_t in, std::size_t out) { return {Tensor({out, in}), Tensor({out})}; }

}  // namespace

ResNetModel::ResNetModel(ResNetSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const auto& st = spec_.stages;
  stem_ = zero_linear(spec_.input_dim, st.front().width);
  blocks_.resize(st.size());
  for (std::size_t s = 0; s < st.size(); ++s) {
    for (std::size_t i = 0; i < st[s].num_blocks; ++i) {
      blocks_[s].push_back({zero_linear(st[s].width, st[s].width), zero_linear(st[s].width, st[s].width)});
    }
    if (s + 1 < st.size()) boundaries_.push_back(zero_linear(st[s].width, st[s + 1].width));
  }
  head_ = zero_linear(st.back().width, spec_.num_classes);
}

bool ResNetModel::has_block(BlockId b) const {
  return b.stage < spec_.stages.size() && b.index < spec_.stages[b.stage].num_blocks;
}

void ResNetModel::require_block(BlockId b) const {
  if (!has_block(b)) throw ValueError("no droppable block " + b.name() + " in this architecture");
}

ResidualBlock& ResNetModel::block(BlockId b) {
  require_block(b);
  if (is_dropped(b)) throw ValueError("block " + b.name() + " has been dropped");
  return blocks_[b.stage][b.index];
}

const ResidualBlock& ResNetModel::block(BlockId b) const {
  require_block(b);
  if (is_dropped(b)) throw ValueError("block " + b.name() + " has been dropped");
  return blocks_[b.stage][b.index];
}

Linear& ResNetModel::boundary(std::size_t stage) { return boundaries_.at(stage); }
const Linear& ResNetModel::boundary(std::size_t stage) const { return boundaries_.at(stage); }

Linear& ResNetModel::layer(const LayerRef& ref) {
  return const_cast<Linear&>(static_cast<const ResNetModel&>(*this).layer(ref));
}

const Linear& ResNetModel::layer(const LayerRef& ref) const {
  switch (ref.kind) {
    case LayerKind::stem:
      return stem_;
    case LayerKind::block_fc1:
      return block({ref.stage, ref.index}).fc1;
    case LayerKind::block_fc2:
      return block({ref.stage, ref.index}).fc2;
    case LayerKind::boundary:
      if (ref.stage >= boundaries_.size()) throw ValueError("no layer " + ref.name());
      return boundaries_[ref.stage];
    case LayerKind::head:
      return head_;
  }
  throw ValueError("unknown layer kind");
}

std::vector<LayerRef> ResNetModel::layers() const {
  std::vector<LayerRef> out{{LayerKind::stem}};
  for (std::size_t s = 0; s < blocks_.size(); ++s) {
    for (std::size_t i = 0; i < blocks_[s].size(); ++i) {
      if (is_dropped({s, i})) continue;
      out.push_back({LayerKind::block_fc1, s, i});
      out.push_back({LayerKind::block_fc2, s, i});
    }
    if (s < boundaries_.size()) out.push_back({LayerKind::boundary, s});
  }
  out.push_back({LayerKind::head});
  return out;
}

std::vector<BlockId> ResNetModel::active_blocks() const {
  std::vector<BlockId> out;
  for (auto b : droppable_blocks(spec_)) {
    if (!is_dropped(b)) out.push_back(b);
  }
  return out;
}

void ResNetModel::drop(BlockId b) {
  require_block(b);
  if (is_dropped(b)) throw ValueError("block " + b.name() + " is already dropped");
  dropped_.insert(b);
  blocks_[b.stage][b.index] = ResidualBlock{};
}

void ResNetModel::set_block(BlockId b, ResidualBlock blk) {
  auto& cur = block(b);
  const std::size_t w = spec_.stages[b.stage].width;
  if (blk.fc1.in() != w || blk.fc2.out() != w || blk.fc1.out() != blk.fc2.in() || blk.fc1.bias.size() != blk.fc1.out() ||
      blk.fc2.bias.size() != w) {
    throw DimensionError("set_block: block shapes do not fit stage width " + std::to_string(w));
  }
  cur = std::move(blk);
}

std::vector<ParamRef> ResNetModel::parameters() {
  std::vector<ParamRef> out;
  auto push = [&](const std::string& prefix, Linear& l) {
    out.push_back({prefix + ".weight", &l.weight});
    out.push_back({prefix + ".bias", &l.bias});
  };
  for (const auto& ref : layers()) push(ref.name(), layer(ref));
  return out;
}

std::vector<ConstParamRef> ResNetModel::parameters() const {
  std::vector<ConstParamRef> out;
  for (auto& p : const_cast<ResNetModel&>(*this).parameters()) out.push_back({p.name, p.tensor});
  return out;
}

Layout ResNetModel::layout() const {
  Layout out;
  std::size_t offset = 0;
  for (const auto& p : parameters()) {
    out.push_back({p.name, offset, p.tensor->shape()});
    offset += p.tensor->size();
  }
  return out;
}

std::size_t ResNetModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->size();
  return n;
}

ResNetModel build(const ResNetSpec& spec) {
  ResNetModel model(spec);
  std::mt19937_64 rng(spec.seed);
  for (const auto& ref : model.layers()) {
    Linear& l = model.layer(ref);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(l.in())));
    for (auto& v : l.weight.values()) v = normal(rng);
    for (auto& v : l.bias.values()) v = normal(rng);
  }
  return model;
}

namespace {

Tensor apply_linear(const Tensor& x, const Linear& l, const LayerRef& ref, const AdaptorSet* adaptors) {
  const Tensor* before = adaptors ? adaptors->find(ref, Side::before) : nullptr;
  const Tensor* after = adaptors ? adaptors->find(ref, Side::after) : nullptr;
  Tensor y = before ? add_row_vector(matmul_bt(matmul_bt(x, *before), l.weight), l.bias)
                    : add_row_vector(matmul_bt(x, l.weight), l.bias);
  if (after) y = matmul_bt(y, *after);
  return y;
}

Tensor run_trunk(const ResNetModel& model, const Tensor& x, const AdaptorSet* adaptors) {
  const auto& spec = model.spec();
  if (x.rank() != 2 || x.cols() != spec.input_dim) {
    throw DimensionError("forward: input " + shape_to_string(x.shape()) + " does not match input_dim " +
                         std::to_string(spec.input_dim));
  }
  Tensor h = relu(apply_linear(x, model.stem(), {LayerKind::stem}, adaptors));
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    for (std::size_t i = 0; i < spec.stages[s].num_blocks; ++i) {
      if (model.is_dropped({s, i})) continue;
      const auto& blk = model.block({s, i});
      Tensor a = relu(apply_linear(h, blk.fc1, {LayerKind::block_fc1, s, i}, adaptors));
      h = add(h, apply_linear(a, blk.fc2, {LayerKind::block_fc2, s, i}, adaptors));
    }
    if (s + 1 < spec.stages.size()) h = relu(apply_linear(h, model.boundary(s), {LayerKind::boundary, s}, adaptors));
  }
  return h;
}

}  // namespace

ForwardResult forward(const ResNetModel& model, const Tensor& x, const AdaptorSet* adaptors) {
  ForwardResult r;
  r.feature = run_trunk(model, x, adaptors);
  r.logits = apply_linear(r.feature, model.head(), {LayerKind::head}, adaptors);
  return r;
}

Tensor feature(const ResNetModel& model, const Tensor& x, const AdaptorSet* adaptors) {
  return run_trunk(model, x, adaptors);
}

GraphBinding bind(ad::Graph& graph, const ResNetModel& model, const TrainablePredicate& trainable,
                  const AdaptorSet* adaptors, bool adaptors_trainable) {
  GraphBinding b;
  for (const auto& ref : model.layers()) {
    const Linear& l = model.layer(ref);
    const std::string name = ref.name();
    auto make = [&](const std::string& pname, const Tensor& t) {
      return trainable && trainable(pname) ? graph.parameter(t) : graph.constant(t);
    };
    ad::Var w = make(name + ".weight", l.weight);
    ad::Var bias = make(name + ".bias", l.bias);
    b.params.push_back(w);
    b.params.push_back(bias);
    b.linears.emplace(name, std::make_pair(w, bias));
  }
  if (adaptors) {
    for (const auto& [key, m] : adaptors->entries()) {
      b.adaptors.emplace(key.name(), adaptors_trainable ? graph.parameter(m) : graph.constant(m));
    }
  }
  return b;
}

namespace {

ad::Var graph_linear(ad::Var x, const LayerRef& ref, const GraphBinding& b) {
  const std::string name = ref.name();
  const auto& [w, bias] = b.linears.at(name);
  auto before = b.adaptors.find(AdaptorKey{ref, Side::before}.name());
  auto after = b.adaptors.find(AdaptorKey{ref, Side::after}.name());
  if (before != b.adaptors.end()) x = ad::matmul_bt(x, before->second);
  ad::Var y = ad::add_bias(ad::matmul_bt(x, w), bias);
  if (after != b.adaptors.end()) y = ad::matmul_bt(y, after->second);
  return y;
}

}  // namespace

GraphForward forward(const ResNetModel& model, const GraphBinding& binding, ad::Var x, bool with_head) {
  const auto& spec = model.spec();
  if (x.value().rank() != 2 || x.value().cols() != spec.input_dim) {
    throw DimensionError("forward: input " + shape_to_string(x.value().shape()) + " does not match input_dim " +
                         std::to_string(spec.input_dim));
  }
  ad::Var h = ad::relu(graph_linear(x, {LayerKind::stem}, binding));
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    for (std::size_t i = 0; i < spec.stages[s].num_blocks; ++i) {
      if (model.is_dropped({s, i})) continue;
      ad::Var a = ad::relu(graph_linear(h, {LayerKind::block_fc1, s, i}, binding));
      h = ad::add(h, graph_linear(a, {LayerKind::block_fc2, s, i}, binding));
    }
    if (s + 1 < spec.stages.size()) h = ad::relu(graph_linear(h, {LayerKind::boundary, s}, binding));
  }
  GraphForward out{h, h};
  if (with_head) out.logits = graph_linear(h, {LayerKind::head}, binding);
  return out;
}

ParamVector flatten(const ResNetModel& model) {
  ParamVector pv;
  pv.layout = model.layout();
  pv.values.reserve(model.parameter_count());
  for (const auto& p : model.parameters()) {
    pv.values.insert(pv.values.end(), p.tensor->values().begin(), p.tensor->values().end());
  }
  return pv;
}

namespace {

std::size_t layout_size(const Layout& layout) {
  return layout.empty() ? 0 : layout.back().offset + shape_product(layout.back().shape);
}

}  // namespace

ResNetModel unflatten(const Layout& layout, std::span<const double> values, const ResNetModel& shape_like) {
  if (layout != shape_like.layout()) throw DimensionError("unflatten: layout does not match the architecture");
  if (values.size() != layout_size(layout)) {
    throw DimensionError("unflatten: " + std::to_string(values.size()) + " values for a layout of " +
                         std::to_string(layout_size(layout)));
  }
  ResNetModel out = shape_like;
  auto params = out.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor->values();
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(layout[i].offset), dst.size(), dst.begin());
  }
  return out;
}

ResNetModel unflatten(const Layout& layout, std::span<const double> values, const ResNetSpec& spec,
                      const std::set<BlockId>& dropped) {
  ResNetModel shape(spec);
  for (auto b : dropped) shape.drop(b);
  // Hidden widths come from the layout so shrunk (filter-pruned) models load too.
  for (auto b : shape.active_blocks()) {
    const std::string prefix = b.name();
    auto it = std::find_if(layout.begin(), layout.end(), [&](const LayoutEntry& e) { return e.name == prefix + ".fc1.weight"; });
    if (it == layout.end() || it->shape.size() != 2) throw DimensionError("unflatten: layout lacks " + prefix);
    const std::size_t hidden = it->shape[0];
    const std::size_t w = spec.stages[b.stage].width;
    shape.set_block(b, {{Tensor({hidden, w}), Tensor({hidden})}, {Tensor({w, hidden}), Tensor({w})}});
  }
  return unflatten(layout, values, shape);
}

std::size_t count_flops(const ResNetModel& model) {
  std::size_t flops = 0;
  for (const auto& ref : model.layers()) {
    const Linear& l = model.layer(ref);
    flops += 2 * l.weight.rows() * l.weight.cols();
  }
  return flops;
}

double accuracy(const ResNetModel& model, const Dataset& data) {
  Tensor logits = forward(model, data.features).logits;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    if (static_cast<int>(best) == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

double cross_entropy(const ResNetModel& model, const Dataset& data) {
  ad::Graph g;
  ad::Var z = g.constant(forward(model, data.features).logits);
  return ad::softmax_ce(z, data.labels, 1.0).value()[0];
}

TrainResult train_teacher(const ResNetModel& model, const Dataset& data, const TeacherTraining& cfg) {
  auto train_idx = data.indices_of(Split::train);
  if (train_idx.empty()) throw ValueError("train_teacher: empty training split");
  Dataset train = data.rows(train_idx);
  TrainResult result{model, {}};
  if (cfg.iters == 0) return result;
  cfg.schedule.validate();
  MinibatchSampler sampler(train.size(), cfg.batch, cfg.seed);
  auto all = [](std::string_view) { return true; };
  std::vector<Tensor> grads;
  for (std::size_t it = 0; it < cfg.iters; ++it) {
    auto idx = sampler.next();
    ad::Graph g;
    GraphBinding b = practise::bind(g, result.model, all);
    ad::Var x = g.constant(gather_rows(train.features, idx));
    std::vector<int> labels;
    labels.reserve(idx.size());
    for (auto i : idx) labels.push_back(train.labels[i]);
    GraphForward f = forward(result.model, b, x);
    ad::Var loss = ad::softmax_ce(f.logits, labels, 1.0);
    g.backward(loss);
    result.loss_trace.push_back(loss.value()[0]);
    auto params = result.model.parameters();
    grads.clear();
    std::vector<Tensor*> ptrs;
    for (std::size_t i = 0; i < params.size(); ++i) {
      ptrs.push_back(params[i].tensor);
      grads.push_back(g.grad(b.params[i]));
    }
    sgd_step(ptrs, grads, cfg.schedule.lr(it));
  }
  return result;
}

nlohmann::json spec_to_json(const ResNetSpec& spec) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : spec.stages) stages.push_back({{"width", s.width}, {"num_blocks", s.num_blocks}});
  return {{"input_dim", spec.input_dim}, {"stages", stages}, {"num_classes", spec.num_classes}, {"seed", spec.seed}};
}

ResNetSpec spec_from_json(const nlohmann::json& j) {
  ResNetSpec spec;
  spec.input_dim = j.at("input_dim").get<std::size_t>();
  for (const auto& s : j.at("stages")) {
    spec.stages.push_back({s.at("width").get<std::size_t>(), s.at("num_blocks").get<std::size_t>()});
  }
  spec.num_classes = j.at("num_classes").get<std::size_t>();
  spec.seed = j.value("seed", std::uint64_t{0});
  spec.validate();
  return spec;
}

nlohmann::json checkpoint_json(const ResNetModel& model) {
  ParamVector pv = flatten(model);
  nlohmann::json dropped = nlohmann::json::array();
  for (auto b : model.dropped()) dropped.push_back({b.stage, b.index});
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& e : pv.layout) layout.push_back({{"name", e.name}, {"offset", e.offset}, {"shape", e.shape}});
  return {{"format", "practise-checkpoint"}, {"version", 1},           {"spec", spec_to_json(model.spec())},
          {"dropped", dropped},             {"layout", layout},       {"values", pv.values}};
}

ResNetModel checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string{}) != "practise-checkpoint") throw ParseError("not a practise checkpoint");
  if (j.value("version", 0) != 1) throw ParseError("unsupported checkpoint version");
  ResNetSpec spec = spec_from_json(j.at("spec"));
  std::set<BlockId> dropped;
  for (const auto& d : j.at("dropped")) dropped.insert({d.at(0).get<std::size_t>(), d.at(1).get<std::size_t>()});
  Layout layout;
  for (const auto& e : j.at("layout")) {
    layout.push_back({e.at("name").get<std::string>(), e.at("offset").get<std::size_t>(), e.at("shape").get<Shape>()});
  }
  auto values = j.at("values").get<std::vector<double>>();
  return unflatten(layout, values, spec, dropped);
}

void save_checkpoint(const ResNetModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << checkpoint_json(model).dump() << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

ResNetModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  try {
    return checkpoint_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::uint64_t parameter_checksum(const ResNetModel& model) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : model.parameters()) {
    for (double v : p.tensor->values()) {
      h ^= std::bit_cast<std::uint64_t>(v);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace practise
