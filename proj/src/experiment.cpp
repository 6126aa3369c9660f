#include "practise/experiment.hpp"

#include <fstream>

#include "practise/errors.hpp"

namespace practise {

using nlohmann::json;

std::filesystem::path ExperimentConfig::teacher_path() const {
  if (!teacher_checkpoint.empty()) return teacher_checkpoint;
  return std::filesystem::path(output_dir) / "teacher.ckpt.json";
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(version == 1, "unsupported config version " + std::to_string(version));
  require(!output_dir.empty(), "output_dir must not be empty");
  require(data.num_classes >= 2, "data.num_classes must be >= 2");
  require(data.dim >= 1, "data.dim must be >= 1");
  require(data.train_per_class >= 1 && data.heldout_per_class >= 1, "data: per-class counts must be >= 1");
  require(data.class_sep >= 0.0, "data.class_sep must be >= 0");
  require(!stages.empty(), "network.stages must not be empty");
  for (const auto& s : stages) require(s.width >= 1, "network: stage width must be >= 1");
  require(teacher_iters >= 1 && teacher_batch >= 1 && teacher_lr > 0.0, "teacher: iters, batch, lr must be positive");
  require(tiny_size >= 1, "tiny.size must be >= 1");
  require(tiny_size <= data.train_per_class * static_cast<std::size_t>(data.num_classes),
          "tiny.size exceeds the train split");
  require(method == "practise" || method == "drop_first_k" || method == "filter_prune" || method == "curl_like_l2",
          "compress.method must be one of practise, drop_first_k, filter_prune, curl_like_l2");
  require(finetune_method == "bp" || finetune_method == "kd" || finetune_method == "feature_mimic",
          "compress.finetune must be one of bp, kd, feature_mimic");
  require(filter_match == "latency" || filter_match == "flops", "compress.filter_match must be latency or flops");
  require(tau_source == "measured" || tau_source == "flops", "compress.tau_source must be measured or flops");
  require(!ratio || (*ratio > 0.0 && *ratio < 1.0), "compress.ratio must lie in (0, 1)");
  require(!ratio || method == "filter_prune", "compress.ratio only applies to method filter_prune");
  require(!greedy || method == "practise", "compress.greedy only applies to method practise");
  require(recover_batch >= 1 && recover_lr > 0.0, "recoverability: batch and lr must be positive");
  require(finetune_batch >= 1 && finetune_lr > 0.0, "finetune: batch and lr must be positive");
  require(temperature > 0.0, "finetune.temperature must be positive");
  require(latency_trials >= 1 && latency_batch >= 1, "latency: trials and batch must be >= 1");
  require(landscape_points >= 2, "landscape.points must be >= 2");
  require(landscape_loss == "cross_entropy" || landscape_loss == "feature_mse",
          "landscape.loss must be cross_entropy or feature_mse");
}

std::uint64_t stream_seed(const ExperimentConfig& cfg, SeedStream s) {
  return derive_seed(cfg.seed, static_cast<std::uint64_t>(s));
}

json to_json(const ExperimentConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages) stages.push_back({{"width", s.width}, {"blocks", s.num_blocks}});
  return {
      {"version", c.version},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"teacher_checkpoint", c.teacher_checkpoint},
      {"data",
       {{"num_classes", c.data.num_classes},
        {"dim", c.data.dim},
        {"train_per_class", c.data.train_per_class},
        {"heldout_per_class", c.data.heldout_per_class},
        {"class_sep", c.data.class_sep}}},
      {"network", {{"stages", stages}}},
      {"teacher", {{"iters", c.teacher_iters}, {"lr", c.teacher_lr}, {"batch", c.teacher_batch}}},
      {"tiny", {{"size", c.tiny_size}}},
      {"compress",
       {{"method", c.method},
        {"k", c.k},
        {"ratio", c.ratio ? json(*c.ratio) : json(nullptr)},
        {"filter_match", c.filter_match},
        {"finetune", c.finetune_method},
        {"radius", c.radius ? json(*c.radius) : json(nullptr)},
        {"tau_source", c.tau_source},
        {"greedy", c.greedy}}},
      {"recoverability", {{"iters", c.recover_iters}, {"lr", c.recover_lr}, {"batch", c.recover_batch}}},
      {"finetune",
       {{"iters", c.finetune_iters}, {"lr", c.finetune_lr}, {"batch", c.finetune_batch}, {"temperature", c.temperature}}},
      {"latency", {{"trials", c.latency_trials}, {"warmup", c.latency_warmup}, {"batch", c.latency_batch}}},
      {"landscape", {{"points", c.landscape_points}, {"loss", c.landscape_loss}}},
      {"theory",
       {{"claim1_trials", c.claim1_trials},
        {"claim2_trials", c.claim2_trials},
        {"claim4_trials", c.claim4_trials},
        {"claim5_trials", c.claim5_trials},
        {"stability_trials", c.stability_trials}}},
  };
}

namespace {

// Keys whose default is null but which accept a number.
bool nullable(const std::string& path) { return path == "compress.ratio" || path == "compress.radius"; }

void check_stages(const json& v) {
  if (!v.is_array() || v.empty()) throw ConfigError("network.stages must be a non-empty array");
  for (const auto& s : v) {
    if (!s.is_object()) throw ConfigError("network.stages entries must be objects {width, blocks}");
    for (auto it = s.begin(); it != s.end(); ++it) {
      if (it.key() != "width" && it.key() != "blocks") throw ConfigError("unknown key network.stages[]." + it.key());
      if (!it.value().is_number_unsigned()) throw ConfigError("network.stages[]." + it.key() + " must be an unsigned integer");
    }
    if (!s.contains("width") || !s.contains("blocks")) throw ConfigError("network.stages entries need width and blocks");
  }
}

void merge_strict(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError((prefix.empty() ? std::string("config") : prefix) + " must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    json& slot = base[it.key()];
    const json& v = it.value();
    if (path == "network.stages") {
      check_stages(v);
      slot = v;
    } else if (slot.is_object()) {
      merge_strict(slot, v, path);
    } else if (nullable(path)) {
      if (!v.is_null() && !v.is_number()) throw ConfigError(path + " must be a number or null");
      if (path == "compress.radius" && !v.is_null() && !v.is_number_unsigned()) {
        throw ConfigError(path + " must be an unsigned integer or null");
      }
      slot = v;
    } else if (slot.is_number_unsigned()) {
      if (!v.is_number_unsigned()) throw ConfigError(path + " must be an unsigned integer");
      slot = v;
    } else if (slot.is_number()) {
      if (!v.is_number()) throw ConfigError(path + " must be a number");
      slot = v.get<double>();
    } else if (slot.is_boolean()) {
      if (!v.is_boolean()) throw ConfigError(path + " must be a boolean");
      slot = v;
    } else if (slot.is_string()) {
      if (!v.is_string()) throw ConfigError(path + " must be a string");
      slot = v;
    } else {
      throw ConfigError("cannot set " + path);
    }
  }
}

}  // namespace

ExperimentConfig config_from_json(const json& user) {
  json doc = to_json(ExperimentConfig{});
  merge_strict(doc, user, "");
  ExperimentConfig c;
  c.version = doc["version"].get<int>();
  c.seed = doc["seed"].get<std::uint64_t>();
  c.output_dir = doc["output_dir"].get<std::string>();
  c.teacher_checkpoint = doc["teacher_checkpoint"].get<std::string>();
  const json& d = doc["data"];
  c.data.num_classes = d["num_classes"].get<int>();
  c.data.dim = d["dim"].get<std::size_t>();
  c.data.train_per_class = d["train_per_class"].get<std::size_t>();
  c.data.heldout_per_class = d["heldout_per_class"].get<std::size_t>();
  c.data.class_sep = d["class_sep"].get<double>();
  c.stages.clear();
  for (const auto& s : doc["network"]["stages"]) c.stages.push_back({s["width"].get<std::size_t>(), s["blocks"].get<std::size_t>()});
  c.teacher_iters = doc["teacher"]["iters"].get<std::size_t>();
  c.teacher_lr = doc["teacher"]["lr"].get<double>();
  c.teacher_batch = doc["teacher"]["batch"].get<std::size_t>();
  c.tiny_size = doc["tiny"]["size"].get<std::size_t>();
  const json& cm = doc["compress"];
  c.method = cm["method"].get<std::string>();
  c.k = cm["k"].get<std::size_t>();
  if (!cm["ratio"].is_null()) c.ratio = cm["ratio"].get<double>();
  c.filter_match = cm["filter_match"].get<std::string>();
  c.finetune_method = cm["finetune"].get<std::string>();
  if (!cm["radius"].is_null()) c.radius = cm["radius"].get<std::size_t>();
  c.tau_source = cm["tau_source"].get<std::string>();
  c.greedy = cm["greedy"].get<bool>();
  c.recover_iters = doc["recoverability"]["iters"].get<std::size_t>();
  c.recover_lr = doc["recoverability"]["lr"].get<double>();
  c.recover_batch = doc["recoverability"]["batch"].get<std::size_t>();
  const json& ft = doc["finetune"];
  c.finetune_iters = ft["iters"].get<std::size_t>();
  c.finetune_lr = ft["lr"].get<double>();
  c.finetune_batch = ft["batch"].get<std::size_t>();
  c.temperature = ft["temperature"].get<double>();
  c.latency_trials = doc["latency"]["trials"].get<std::size_t>();
  c.latency_warmup = doc["latency"]["warmup"].get<std::size_t>();
  c.latency_batch = doc["latency"]["batch"].get<std::size_t>();
  c.landscape_points = doc["landscape"]["points"].get<std::size_t>();
  c.landscape_loss = doc["landscape"]["loss"].get<std::string>();
  const json& th = doc["theory"];
  c.claim1_trials = th["claim1_trials"].get<std::size_t>();
  c.claim2_trials = th["claim2_trials"].get<std::size_t>();
  c.claim4_trials = th["claim4_trials"].get<std::size_t>();
  c.claim5_trials = th["claim5_trials"].get<std::size_t>();
  c.stability_trials = th["stability_trials"].get<std::size_t>();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("bad override key '" + key + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

ResNetSpec network_spec(const ExperimentConfig& cfg) {
  ResNetSpec s{cfg.data.dim, cfg.stages, static_cast<std::size_t>(cfg.data.num_classes), stream_seed(cfg, SeedStream::init)};
  s.validate();
  return s;
}

MixtureParams mixture_params(const ExperimentConfig& cfg) {
  MixtureParams p = cfg.data;
  p.seed = stream_seed(cfg, SeedStream::data);
  return p;
}

TeacherTraining teacher_training(const ExperimentConfig& cfg) {
  TeacherTraining t;
  t.iters = cfg.teacher_iters;
  t.schedule = LrSchedule{cfg.teacher_lr, cfg.teacher_iters};
  t.batch = cfg.teacher_batch;
  t.seed = stream_seed(cfg, SeedStream::teacher);
  return t;
}

FinetuneConfig finetune_config(const ExperimentConfig& cfg, FinetuneMethod method) {
  FinetuneConfig f;
  f.method = method;
  f.temperature = cfg.temperature;
  f.iters = cfg.finetune_iters;
  f.batch = cfg.finetune_batch;
  f.schedule = LrSchedule{cfg.finetune_lr, std::max<std::size_t>(cfg.finetune_iters, 1)};
  f.seed = stream_seed(cfg, SeedStream::finetune);
  return f;
}

LatencyConfig latency_config(const ExperimentConfig& cfg) {
  return {cfg.latency_trials, cfg.latency_warmup, cfg.latency_batch, stream_seed(cfg, SeedStream::latency)};
}

PractiseConfig practise_config(const ExperimentConfig& cfg) {
  PractiseConfig p;
  p.recoverability.radius = cfg.radius;
  p.recoverability.iters = cfg.recover_iters;
  p.recoverability.schedule = LrSchedule{cfg.recover_lr, std::max<std::size_t>(cfg.recover_iters, 1)};
  p.recoverability.batch = cfg.recover_batch;
  p.recoverability.seed = stream_seed(cfg, SeedStream::recover);
  p.finetune = finetune_config(cfg, FinetuneMethod::feature_mimic);
  p.latency = latency_config(cfg);
  p.tau_source = cfg.tau_source == "flops" ? TauSource::flops : TauSource::measured;
  p.greedy = cfg.greedy;
  return p;
}

Benchmark make_benchmark(const ExperimentConfig& cfg) {
  Benchmark b;
  b.data = generate_gaussian_mixture(mixture_params(cfg));
  b.heldout = b.data.select(Split::heldout);
  b.teacher = train_teacher(build(network_spec(cfg)), b.data, teacher_training(cfg)).model;
  b.teacher_accuracy = accuracy(b.teacher, b.heldout);
  return b;
}

Dataset make_tiny(const ExperimentConfig& cfg, const Dataset& data) {
  return sample_tiny(data, cfg.tiny_size, stream_seed(cfg, SeedStream::tiny));
}

}  // namespace practise
