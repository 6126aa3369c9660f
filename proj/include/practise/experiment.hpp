#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "practise/data.hpp"
#include "practise/network.hpp"
#include "practise/practise.hpp"

namespace practise {

// Everything one run needs. Module seeds are derived from `seed`, so a single
// --seed override moves all of them together.
struct ExperimentConfig {
  int version = 1;
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  std::string teacher_checkpoint;  // empty: <output_dir>/teacher.ckpt.json

  // 16 overlapping classes leave the teacher around 72% heldout accuracy, so a
  // dropped block costs accuracy that few-shot finetuning has to win back.
  MixtureParams data{16, 16, 500, 1000, 3.0, 0};
  // Equal widths give every block the same FLOPs, so scores rank by R alone.
  std::vector<StageSpec> stages{{16, 4}, {16, 4}};

  std::size_t teacher_iters = 2000;
  double teacher_lr = 0.02;
  std::size_t teacher_batch = 64;

  std::size_t tiny_size = 50;

  std::string method = "practise";  // practise | drop_first_k | filter_prune | curl_like_l2
  std::size_t k = 3;
  std::optional<double> ratio;  // filter_prune; unset: matched to k dropped blocks
  std::string filter_match = "latency";  // latency | flops
  std::string finetune_method = "feature_mimic";
  std::optional<std::size_t> radius;
  std::string tau_source = "measured";
  bool greedy = false;

  // Penultimate features here have squared norms in the tens; feature-MSE
  // training at 0.02 diverges.
  std::size_t recover_iters = 1000;
  double recover_lr = 5e-4;
  std::size_t recover_batch = 64;

  std::size_t finetune_iters = 2000;
  double finetune_lr = 5e-4;
  std::size_t finetune_batch = 64;
  double temperature = 4.0;

  std::size_t latency_trials = 500;
  std::size_t latency_warmup = 20;
  std::size_t latency_batch = 1;

  std::size_t landscape_points = 21;
  std::string landscape_loss = "cross_entropy";

  std::size_t claim1_trials = 10000;
  std::size_t claim2_trials = 1000;
  std::size_t claim4_trials = 2000;
  std::size_t claim5_trials = 10000;
  std::size_t stability_trials = 500;

  std::filesystem::path teacher_path() const;
  void validate() const;
};

enum class SeedStream : std::uint64_t { data, init, teacher, tiny, recover, finetune, latency, theory, tiny_pair };
std::uint64_t stream_seed(const ExperimentConfig& cfg, SeedStream s);

nlohmann::json to_json(const ExperimentConfig& cfg);
// Unknown keys and type mismatches raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
// "a.b=value": value parsed as JSON, or taken as a string if that fails.
void apply_override(nlohmann::json& doc, const std::string& assignment);

ResNetSpec network_spec(const ExperimentConfig& cfg);
MixtureParams mixture_params(const ExperimentConfig& cfg);
TeacherTraining teacher_training(const ExperimentConfig& cfg);
PractiseConfig practise_config(const ExperimentConfig& cfg);
FinetuneConfig finetune_config(const ExperimentConfig& cfg, FinetuneMethod method);
LatencyConfig latency_config(const ExperimentConfig& cfg);

struct Benchmark {
  Dataset data;
  Dataset heldout;
  ResNetModel teacher;
  double teacher_accuracy = 0.0;
};
Benchmark make_benchmark(const ExperimentConfig& cfg);
Dataset make_tiny(const ExperimentConfig& cfg, const Dataset& data);

}  // namespace practise
