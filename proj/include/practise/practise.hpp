#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "practise/compress.hpp"
#include "practise/data.hpp"
#include "practise/network.hpp"

namespace practise {

struct LatencyStats {
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double std_ms = 0.0;
  std::size_t trials = 0;
  std::size_t warmup = 0;
  Shape input_shape;
};

struct LatencyConfig {
  std::size_t trials = 500;
  std::size_t warmup = 20;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
};

// Wall-clock timing of forward() on one fixed random batch, single-threaded.
// Calls are serialized process-wide so no two measurements overlap.
LatencyStats measure_latency(const ResNetModel& model, const Shape& input_shape, std::size_t trials,
                             std::size_t warmup, std::uint64_t seed = 0);
LatencyStats measure_latency(const ResNetModel& model, const LatencyConfig& cfg);

inline constexpr double kTauFloor = 1e-6;

struct AccelerationRatio {
  double raw = 0.0;  // (lat_O - lat_P) / lat_O
  double tau = 0.0;  // raw, floored at kTauFloor
  bool clamped = false;
};
// From the medians: single preemption spikes on a shared core move a
// 500-trial mean by more than one dropped block does.
AccelerationRatio latency_ratio(const LatencyStats& original, const LatencyStats& pruned);
AccelerationRatio latency_ratio(double original_ms, double pruned_ms);

struct LatencyComparison {
  LatencyStats original;
  LatencyStats pruned;
  AccelerationRatio ratio;
};
// Times both models with interleaved trials (alternating which runs first),
// so slow drift in machine speed cancels out of the ratio.
LatencyComparison compare_latency(const ResNetModel& original, const ResNetModel& pruned, const LatencyConfig& cfg);

// s = R / tau; lower means drop first.
double pruning_score(double recoverability, double tau);

struct RecoverabilityConfig {
  AdaptorRadius radius = std::nullopt;
  std::size_t iters = 1000;
  LrSchedule schedule{0.02, 1000};
  std::size_t batch = 64;
  std::uint64_t seed = 0;
};

struct RecoverabilityResult {
  double value = 0.0;    // feature MSE after adaptor training
  double initial = 0.0;  // same objective with identity adaptors
  AdaptedModel adapted;
  std::vector<double> trace;
};

// Drops `block`, inserts identity adaptors and trains only the adaptors to
// mimic the teacher's penultimate features on `tiny`.
RecoverabilityResult recoverability(const ResNetModel& teacher, BlockId block, const Dataset& tiny,
                                    const RecoverabilityConfig& cfg);

enum class FinetuneMethod { bp, kd, feature_mimic };
std::string to_string(FinetuneMethod m);
FinetuneMethod finetune_method_from_string(const std::string& s);

struct FinetuneConfig {
  FinetuneMethod method = FinetuneMethod::feature_mimic;
  double temperature = 4.0;  // KD only
  std::size_t iters = 2000;
  std::size_t batch = 64;
  LrSchedule schedule{0.02, 2000};
  std::uint64_t seed = 0;
  // KD only: replaces softmax(teacher_logits / T) as targets, rows aligned
  // with the tiny set.
  const Tensor* kd_targets = nullptr;
};

struct FinetuneResult {
  ResNetModel student;
  std::vector<double> trace;
};

// BP: cross-entropy on labels. KD: T^2 times the cross-entropy against
// tempered teacher probabilities, so the gradient scale does not shrink with
// T. FeatureMimic: feature MSE against the frozen teacher with the teacher's
// head copied into the student and frozen; labels are not read.
FinetuneResult finetune(const ResNetModel& teacher, const ResNetModel& student, const Dataset& tiny,
                        const FinetuneConfig& cfg);

struct BlockScore {
  BlockId block;
  double recoverability = 0.0;
  double tau = 0.0;
  double score = 0.0;
  double tau_raw = 0.0;
  bool tau_clamped = false;
  LatencyStats latency;
};

enum class TauSource { measured, flops };

struct PractiseConfig {
  RecoverabilityConfig recoverability;
  FinetuneConfig finetune;
  LatencyConfig latency;
  TauSource tau_source = TauSource::measured;
  bool greedy = false;   // re-score after every drop instead of one pass
  bool run_finetune = true;
};

struct PractiseReport {
  LatencyStats original_latency;
  std::vector<BlockScore> scores;  // one row per droppable block, BlockId order
  std::vector<BlockId> chosen;
  std::vector<double> finetune_trace;
};

struct PractiseResult {
  ResNetModel model;
  PractiseReport report;
};

// One pass of per-block scoring against the intact teacher.
std::vector<BlockScore> score_blocks(const ResNetModel& teacher, const Dataset& tiny, const PractiseConfig& cfg,
                                     LatencyStats* original_latency = nullptr);

// k blocks with the smallest score; ties go to the lower BlockId.
std::vector<BlockId> choose_blocks(const std::vector<BlockScore>& scores, std::size_t k);

PractiseResult practise_compress(const ResNetModel& teacher, std::size_t k, const Dataset& tiny,
                                 const PractiseConfig& cfg);

nlohmann::json to_json(const LatencyStats& s);
nlohmann::json to_json(const BlockScore& s);

}  // namespace practise
