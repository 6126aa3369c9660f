#include "practise/practise.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <mutex>
#include <random>

#include "practise/errors.hpp"

namespace practise {

namespace {

std::mutex& latency_mutex() {
  static std::mutex m;
  return m;
}

// Shared SGD loop over a model (and optionally its adaptors). `make_loss`
// builds the scalar loss for one minibatch on a fresh graph.
template <class MakeLoss>
std::vector<double> run_sgd(ResNetModel& model, AdaptorSet* adaptors, const TrainablePredicate& trainable,
                            std::size_t n, std::size_t batch, std::size_t iters, const LrSchedule& schedule,
                            std::uint64_t seed, MakeLoss make_loss) {
  std::vector<double> trace;
  if (iters == 0) return trace;
  schedule.validate();
  MinibatchSampler sampler(n, batch, seed);
  std::vector<Tensor*> ptrs;
  std::vector<Tensor> grads;
  for (std::size_t it = 0; it < iters; ++it) {
    auto idx = sampler.next();
    ad::Graph g;
    GraphBinding b = practise::bind(g, model, trainable, adaptors, adaptors != nullptr);
    ad::Var loss = make_loss(g, b, idx);
    g.backward(loss);
    trace.push_back(loss.value()[0]);
    ptrs.clear();
    grads.clear();
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!g.requires_grad(b.params[i])) continue;
      ptrs.push_back(params[i].tensor);
      grads.push_back(g.grad(b.params[i]));
    }
    if (adaptors) {
      for (auto& [key, m] : adaptors->entries()) {
        ptrs.push_back(&m);
        grads.push_back(g.grad(b.adaptors.at(key.name())));
      }
    }
    sgd_step(ptrs, grads, schedule.lr(it));
  }
  return trace;
}

Tensor timing_input(const Shape& input_shape, std::uint64_t seed) {
  if (input_shape.size() != 2) throw DimensionError("measure_latency: input shape must be batch x dim");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor x(input_shape);
  for (auto& v : x.values()) v = normal(rng);
  return x;
}

double time_forward(const ResNetModel& model, const Tensor& x, double& sink) {
  auto t0 = std::chrono::steady_clock::now();
  ForwardResult r = forward(model, x);
  auto t1 = std::chrono::steady_clock::now();
  sink += r.logits[0];
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

LatencyStats summarize(std::vector<double> times, std::size_t warmup, const Shape& input_shape) {
  LatencyStats s;
  s.trials = times.size();
  s.warmup = warmup;
  s.input_shape = input_shape;
  for (double t : times) s.mean_ms += t;
  s.mean_ms /= static_cast<double>(times.size());
  if (times.size() > 1) {
    double var = 0.0;
    for (double t : times) var += (t - s.mean_ms) * (t - s.mean_ms);
    s.std_ms = std::sqrt(var / static_cast<double>(times.size() - 1));
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  s.median_ms = n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
  return s;
}

double mean_feature_distance(const Tensor& student, const Tensor& teacher) {
  ad::Graph g;
  return ad::feature_mse(g.constant(student), g.constant(teacher), 1.0).value()[0];
}

}  // namespace

LatencyStats measure_latency(const ResNetModel& model, const Shape& input_shape, std::size_t trials,
                             std::size_t warmup, std::uint64_t seed) {
  if (trials == 0) throw ValueError("measure_latency: trials must be >= 1");
  const Tensor x = timing_input(input_shape, seed);
  std::lock_guard<std::mutex> lock(latency_mutex());
  double sink = 0.0;
  for (std::size_t i = 0; i < warmup; ++i) time_forward(model, x, sink);
  std::vector<double> times;
  times.reserve(trials);
  for (std::size_t i = 0; i < trials; ++i) times.push_back(time_forward(model, x, sink));
  volatile double keep = sink;
  (void)keep;
  return summarize(std::move(times), warmup, input_shape);
}

LatencyStats measure_latency(const ResNetModel& model, const LatencyConfig& cfg) {
  return measure_latency(model, {cfg.batch, model.spec().input_dim}, cfg.trials, cfg.warmup, cfg.seed);
}

AccelerationRatio latency_ratio(double original_ms, double pruned_ms) {
  if (!(original_ms > 0.0) || !(pruned_ms > 0.0)) throw ValueError("latency_ratio: latencies must be positive");
  AccelerationRatio r;
  r.raw = (original_ms - pruned_ms) / original_ms;
  r.tau = r.raw;
  if (!(r.raw > kTauFloor)) {
    std::cerr << "warning: pruned latency " << pruned_ms << " ms is not below original " << original_ms
              << " ms; acceleration ratio floored at " << kTauFloor << '\n';
    r.tau = kTauFloor;
    r.clamped = true;
  }
  return r;
}

AccelerationRatio latency_ratio(const LatencyStats& original, const LatencyStats& pruned) {
  return latency_ratio(original.median_ms, pruned.median_ms);
}

LatencyComparison compare_latency(const ResNetModel& original, const ResNetModel& pruned, const LatencyConfig& cfg) {
  if (cfg.trials == 0) throw ValueError("compare_latency: trials must be >= 1");
  if (original.spec().input_dim != pruned.spec().input_dim) throw DimensionError("compare_latency: input dims differ");
  const Shape shape{cfg.batch, original.spec().input_dim};
  const Tensor x = timing_input(shape, cfg.seed);
  std::lock_guard<std::mutex> lock(latency_mutex());
  double sink = 0.0;
  for (std::size_t i = 0; i < cfg.warmup; ++i) {
    time_forward(original, x, sink);
    time_forward(pruned, x, sink);
  }
  std::vector<double> to, tp;
  to.reserve(cfg.trials);
  tp.reserve(cfg.trials);
  for (std::size_t i = 0; i < cfg.trials; ++i) {
    if (i % 2 == 0) {
      to.push_back(time_forward(original, x, sink));
      tp.push_back(time_forward(pruned, x, sink));
    } else {
      tp.push_back(time_forward(pruned, x, sink));
      to.push_back(time_forward(original, x, sink));
    }
  }
  volatile double keep = sink;
  (void)keep;
  LatencyComparison c{summarize(std::move(to), cfg.warmup, shape), summarize(std::move(tp), cfg.warmup, shape), {}};
  c.ratio = latency_ratio(c.original, c.pruned);
  return c;
}

double pruning_score(double recoverability, double tau) {
  if (!(tau > 0.0)) throw ValueError("pruning_score: tau must be positive");
  return recoverability / tau;
}

RecoverabilityResult recoverability(const ResNetModel& teacher, BlockId block, const Dataset& tiny,
                                    const RecoverabilityConfig& cfg) {
  teacher.require_block(block);
  if (teacher.is_dropped(block)) throw ValueError("recoverability: block " + block.name() + " is already dropped");
  if (tiny.size() == 0) throw ValueError("recoverability: empty tiny set");

  const Tensor target = feature(teacher, tiny.features);
  RecoverabilityResult res;
  res.adapted = insert_adaptors(drop_block(teacher, block), block, cfg.radius);
  res.initial = mean_feature_distance(feature(res.adapted.model, tiny.features, &res.adapted.adaptors), target);

  auto frozen = [](std::string_view) { return false; };
  res.trace = run_sgd(res.adapted.model, &res.adapted.adaptors, frozen, tiny.size(), cfg.batch, cfg.iters,
                      cfg.schedule, cfg.seed, [&](ad::Graph& g, const GraphBinding& b, std::span<const std::size_t> idx) {
                        ad::Var x = g.constant(gather_rows(tiny.features, idx));
                        ad::Var t = g.constant(gather_rows(target, idx));
                        GraphForward f = forward(res.adapted.model, b, x, false);
                        return ad::feature_mse(f.feature, t, 1.0);
                      });
  res.value = mean_feature_distance(feature(res.adapted.model, tiny.features, &res.adapted.adaptors), target);
  return res;
}

std::string to_string(FinetuneMethod m) {
  switch (m) {
    case FinetuneMethod::bp:
      return "bp";
    case FinetuneMethod::kd:
      return "kd";
    case FinetuneMethod::feature_mimic:
      return "feature_mimic";
  }
  return "?";
}

FinetuneMethod finetune_method_from_string(const std::string& s) {
  if (s == "bp") return FinetuneMethod::bp;
  if (s == "kd") return FinetuneMethod::kd;
  if (s == "feature_mimic") return FinetuneMethod::feature_mimic;
  throw ValueError("unknown finetune method '" + s + "'");
}

FinetuneResult finetune(const ResNetModel& teacher, const ResNetModel& student, const Dataset& tiny,
                        const FinetuneConfig& cfg) {
  if (tiny.size() == 0) throw ValueError("finetune: empty tiny set");
  if (student.spec().input_dim != teacher.spec().input_dim ||
      student.spec().feature_dim() != teacher.spec().feature_dim() ||
      student.spec().num_classes != teacher.spec().num_classes) {
    throw DimensionError("finetune: student is not a pruned version of the teacher");
  }
  FinetuneResult res{student, {}};
  auto all = [](std::string_view) { return true; };

  switch (cfg.method) {
    case FinetuneMethod::bp: {
      res.trace = run_sgd(res.student, nullptr, all, tiny.size(), cfg.batch, cfg.iters, cfg.schedule, cfg.seed,
                          [&](ad::Graph& g, const GraphBinding& b, std::span<const std::size_t> idx) {
                            ad::Var x = g.constant(gather_rows(tiny.features, idx));
                            std::vector<int> labels;
                            for (auto i : idx) labels.push_back(tiny.labels[i]);
                            return ad::softmax_ce(forward(res.student, b, x).logits, labels, 1.0);
                          });
      break;
    }
    case FinetuneMethod::kd: {
      if (!(cfg.temperature > 0.0)) throw ValueError("finetune: KD temperature must be positive");
      Tensor targets = cfg.kd_targets ? *cfg.kd_targets : ad::softmax(forward(teacher, tiny.features).logits, cfg.temperature);
      if (targets.rows() != tiny.size() || targets.cols() != teacher.spec().num_classes) {
        throw DimensionError("finetune: KD targets do not match the tiny set");
      }
      res.trace = run_sgd(res.student, nullptr, all, tiny.size(), cfg.batch, cfg.iters, cfg.schedule, cfg.seed,
                          [&](ad::Graph& g, const GraphBinding& b, std::span<const std::size_t> idx) {
                            ad::Var x = g.constant(gather_rows(tiny.features, idx));
                            ad::Var ce = ad::softmax_ce(forward(res.student, b, x).logits,
                                                        gather_rows(targets, idx), cfg.temperature);
                            return ad::scale(ce, cfg.temperature * cfg.temperature);
                          });
      break;
    }
    case FinetuneMethod::feature_mimic: {
      res.student.head() = teacher.head();
      const Tensor target = feature(teacher, tiny.features);
      auto not_head = [](std::string_view name) { return !name.starts_with("head."); };
      res.trace = run_sgd(res.student, nullptr, not_head, tiny.size(), cfg.batch, cfg.iters, cfg.schedule, cfg.seed,
                          [&](ad::Graph& g, const GraphBinding& b, std::span<const std::size_t> idx) {
                            ad::Var x = g.constant(gather_rows(tiny.features, idx));
                            ad::Var t = g.constant(gather_rows(target, idx));
                            return ad::feature_mse(forward(res.student, b, x, false).feature, t, 1.0);
                          });
      break;
    }
    default:
      throw ValueError("finetune: unknown method");
  }
  return res;
}

std::vector<BlockScore> score_blocks(const ResNetModel& teacher, const Dataset& tiny, const PractiseConfig& cfg,
                                     LatencyStats* original_latency) {
  std::vector<BlockScore> scores;
  LatencyStats orig;
  const bool measured = cfg.tau_source == TauSource::measured;
  if (measured) orig = measure_latency(teacher, cfg.latency);
  const double flops_orig = static_cast<double>(count_flops(teacher));
  for (auto b : teacher.active_blocks()) {
    BlockScore s;
    s.block = b;
    ResNetModel pruned = drop_block(teacher, b);
    AccelerationRatio ar;
    if (measured) {
      LatencyComparison c = compare_latency(teacher, pruned, cfg.latency);
      s.latency = c.pruned;
      ar = c.ratio;
    } else {
      ar = latency_ratio(flops_orig, static_cast<double>(count_flops(pruned)));
    }
    s.tau_raw = ar.raw;
    s.tau = ar.tau;
    s.tau_clamped = ar.clamped;
    s.recoverability = recoverability(teacher, b, tiny, cfg.recoverability).value;
    s.score = pruning_score(s.recoverability, s.tau);
    scores.push_back(s);
  }
  if (original_latency) *original_latency = orig;
  return scores;
}

std::vector<BlockId> choose_blocks(const std::vector<BlockScore>& scores, std::size_t k) {
  if (k > scores.size()) throw ValueError("choose_blocks: k exceeds the number of scored blocks");
  std::vector<BlockScore> sorted = scores;
  std::stable_sort(sorted.begin(), sorted.end(), [](const BlockScore& a, const BlockScore& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.block < b.block;
  });
  std::vector<BlockId> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(sorted[i].block);
  std::sort(out.begin(), out.end());
  return out;
}

PractiseResult practise_compress(const ResNetModel& teacher, std::size_t k, const Dataset& tiny,
                                 const PractiseConfig& cfg) {
  const std::size_t available = teacher.active_blocks().size();
  if (k > available) {
    throw ValueError("practise_compress: k=" + std::to_string(k) + " exceeds " + std::to_string(available) +
                     " droppable blocks");
  }
  PractiseResult res{teacher, {}};
  res.report.scores = score_blocks(teacher, tiny, cfg, &res.report.original_latency);
  if (cfg.greedy) {
    ResNetModel current = teacher;
    for (std::size_t step = 0; step < k; ++step) {
      auto round = step == 0 ? res.report.scores : score_blocks(current, tiny, cfg);
      BlockId pick = choose_blocks(round, 1).front();
      res.report.chosen.push_back(pick);
      current = drop_block(current, pick);
    }
    std::sort(res.report.chosen.begin(), res.report.chosen.end());
  } else {
    res.report.chosen = choose_blocks(res.report.scores, k);
  }
  for (auto b : res.report.chosen) res.model = drop_block(res.model, b);
  if (cfg.run_finetune && k > 0) {
    FinetuneConfig ft = cfg.finetune;
    ft.method = FinetuneMethod::feature_mimic;
    auto r = finetune(teacher, res.model, tiny, ft);
    res.model = std::move(r.student);
    res.report.finetune_trace = std::move(r.trace);
  }
  return res;
}

nlohmann::json to_json(const LatencyStats& s) {
  return {{"mean_ms", s.mean_ms}, {"median_ms", s.median_ms}, {"std_ms", s.std_ms}, {"trials", s.trials}, {"warmup", s.warmup},
          {"input_shape", s.input_shape}};
}

nlohmann::json to_json(const BlockScore& s) {
  return {{"block", s.block.name()}, {"stage", s.block.stage},     {"index", s.block.index},
          {"R", s.recoverability},   {"tau", s.tau},               {"tau_raw", s.tau_raw},
          {"tau_clamped", s.tau_clamped}, {"score", s.score},      {"latency", to_json(s.latency)}};
}

}  // namespace practise
