// One PASS/FAIL line per acceptance criterion. Tolerances, seeds and runtime
// budgets are fixed here; exit status is the number of failures.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "../support/gradcheck.hpp"
#include "../support/models.hpp"
#include "practise/baselines.hpp"
#include "practise/experiment.hpp"
#include "practise/landscape.hpp"
#include "practise/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace practise;

namespace {

const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  va_list ap, copy;
  va_start(ap, f);
  va_copy(copy, ap);
  std::string out(static_cast<std::size_t>(std::vsnprintf(nullptr, 0, f, copy)), '\0');
  va_end(copy);
  std::vsnprintf(out.data(), out.size() + 1, f, ap);
  va_end(ap);
  return out;
}

ExperimentConfig seeded(std::uint64_t seed) {
  ExperimentConfig c;
  c.seed = seed;
  return c;
}

// Teachers are shared by several criteria; their training time is reported
// once, outside the per-criterion budgets.
std::map<std::uint64_t, Benchmark>& benchmarks() {
  static std::map<std::uint64_t, Benchmark> b;
  return b;
}

const Benchmark& bench(std::uint64_t seed) {
  auto& b = benchmarks();
  auto it = b.find(seed);
  if (it == b.end()) it = b.emplace(seed, make_benchmark(seeded(seed))).first;
  return it->second;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    for (std::size_t t = i; t <= j; ++t) r[order[t]] = 0.5 * static_cast<double>(i + j);
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

const CurveLoss kCE{};

// ------------------------------------------------------------ criteria

Outcome fusion_exactness() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    ResNetModel m = build(testing::random_spec(rng));
    auto blocks = m.active_blocks();
    BlockId b = blocks[rng() % blocks.size()];
    AdaptedModel a = insert_adaptors(drop_block(m, b), b);
    testing::perturb(a.adaptors, rng);
    ResNetModel fused = fuse_adaptors(a.model, a.adaptors);
    Tensor x = testing::random_tensor({32, m.spec().input_dim}, rng);
    worst = std::max(worst, max_abs_difference(forward(fused, x).logits, forward(a.model, x, &a.adaptors).logits));
  }
  return {worst < 1e-9, fmt("max |adapted - fused| = %.3g over 100 models (< 1e-9)", worst)};
}

Outcome zero_drop_equivalence() {
  std::mt19937_64 rng(202);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    ResNetModel m = build(testing::random_spec(rng));
    auto blocks = m.active_blocks();
    BlockId b = blocks[rng() % blocks.size()];
    Tensor x = testing::random_tensor({32, m.spec().input_dim}, rng);
    worst = std::max(worst, max_abs_difference(forward(zero_block(m, b), x).logits, forward(drop_block(m, b), x).logits));
  }
  return {worst <= 1e-12, fmt("max |zeroed - dropped| = %.3g over 100 models (<= 1e-12)", worst)};
}

Outcome gradient_correctness() {
  std::mt19937_64 rng(303);
  double worst = 0.0;
  std::string worst_op;
  std::size_t checked = 0;
  for (int rep = 0; rep < 5; ++rep) {
    for (const auto& c : testing::autodiff_op_cases()) {
      std::vector<Tensor> inputs;
      for (const auto& s : c.shapes) inputs.push_back(testing::random_tensor(s, rng));
      auto r = testing::gradcheck(c.build, inputs);
      checked += r.checked;
      if (r.max_rel_error >= worst) {
        worst = r.max_rel_error;
        worst_op = c.name;
      }
    }
  }
  return {worst < 1e-4, fmt("max relative error %.3g (%s) over %zu partials (< 1e-4)", worst, worst_op.c_str(), checked)};
}

Outcome claim1() {
  auto r = theory::verify_claim1(10000, 4, 4, 404);
  return {r.violations == 0, fmt("%zu violations in %zu joints, min margin %.3g", r.violations, r.trials, r.min_margin)};
}

Outcome claim2() {
  auto r = theory::verify_claim2(1000, 3, 5, 505);
  return {r.max_error < 1e-10, fmt("max identity error %.3g over %zu joints (< 1e-10)", r.max_error, r.trials)};
}

const theory::Distribution kNormal{theory::Distribution::Kind::normal, 0.0, 1.0};

Outcome claim4() {
  auto r = theory::verify_claim4(100, 0.5, 2000, kNormal, 606);
  bool ok = true;
  for (double v : r.ratio) ok = ok && v >= 0.85 && v <= 1.15;
  return {ok, fmt("variance ratio w %.3f, b %.3f (in [0.85, 1.15])", r.ratio[0], r.ratio[1])};
}

Outcome claim5() {
  theory::SoftmaxTeacher scaling_teacher{{0.0, 0.0}, {0.0, 0.0}};
  const theory::Distribution bounded{theory::Distribution::Kind::uniform, -std::sqrt(3.0), std::sqrt(3.0)};
  theory::SoftmaxTeacher confident{{3.0, -3.0, 0.0}, {1.0, 1.0, 0.0}};
  auto sc = theory::claim5_scaling({50, 200, 800}, 10000, scaling_teacher, bounded, 707);
  auto tc = theory::claim5_temperature(200, {1, 2, 3, 4, 5}, 10000, confident, kNormal, 708);
  bool decreasing = true;
  for (std::size_t i = 1; i < tc.total_variance.size(); ++i)
    decreasing = decreasing && tc.total_variance[i] < tc.total_variance[i - 1];
  return {sc.worst_deviation <= 0.2 && decreasing,
          fmt("1/n worst deviation %.3f (<= 0.2); total variance T=1 %.4g -> T=5 %.4g, strictly decreasing: %s",
              sc.worst_deviation, tc.total_variance.front(), tc.total_variance.back(), decreasing ? "yes" : "no")};
}

Outcome stability_ordering() {
  std::size_t ok = 0;
  std::string ratios;
  for (auto s : kSeeds) {
    auto r = theory::compare_stability(1000, 0.5, 0.99, 500, derive_seed(stream_seed(seeded(s), SeedStream::theory), 7));
    ok += r.epsilon <= 1e-2 && r.empirical_fm_stabler;
    ratios += fmt(" %.2f", std::min(r.variance_ratio[0], r.variance_ratio[1]));
  }
  return {ok == kSeeds.size(),
          fmt("FM stabler on %zu/5 seeds at eps = 0.01, n = 1000; min classification/FM variance ratio:%s", ok,
              ratios.c_str())};
}

Outcome convexity_direction() {
  std::size_t ok = 0;
  std::string pairs;
  for (auto s : kSeeds) {
    const ResNetModel& t = bench(s).teacher;
    const ParamVector raw = flatten(t);
    BlockId b = first_k_blocks(t, 1).front();
    double gb = convexity_gap(loss_curve(t, raw, flatten(zero_block(t, b)), bench(s).heldout, kCE));
    double gf = convexity_gap(
        loss_curve(t, raw, flatten(prune_filters(t, flops_matched_filter_spec(t, 1))), bench(s).heldout, kCE));
    ok += gb < gf;
    pairs += fmt(" %.3f/%.3f", gb, gf);
  }
  return {ok >= 4, fmt("block < filter gap on %zu/5 seeds (>= 4); block/filter:%s", ok, pairs.c_str())};
}

ResNetModel practise_pruned(std::uint64_t seed, const Dataset& tiny) {
  ExperimentConfig c = seeded(seed);
  PractiseConfig pc = practise_config(c);
  pc.tau_source = TauSource::flops;
  return drop_blocks(bench(seed).teacher, choose_blocks(score_blocks(bench(seed).teacher, tiny, pc), 3));
}

Outcome finetune_convexity() {
  std::size_t ok = 0;
  std::string worst;
  for (auto s : kSeeds) {
    ExperimentConfig c = seeded(s);
    Dataset tiny = make_tiny(c, bench(s).data);
    ResNetModel pruned = practise_pruned(s, tiny);
    ResNetModel tuned = finetune(bench(s).teacher, pruned, tiny, finetune_config(c, FinetuneMethod::feature_mimic)).student;
    auto curve = loss_curve(pruned, flatten(pruned), flatten(tuned), bench(s).heldout, kCE);
    double bound = 0.02 * (curve.losses.front() - curve.losses.back());
    double gap = convexity_gap(curve);
    ok += gap <= bound;
    worst += fmt(" %.4f/%.4f", gap, bound);
  }
  return {ok == kSeeds.size(), fmt("gap <= 0.02 x drop on %zu/5 seeds; gap/bound:%s", ok, worst.c_str())};
}

Outcome midpoint() {
  std::size_t ok = 0;
  std::string ratios;
  for (auto s : kSeeds) {
    ExperimentConfig c = seeded(s);
    ResNetModel pruned = practise_pruned(s, make_tiny(c, bench(s).data));
    auto [ta, tb] = sample_tiny_disjoint(bench(s).data, 50, stream_seed(c, SeedStream::tiny_pair));
    FinetuneConfig ft = finetune_config(c, FinetuneMethod::feature_mimic);
    ResNetModel fa = finetune(bench(s).teacher, pruned, ta, ft).student;
    ResNetModel fb = finetune(bench(s).teacher, pruned, tb, ft).student;
    auto curve = loss_curve(pruned, flatten(fa), flatten(fb), bench(s).heldout, kCE, {0.0, 0.5, 1.0});
    double r = curve.losses[1] / std::min(curve.losses.front(), curve.losses.back());
    ok += r <= 1.05;
    ratios += fmt(" %.3f", r);
  }
  return {ok == kSeeds.size(), fmt("midpoint / min endpoint <= 1.05 on %zu/5 seeds:%s", ok, ratios.c_str())};
}

// Scores use FLOPs-based tau, so with equal-cost blocks s ranks exactly as R.
// A 500-sample tiny set: at 50 samples the adaptors overfit and R on the tiny
// set stops tracking heldout behaviour.
Outcome recoverability_consistency() {
  ExperimentConfig c = seeded(1);
  c.tiny_size = 500;
  const Benchmark& b = bench(1);
  Dataset tiny = make_tiny(c, b.data);
  PractiseConfig pc = practise_config(c);
  pc.tau_source = TauSource::flops;
  auto scores = score_blocks(b.teacher, tiny, pc);
  std::vector<double> s, err;
  for (const auto& sc : scores) {
    ResNetModel tuned =
        finetune(b.teacher, drop_block(b.teacher, sc.block), tiny, finetune_config(c, FinetuneMethod::feature_mimic)).student;
    s.push_back(sc.score);
    err.push_back(1.0 - accuracy(tuned, b.heldout));
  }
  double rho = spearman(s, err);
  return {rho >= 0.7, fmt("Spearman(score, finetuned heldout error) = %.3f over %zu blocks (>= 0.7)", rho, s.size())};
}

Outcome method_ordering() {
  std::size_t ok = 0;
  std::string rows;
  for (auto s : kSeeds) {
    ExperimentConfig c = seeded(s);
    const Benchmark& b = bench(s);
    Dataset tiny = make_tiny(c, b.data);
    const LatencyConfig lc = latency_config(c);
    ResNetModel d3 = drop_blocks(b.teacher, first_k_blocks(b.teacher, 3));
    auto acc = [&](const ResNetModel& student, FinetuneMethod m) {
      return accuracy(finetune(b.teacher, student, tiny, finetune_config(c, m)).student, b.heldout);
    };
    const double fm = acc(d3, FinetuneMethod::feature_mimic);
    const double kd = acc(d3, FinetuneMethod::kd);
    const double bp = acc(d3, FinetuneMethod::bp);
    PractiseResult pr = practise_compress(b.teacher, 3, tiny, practise_config(c));
    const double pa = accuracy(pr.model, b.heldout);
    const double target = compare_latency(b.teacher, d3, lc).ratio.raw;
    FilterMatch fmatch = filter_prune_latency_matched(b.teacher, target, lc);
    const double fa = acc(fmatch.model, FinetuneMethod::feature_mimic);
    const bool pass = fm > kd && kd > bp && pa >= fm && fm >= fa;
    ok += pass;
    rows += fmt("\n      seed %llu: FM %.4f KD %.4f BP %.4f | practise %.4f drop3 %.4f filter %.4f (tau %.3f vs %.3f) %s",
                static_cast<unsigned long long>(s), fm, kd, bp, pa, fm, fa, fmatch.tau.raw, target,
                pass ? "ok" : "violated");
  }
  return {ok >= 4, fmt("ordering holds on %zu/5 seeds (>= 4)%s", ok, rows.c_str())};
}

Outcome latency_sanity() {
  const ResNetModel& t = bench(1).teacher;
  const LatencyConfig lc = latency_config(seeded(1));
  double min_single = 1e9, max_single = -1e9;
  for (auto b : t.active_blocks()) {
    double tau = compare_latency(t, drop_block(t, b), lc).ratio.raw;
    min_single = std::min(min_single, tau);
    max_single = std::max(max_single, tau);
  }
  double multi = compare_latency(t, drop_blocks(t, first_k_blocks(t, 3)), lc).ratio.raw;
  return {min_single > 0.0 && multi >= max_single,
          fmt("single-block tau in [%.3f, %.3f] (> 0); drop-3 tau %.3f (>= max single); %zu trials, batch %zu",
              min_single, max_single, multi, lc.trials, lc.batch)};
}

// ------------------------------------------------------------ determinism

int run_cli(const std::string& args) {
  std::string cmd = std::string(PRACTISE_CLI) + " " + args + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Fields that hold wall-clock measurements or the run's own paths.
void strip(json& j, bool latency_rows) {
  static const std::vector<std::string> always{"timing", "output_dir", "teacher_checkpoint", "checkpoint"};
  static const std::vector<std::string> timed{"latency", "tau", "tau_raw", "clamped"};
  if (j.is_object()) {
    for (const auto& k : always) j.erase(k);
    if (latency_rows)
      for (const auto& k : timed) j.erase(k);
    for (auto& [k, v] : j.items()) strip(v, latency_rows);
  } else if (j.is_array()) {
    for (auto& v : j) strip(v, latency_rows);
  }
}

std::string comparable(const fs::path& file, const std::string& command) {
  std::string text = slurp(file);
  if (file.extension() == ".json") {
    json j = json::parse(text);
    strip(j, command == "bench-latency");
    return j.dump();
  }
  if (file.filename() == "latency.csv") {
    std::string out, line;
    std::stringstream ss(text);
    while (std::getline(ss, line)) {
      std::size_t cut = 0;
      for (int i = 0; i < 5 && cut != std::string::npos; ++i) cut = line.find(',', cut + 1);
      out += line.substr(0, cut) + '\n';
    }
    return out;
  }
  return text;
}

Outcome determinism() {
  const fs::path root = fs::path(PRACTISE_ACCEPTANCE_DIR) / "determinism";
  fs::remove_all(root);
  const std::vector<std::string> commands{"train-teacher", "compress", "probe-landscape", "bench-latency",
                                          "verify-theory"};
  for (std::string run : {"a", "b"}) {
    const fs::path ckpt = root / run / "teacher.ckpt.json";
    for (const auto& cmd : commands) {
      int code = run_cli("--seed 7 --set compress.tau_source=flops --set output_dir=" + (root / run / cmd).string() +
                         " --set teacher_checkpoint=" + ckpt.string() + " " + cmd);
      if (code != 0) return {false, fmt("run %s: %s exited with %d", run.c_str(), cmd.c_str(), code)};
    }
  }
  std::size_t files = 0;
  if (slurp(root / "a" / "teacher.ckpt.json") != slurp(root / "b" / "teacher.ckpt.json"))
    return {false, "teacher checkpoints differ"};
  for (const auto& cmd : commands) {
    for (const auto& e : fs::recursive_directory_iterator(root / "a" / cmd)) {
      if (!e.is_regular_file()) continue;
      fs::path other = root / "b" / fs::relative(e.path(), root / "a");
      if (!fs::exists(other)) return {false, "missing in second run: " + other.string()};
      if (comparable(e.path(), cmd) != comparable(other, cmd))
        return {false, "differs between runs: " + fs::relative(e.path(), root / "a").string()};
      ++files;
    }
  }
  return {true, fmt("%zu output files of 5 commands identical across two runs (timing fields excluded)", files + 1)};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;  // 0: no budget
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  std::setvbuf(stdout, nullptr, _IONBF, 0);
  using clock = std::chrono::steady_clock;
  auto seconds = [](clock::time_point a) { return std::chrono::duration<double>(clock::now() - a).count(); };

  auto t0 = clock::now();
  for (auto s : kSeeds) bench(s);
  std::printf("setup: %zu benchmark teachers trained in %.1f s (accuracy", kSeeds.size(), seconds(t0));
  for (auto s : kSeeds) std::printf(" %.4f", bench(s).teacher_accuracy);
  std::printf(")\n");

  const std::vector<Criterion> criteria{
      {1, "fusion exactness", 10, fusion_exactness},
      {2, "zero/drop equivalence", 10, zero_drop_equivalence},
      {3, "gradient correctness", 30, gradient_correctness},
      {4, "claim 1 KL upper bound", 30, claim1},
      {5, "claim 2 KL decomposition", 10, claim2},
      {6, "claim 4 feature-mimic variance", 60, claim4},
      {7, "claim 5 classification variance", 300, claim5},
      {8, "stability ordering", 120, stability_ordering},
      {9, "convexity direction", 120, convexity_direction},
      {10, "finetune convexity", 120, finetune_convexity},
      {11, "midpoint of disjoint finetunes", 120, midpoint},
      {12, "recoverability consistency", 600, recoverability_consistency},
      {13, "method ordering", 900, method_ordering},
      {14, "latency sanity", 300, latency_sanity},
      {15, "determinism", 0, determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    auto start = clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double dt = seconds(start);
    const bool in_budget = c.budget_s == 0 || dt < c.budget_s;
    const bool pass = o.pass && in_budget;
    failures += !pass;
    std::string budget = c.budget_s == 0 ? "" : fmt(", budget %.0f s%s", c.budget_s, in_budget ? "" : " EXCEEDED");
    std::printf("%s [%2d] %s: %s (%.1f s%s)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), dt,
                budget.c_str());
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures;
}
