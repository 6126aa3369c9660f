// practise: train teachers, compress them, probe loss landscapes, check the
// variance theory and time blocks. Every command writes its resolved config
// next to its outputs so the run can be replayed from that file alone.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "practise/baselines.hpp"
#include "practise/errors.hpp"
#include "practise/experiment.hpp"
#include "practise/landscape.hpp"
#include "practise/practise.hpp"
#include "practise/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace practise;

namespace {

std::string num(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, r.ptr};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

fs::path prepare_output(const ExperimentConfig& cfg) {
  fs::path dir(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  write_json(dir / "config.json", to_json(cfg));
  return dir;
}

ResNetModel load_teacher(const ExperimentConfig& cfg) {
  ResNetModel t = load_checkpoint(cfg.teacher_path());
  ResNetSpec want = network_spec(cfg);
  if (t.spec() != want) {
    throw ConfigError("teacher checkpoint " + cfg.teacher_path().string() +
                      " was not trained with this config's data/network/seed");
  }
  return t;
}

json block_list(const std::vector<BlockId>& blocks) {
  json a = json::array();
  for (auto b : blocks) a.push_back(b.name());
  return a;
}

json eval_json(const ResNetModel& m, const Dataset& heldout, const Dataset& tiny) {
  return {{"heldout_accuracy", accuracy(m, heldout)},
          {"heldout_cross_entropy", cross_entropy(m, heldout)},
          {"tiny_accuracy", accuracy(m, tiny)},
          {"flops", count_flops(m)},
          {"parameters", m.parameter_count()},
          {"checksum", std::to_string(parameter_checksum(m))}};
}

void write_scores_csv(const fs::path& path, const std::vector<BlockScore>& scores) {
  std::string s = "block,stage,index,R,tau,score,tau_raw,tau_clamped,latency_mean_ms,latency_std_ms\n";
  for (const auto& r : scores) {
    s += r.block.name() + "," + std::to_string(r.block.stage) + "," + std::to_string(r.block.index) + "," +
         num(r.recoverability) + "," + num(r.tau) + "," + num(r.score) + "," + num(r.tau_raw) + "," +
         (r.tau_clamped ? "1" : "0") + "," + num(r.latency.mean_ms) + "," + num(r.latency.std_ms) + "\n";
  }
  write_text(path, s);
}

// ---------------------------------------------------------------- commands

int cmd_train_teacher(const ExperimentConfig& cfg) {
  fs::path dir = prepare_output(cfg);
  Dataset data = generate_gaussian_mixture(mixture_params(cfg));
  TrainResult tr = train_teacher(build(network_spec(cfg)), data, teacher_training(cfg));
  fs::path ckpt = cfg.teacher_path();
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(tr.model, ckpt);
  Dataset heldout = data.select(Split::heldout);
  Dataset train = data.select(Split::train);
  json m = {{"command", "train-teacher"},
            {"checkpoint", ckpt.string()},
            {"dataset", dataset_manifest(data, mixture_params(cfg))},
            {"heldout_accuracy", accuracy(tr.model, heldout)},
            {"heldout_cross_entropy", cross_entropy(tr.model, heldout)},
            {"train_accuracy", accuracy(tr.model, train)},
            {"final_loss", tr.loss_trace.empty() ? 0.0 : tr.loss_trace.back()},
            {"flops", count_flops(tr.model)},
            {"parameters", tr.model.parameter_count()},
            {"checksum", std::to_string(parameter_checksum(tr.model))}};
  write_json(dir / "metrics.json", m);
  std::cout << "teacher heldout accuracy " << num(m["heldout_accuracy"].get<double>()) << ", checkpoint "
            << ckpt.string() << '\n';
  return 0;
}

int cmd_probe_landscape(const ExperimentConfig& cfg) {
  fs::path dir = prepare_output(cfg);
  ResNetModel teacher = load_teacher(cfg);
  Dataset data = generate_gaussian_mixture(mixture_params(cfg));
  Dataset heldout = data.select(Split::heldout);
  Dataset tiny = make_tiny(cfg, data);
  fs::create_directories(dir / "curves");

  // Block choice uses recoverability with FLOPs-based tau so curves never
  // depend on timing.
  PractiseConfig pc = practise_config(cfg);
  pc.tau_source = TauSource::flops;
  auto scores = score_blocks(teacher, tiny, pc);
  const std::size_t k = std::max<std::size_t>(cfg.k, 1);
  auto chosen = choose_blocks(scores, k);
  const BlockId single = choose_blocks(scores, 1).front();

  CurveLoss loss{cfg.landscape_loss == "feature_mse" ? LossKind::feature_mse : LossKind::cross_entropy, &teacher};
  const auto lambdas = uniform_lambdas(cfg.landscape_points);
  json table = json::array();
  auto emit = [&](const std::string& name, const ResNetModel& arch, const ResNetModel& a, const ResNetModel& b,
                  const std::string& an, const std::string& bn) {
    InterpolationCurve c = loss_curve(arch, flatten(a), flatten(b), heldout, loss, lambdas);
    c.endpoint_a = an;
    c.endpoint_b = bn;
    write_curve_csv(c, dir / "curves" / (name + ".csv"));
    json row = curve_sidecar(c);
    row["pair"] = name;
    table.push_back(row);
  };

  ResNetModel zeroed_block = zero_block(teacher, single);
  ResNetModel zeroed_filters = prune_filters(teacher, flops_matched_filter_spec(teacher, 1));
  emit("raw_vs_block_zeroed", teacher, teacher, zeroed_block, "raw", "block_zeroed:" + single.name());
  emit("raw_vs_filter_zeroed", teacher, teacher, zeroed_filters, "raw", "filter_zeroed");

  ResNetModel pruned = drop_blocks(teacher, chosen);
  FinetuneConfig ft = finetune_config(cfg, FinetuneMethod::feature_mimic);
  ResNetModel tuned = finetune(teacher, pruned, tiny, ft).student;
  emit("pruned_vs_finetuned", pruned, pruned, tuned, "pruned", "finetuned");

  auto [ta, tb] = sample_tiny_disjoint(data, cfg.tiny_size, stream_seed(cfg, SeedStream::tiny_pair));
  ResNetModel fa = finetune(teacher, pruned, ta, ft).student;
  ResNetModel fb = finetune(teacher, pruned, tb, ft).student;
  emit("finetuneA_vs_finetuneB", pruned, fa, fb, "finetune_A", "finetune_B");

  json m = {{"command", "probe-landscape"},
            {"loss", cfg.landscape_loss},
            {"points", cfg.landscape_points},
            {"zeroed_block", single.name()},
            {"filter_ratio", flops_matched_filter_spec(teacher, 1).ratio},
            {"dropped_blocks", block_list(chosen)},
            {"pairs", table}};
  write_json(dir / "diagnostics.json", m);
  write_json(dir / "metrics.json", m);
  for (const auto& r : table) {
    std::cout << r["pair"].get<std::string>() << ": convexity gap " << num(r["convexity_gap"].get<double>())
              << ", leakage " << num(r["loss_leakage"].get<double>()) << '\n';
  }
  return 0;
}

int cmd_compress(const ExperimentConfig& cfg) {
  if (cfg.method == "practise" && cfg.finetune_method != "feature_mimic") {
    throw ConfigError("method practise finetunes by feature mimicking; compress.finetune must be feature_mimic");
  }
  fs::path dir = prepare_output(cfg);
  ResNetModel teacher = load_teacher(cfg);
  Dataset data = generate_gaussian_mixture(mixture_params(cfg));
  Dataset heldout = data.select(Split::heldout);
  Dataset tiny = make_tiny(cfg, data);
  const FinetuneMethod method = finetune_method_from_string(cfg.finetune_method);
  const LatencyConfig lc = latency_config(cfg);

  json m = {{"command", "compress"}, {"method", cfg.method}, {"finetune", cfg.finetune_method}, {"k", cfg.k}};
  json timing = json::object();
  ResNetModel pruned;
  std::vector<BlockScore> scores;
  std::vector<double> trace;
  bool timing_dependent = false;

  if (cfg.method == "practise") {
    PractiseResult r = practise_compress(teacher, cfg.k, tiny, practise_config(cfg));
    scores = r.report.scores;
    pruned = drop_blocks(teacher, r.report.chosen);
    m["chosen"] = block_list(r.report.chosen);
    m["pre_finetune"] = eval_json(pruned, heldout, tiny);
    pruned = std::move(r.model);
    trace = std::move(r.report.finetune_trace);
    timing_dependent = cfg.tau_source == "measured";
    if (timing_dependent) timing["original_latency"] = to_json(r.report.original_latency);
  } else {
    if (cfg.method == "drop_first_k" || cfg.method == "curl_like_l2") {
      std::vector<BlockId> chosen;
      if (cfg.method == "drop_first_k") {
        chosen = first_k_blocks(teacher, cfg.k);
      } else {
        scores = l2_block_scores(teacher, tiny);
        chosen = choose_blocks(scores, cfg.k);
      }
      pruned = drop_blocks(teacher, chosen);
      m["chosen"] = block_list(chosen);
    } else {
      FilterPruneSpec spec;
      if (cfg.ratio) {
        spec.ratio = *cfg.ratio;
        pruned = prune_filters_shrunk(teacher, spec);
      } else if (cfg.filter_match == "flops") {
        spec = flops_matched_filter_spec(teacher, cfg.k);
        pruned = prune_filters_shrunk(teacher, spec);
      } else {
        // Match the measured speedup of dropping k blocks.
        const double target = compare_latency(teacher, drop_blocks(teacher, first_k_blocks(teacher, cfg.k)), lc).ratio.raw;
        FilterMatch fm = filter_prune_latency_matched(teacher, target, lc);
        pruned = std::move(fm.model);
        spec = filter_spec_for_units(fm.pruned_units, teacher.block(teacher.active_blocks().front()).hidden());
        timing["target_tau"] = target;
        timing_dependent = true;
      }
      m["filter_ratio"] = spec.ratio;
    }
    m["pre_finetune"] = eval_json(pruned, heldout, tiny);
    if (cfg.k > 0 || cfg.method == "filter_prune") {
      FinetuneResult fr = finetune(teacher, pruned, tiny, finetune_config(cfg, method));
      pruned = std::move(fr.student);
      trace = std::move(fr.trace);
    }
  }

  save_checkpoint(pruned, dir / "pruned.ckpt.json");
  if (!scores.empty()) write_scores_csv(dir / "scores.csv", scores);

  LatencyComparison lat = compare_latency(teacher, pruned, lc);
  timing["teacher_latency"] = to_json(lat.original);
  timing["pruned_latency"] = to_json(lat.pruned);
  timing["tau"] = lat.ratio.raw;
  if (!scores.empty()) {
    json rows = json::array();
    for (const auto& s : scores) rows.push_back(to_json(s));
    timing["scores"] = rows;
  }

  m["teacher"] = eval_json(teacher, heldout, tiny);
  m["final"] = eval_json(pruned, heldout, tiny);
  m["flops_reduction"] = 1.0 - static_cast<double>(count_flops(pruned)) / static_cast<double>(count_flops(teacher));
  m["finetune_final_loss"] = trace.empty() ? json(nullptr) : json(trace.back());
  m["selection_depends_on_timing"] = timing_dependent;
  if (!scores.empty()) {
    json r = json::object();
    for (const auto& s : scores) r[s.block.name()] = s.recoverability;
    m["recoverability"] = r;
  }
  m["timing"] = timing;
  write_json(dir / "metrics.json", m);
  std::cout << cfg.method << " + " << cfg.finetune_method << ": heldout accuracy "
            << num(m["final"]["heldout_accuracy"].get<double>()) << " (teacher "
            << num(m["teacher"]["heldout_accuracy"].get<double>()) << ")\n";
  return 0;
}

struct TheoryDefaults {
  // Two classes on bounded features: the fewest parameters per sample, so
  // n = 50 is already close to the asymptotic regime.
  theory::SoftmaxTeacher scaling_teacher{{0.0, 0.0}, {0.0, 0.0}};
  theory::Distribution scaling_features{theory::Distribution::Kind::uniform, -std::sqrt(3.0), std::sqrt(3.0)};
  theory::SoftmaxTeacher confident_teacher{{3.0, -3.0, 0.0}, {1.0, 1.0, 0.0}};
  std::vector<std::size_t> ns{50, 200, 800};
  std::vector<double> temperatures{1, 2, 3, 4, 5};
  std::size_t temperature_n = 200;
  std::size_t stability_n = 1000;
  double stability_confidence = 0.99;
};

int cmd_verify_theory(const ExperimentConfig& cfg) {
  fs::path dir = prepare_output(cfg);
  fs::create_directories(dir / "theory");
  const std::uint64_t seed = stream_seed(cfg, SeedStream::theory);
  const TheoryDefaults td;
  const theory::Distribution std_normal{theory::Distribution::Kind::normal, 0.0, 1.0};

  auto c1 = theory::verify_claim1(cfg.claim1_trials, 4, 4, derive_seed(seed, 1));
  json j1 = {{"claim", "claim1"}, {"trials", c1.trials}, {"violations", c1.violations},
             {"min_margin", c1.min_margin}, {"pass", c1.pass}};

  auto c2 = theory::verify_claim2(cfg.claim2_trials, 3, 5, derive_seed(seed, 2));
  auto g = theory::verify_gaussian_mse(0.5, cfg.claim2_trials, derive_seed(seed, 22));
  json j2 = {{"claim", "claim2"},          {"trials", c2.trials},
             {"max_identity_error", c2.max_error}, {"gaussian_mse_max_error", g.max_error},
             {"gaussian_mse_constant", g.constant}, {"pass", c2.pass && g.pass}};

  auto c4 = theory::verify_claim4(100, 0.5, cfg.claim4_trials, std_normal, derive_seed(seed, 4));
  json j4 = to_json(c4);

  // Asymptotic normality of the MLE, instantiated by the exactly solvable
  // least-squares case and the symmetric two-class softmax head.
  theory::SoftmaxTeacher sym{{0.0, 0.0}, {0.0, 0.0}};
  auto sym5 = theory::verify_claim5(200, 1.0, cfg.claim5_trials, sym, std_normal, derive_seed(seed, 3));
  json j3 = {{"claim", "claim3"}, {"least_squares", to_json(c4)}, {"symmetric_softmax", to_json(sym5)},
             {"pass", c4.pass && sym5.pass}};

  auto sc = theory::claim5_scaling(td.ns, cfg.claim5_trials, td.scaling_teacher, td.scaling_features, derive_seed(seed, 5));
  auto tc = theory::claim5_temperature(td.temperature_n, td.temperatures, cfg.claim5_trials, td.confident_teacher,
                                       std_normal, derive_seed(seed, 6));
  json scaling = json::array();
  for (const auto& r : sc.reports) scaling.push_back(to_json(r));
  json temps = json::array();
  for (const auto& r : tc.reports) temps.push_back(to_json(r));
  json j5 = {{"claim", "claim5"},
             {"scaling", {{"n", sc.ns}, {"worst_deviation", sc.worst_deviation}, {"reports", scaling}, {"pass", sc.pass}}},
             {"temperature",
              {{"n", td.temperature_n},
               {"temperatures", tc.temperatures},
               {"total_variance", tc.total_variance},
               {"reports", temps},
               {"pass", tc.pass}}},
             {"pass", sc.pass && tc.pass}};

  auto st = theory::compare_stability(td.stability_n, 0.5, td.stability_confidence, cfg.stability_trials,
                                      derive_seed(seed, 7));
  json js = to_json(st);

  const std::vector<std::pair<std::string, json*>> files{
      {"claim1", &j1}, {"claim2", &j2}, {"claim3", &j3}, {"claim4", &j4}, {"claim5", &j5}, {"stability", &js}};
  for (const auto& [name, doc] : files) write_json(dir / "theory" / (name + ".json"), *doc);

  const bool hard = c1.pass && c2.pass && g.pass && c4.pass;
  json m = {{"command", "verify-theory"},
            {"claims", json::array({j1, j2, j3, j4, j5})},
            {"stability", js},
            {"hard_invariants_pass", hard}};
  write_json(dir / "metrics.json", m);
  for (const auto& c : m["claims"]) {
    std::cout << c["claim"].get<std::string>() << ": " << (c["pass"].get<bool>() ? "pass" : "FAIL") << '\n';
  }
  std::cout << "stability: " << (st.pass ? "pass" : "FAIL") << '\n';
  if (!hard) throw InvariantError("claims 1, 2 or 4 failed");
  return 0;
}

int cmd_bench_latency(const ExperimentConfig& cfg, const std::vector<std::string>& models) {
  fs::path dir = prepare_output(cfg);
  ResNetModel teacher = load_teacher(cfg);
  const LatencyConfig lc = latency_config(cfg);
  LatencyStats orig = measure_latency(teacher, lc);

  std::string csv = "model,dropped,trials,warmup,flops,mean_ms,median_ms,std_ms,tau,tau_raw,clamped\n";
  json rows = json::array();
  auto add_row = [&](const std::string& name, const ResNetModel& m, const LatencyStats& s, AccelerationRatio r) {
    std::string dropped;
    for (auto b : m.dropped()) dropped += (dropped.empty() ? "" : ";") + b.name();
    csv += name + "," + dropped + "," + std::to_string(s.trials) + "," + std::to_string(s.warmup) + "," +
           std::to_string(count_flops(m)) + "," + num(s.mean_ms) + "," + num(s.median_ms) + "," + num(s.std_ms) +
           "," + num(r.tau) + "," + num(r.raw) + "," + (r.clamped ? "1" : "0") + "\n";
    rows.push_back({{"model", name}, {"flops", count_flops(m)}, {"latency", to_json(s)}, {"tau", r.tau},
                    {"tau_raw", r.raw}, {"clamped", r.clamped}});
  };
  // Each row is timed interleaved with the teacher; its tau comes from that pairing.
  auto add_pruned = [&](const std::string& name, const ResNetModel& p) {
    LatencyComparison c = compare_latency(teacher, p, lc);
    add_row(name, p, c.pruned, c.ratio);
  };
  add_row("original", teacher, orig, AccelerationRatio{0.0, 0.0, false});
  for (auto b : teacher.active_blocks()) add_pruned("drop:" + b.name(), drop_block(teacher, b));
  if (cfg.k >= 2 && cfg.k <= teacher.active_blocks().size()) {
    add_pruned("drop_first_" + std::to_string(cfg.k), drop_blocks(teacher, first_k_blocks(teacher, cfg.k)));
  }
  for (const auto& path : models) {
    add_pruned("checkpoint:" + fs::path(path).filename().string(), load_checkpoint(path));
  }
  write_text(dir / "latency.csv", csv);
  write_json(dir / "metrics.json", {{"command", "bench-latency"}, {"rows", rows}});
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot block-dropping compression toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON experiment config");
  app.add_option("--set", overrides, "override a config key, e.g. --set compress.k=2")->take_all();
  app.add_option("--seed", seed, "master seed; moves every module seed");

  auto* train = app.add_subcommand("train-teacher", "train the teacher and write its checkpoint");
  auto* probe = app.add_subcommand("probe-landscape", "interpolation curves and convexity diagnostics");
  auto* compress = app.add_subcommand("compress", "compress the teacher and finetune on the tiny set");
  auto* theory_cmd = app.add_subcommand("verify-theory", "Monte Carlo and exact checks of the variance theory");
  auto* bench = app.add_subcommand("bench-latency", "latency of the teacher and of every single-block drop");
  std::vector<std::string> bench_models;
  bench->add_option("--model", bench_models, "extra checkpoints to time");
  for (auto* sub : {train, probe, compress, theory_cmd, bench}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    json doc = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw IoError("cannot open config " + config_path);
      doc = json::parse(in, nullptr, false);
      if (doc.is_discarded()) throw ConfigError("config " + config_path + " is not valid JSON");
    }
    for (const auto& o : overrides) apply_override(doc, o);
    if (seed) doc["seed"] = *seed;
    ExperimentConfig cfg = config_from_json(doc);

    if (*train) return cmd_train_teacher(cfg);
    if (*probe) return cmd_probe_landscape(cfg);
    if (*compress) return cmd_compress(cfg);
    if (*theory_cmd) return cmd_verify_theory(cfg);
    if (*bench) return cmd_bench_latency(cfg, bench_models);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 3;
  } catch (const ParseError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 3;
  } catch (const InvariantError& e) {
    std::cerr << "invariant failed: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invariant failed: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
