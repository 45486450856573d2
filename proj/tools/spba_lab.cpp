// spba_lab: poison, train, evaluate and sweep multi-trigger backdoor experiments.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "spba/config.hpp"
#include "spba/dataset_io.hpp"
#include "spba/error.hpp"
#include "spba/eval.hpp"
#include "spba/mgda.hpp"
#include "spba/pipeline.hpp"
#include "spba/rng.hpp"

namespace fs = std::filesystem;
using namespace spba;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned jobs = 1;
  bool quiet = false;
};

Common g_opts;

std::ostream& log() {
  static std::ostream null_stream(nullptr);
  return g_opts.quiet ? null_stream : std::clog;
}

std::string abs_path(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

ExperimentConfig load_experiment_config() {
  ExperimentConfig cfg = g_opts.config.empty() ? default_config() : load_config(g_opts.config);
  if (g_opts.seed) cfg = cfg.with_seed(*g_opts.seed);
  if (!g_opts.config.empty()) log() << "config: " << abs_path(g_opts.config) << '\n';
  return cfg;
}

fs::path cache_root() {
  const char* env = std::getenv("SPBA_LAB_CACHE");
  return env && *env ? fs::path(env) : fs::path("spba_cache");
}

fs::path dataset_cache_dir(const ExperimentConfig& cfg) {
  const std::string section = config_to_json(cfg)["dataset"].dump();
  return cache_root() / ("dataset-" + hash_hex(section));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) runtime_error("cannot write " + path.string());
  out << text;
  if (!out) runtime_error("failed writing " + path.string());
}

// Loads --data when given, otherwise the cached (or freshly generated) dataset.
LabeledDataset obtain_dataset(const ExperimentConfig& cfg, const std::string& data_dir) {
  if (!data_dir.empty()) {
    log() << "dataset: " << abs_path(data_dir) << '\n';
    return load_dataset(data_dir);
  }
  if (cfg.dataset.kind == DatasetSection::Kind::directory) {
    log() << "dataset: " << abs_path(cfg.dataset.directory) << '\n';
    return load_dataset(cfg.dataset.directory);
  }
  const fs::path dir = dataset_cache_dir(cfg);
  if (fs::exists(dir / "dataset.json")) {
    log() << "dataset (cached): " << abs_path(dir) << '\n';
    return load_dataset(dir);
  }
  LabeledDataset d = make_dataset(cfg.dataset);
  save_dataset(d, dir);
  log() << "dataset (generated): " << abs_path(dir) << '\n';
  return d;
}

void print_summary(const LabeledDataset& d, const ValidationReport& v) {
  std::map<int, std::size_t> per_class;
  for (const auto& s : d.samples) ++per_class[s.label];
  std::cout << "samples: " << d.size() << '\n'
            << "classes: " << d.num_classes << '\n'
            << "payload: " << to_string(d.payload_kind) << '\n';
  for (const auto& [c, n] : per_class) std::cout << "class " << c << ": " << n << '\n';
  std::cout << "validation: " << (v.ok() ? "clean" : std::to_string(v.violations.size()) + " violations")
            << '\n';
}

int cmd_gen_data() {
  const ExperimentConfig cfg = load_experiment_config();
  if (cfg.dataset.kind == DatasetSection::Kind::directory) {
    config_error("dataset.kind: gen-data needs a synthetic dataset");
  }
  const fs::path dir = g_opts.out.empty() ? dataset_cache_dir(cfg) : fs::path(g_opts.out);
  const LabeledDataset d = make_dataset(cfg.dataset);
  const ValidationReport v = validate_dataset(d);
  if (!v.ok()) runtime_error("generated dataset failed validation: " + v.violations.front());
  save_dataset(d, dir);
  log() << "wrote dataset: " << abs_path(dir) << '\n';
  print_summary(d, v);
  return 0;
}

int cmd_poison(const std::string& data_dir) {
  const ExperimentConfig cfg = load_experiment_config();
  if (g_opts.out.empty()) config_error("--out: poison needs an output directory");
  const LabeledDataset data = obtain_dataset(cfg, data_dir);
  const AttackArtifacts art = run_attack_stage(cfg, data);
  if (art.poisoned_subset.manifest.pn_total == 0) {
    log() << "warning: pn_total is 0, the training set is the clean split alone\n";
  }
  const fs::path out = g_opts.out;
  fs::create_directories(out);
  save_dataset(art.train_set.data, out / "train");
  save_dataset(art.poisoned_subset.samples, out / "poisoned_subset");
  save_dataset(art.split.test, out / "test");
  save_dataset(art.poisoned_test, out / "test_poisoned");
  save_manifest(art.poisoned_subset.manifest, out / "manifest.jsonl");
  log() << "wrote poisoned datasets and manifest: " << abs_path(out) << '\n';
  std::cout << "train: " << art.train_set.data.size() << " (" << art.train_set.clean_count << " clean, "
            << art.train_set.poisoned_count << " poisoned)\n"
            << "test: " << art.split.test.size() << '\n'
            << "test_poisoned: " << art.poisoned_test.size() << '\n'
            << "pn_total: " << art.poisoned_subset.manifest.pn_total << '\n';
  for (const auto& [id, n] : art.poisoned_subset.manifest.pn_per_trigger) {
    std::cout << "pn." << id << ": " << n << '\n';
  }
  std::cout << "config_hash: " << art.poisoned_subset.manifest.config_hash << '\n';
  return 0;
}

int cmd_train(const std::string& poisoned_dir) {
  const ExperimentConfig cfg = load_experiment_config();
  if (g_opts.out.empty()) config_error("--out: train needs an output directory");
  const LabeledDataset dp = load_dataset(fs::path(poisoned_dir) / "train");
  log() << "training set: " << abs_path(fs::path(poisoned_dir) / "train") << '\n';
  const EncodedDataset encoded = encode_dataset(dp, cfg.features);
  const TriggerRegistry registry = registry_for(cfg, dp);
  const TrainedModel tm = train_model(cfg, encoded, registry, dp.num_classes);

  const fs::path out = g_opts.out;
  fs::create_directories(out);
  save_checkpoint(out / "model.ckpt", tm.model, static_cast<std::uint32_t>(cfg.train.epochs));
  write_history_csv(tm.result, out / "history.csv");
  log() << "wrote checkpoint and history: " << abs_path(out) << '\n';

  if (tm.result.history.empty()) {
    std::cout << "epochs: 0 (checkpoint holds the initialization)\n";
  } else {
    const EpochRecord& last = tm.result.history.back();
    std::cout << "epochs: " << tm.result.history.size() << '\n';
    for (std::size_t t = 0; t < last.task_ids.size(); ++t) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.6f", last.losses[t]);
      std::cout << "loss." << last.task_ids[t] << ": " << buf << '\n';
    }
  }
  return 0;
}

Model load_model_for(const fs::path& path, const EncodedDataset& inputs) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.spec.input_dim != static_cast<std::size_t>(inputs.inputs.cols())) {
    data_error("checkpoint " + path.string() + " expects input dimension " + std::to_string(ck.spec.input_dim) +
               ", dataset has " + std::to_string(inputs.inputs.cols()));
  }
  return Model(ck.spec, std::move(ck.parameters));
}

int cmd_eval(const std::string& checkpoint, const std::string& poisoned_dir, const std::string& reference) {
  const ExperimentConfig cfg = load_experiment_config();
  const fs::path dir = poisoned_dir;
  if (!fs::exists(dir / "test_poisoned" / "dataset.json")) {
    data_error("missing poisoned test set " + abs_path(dir / "test_poisoned"));
  }
  const LabeledDataset dc2 = load_dataset(dir / "test");
  const LabeledDataset dcp = load_dataset(dir / "test_poisoned");
  const PoisonManifest manifest = load_manifest(dir / "manifest.jsonl", dc2.num_classes);
  const EncodedDataset dc2_enc = encode_dataset(dc2, cfg.features);
  const EncodedDataset dcp_enc = encode_dataset(dcp, cfg.features);
  const Model victim = load_model_for(checkpoint, dc2_enc);
  log() << "victim: " << abs_path(checkpoint) << '\n';

  const LabeledDataset dp = load_dataset(dir / "train");
  const TriggerRegistry registry = registry_for(cfg, dp);

  double ref_acc = 0.0;
  if (!reference.empty()) {
    log() << "reference checkpoint given, skipping reference training: " << abs_path(reference) << '\n';
    ref_acc = clean_accuracy(load_model_for(reference, dc2_enc), dc2_enc);
  } else {
    log() << "training reference model on the clean training rows\n";
    const EncodedDataset clean = clean_rows(encode_dataset(dp, cfg.features));
    ref_acc = clean_accuracy(train_model(cfg, clean, registry, dp.num_classes).model, dc2_enc);
  }
  const AttackReport report = build_report(cfg, victim, ref_acc, dc2_enc, dcp_enc, manifest, registry);
  if (!g_opts.out.empty()) {
    emit_report(report, g_opts.out);
    log() << "wrote report: " << abs_path(g_opts.out) << '\n';
  }
  std::cout << format_report(report);
  return 0;
}

int cmd_run() {
  const ExperimentConfig cfg = load_experiment_config();
  const LabeledDataset data = obtain_dataset(cfg, "");
  const ExperimentResult res = run_experiment(cfg, data);
  if (!g_opts.out.empty()) {
    const fs::path out = g_opts.out;
    fs::create_directories(out);
    save_manifest(res.manifest, out / "manifest.jsonl");
    emit_report(res.report, out / "report.txt");
    write_history_csv(res.victim, out / "history.csv");
    log() << "wrote manifest, report and history: " << abs_path(out) << '\n';
  }
  std::cout << format_report(res.report);
  return 0;
}

int cmd_sweep(const std::string& grid_path) {
  const ExperimentConfig cfg = load_experiment_config();
  const SweepGrid grid = load_sweep_grid(grid_path, cfg);
  log() << "grid: " << abs_path(grid_path) << " (" << grid.cells() << " cells, " << g_opts.jobs << " jobs)\n";
  std::size_t done = 0;
  const auto rows = sweep(cfg, grid, g_opts.jobs, [&](const SweepRow& r) {
    log() << "cell " << ++done << '/' << grid.cells() << ": K=" << r.k << " pn_total=" << r.pn_total
          << " mgda=" << r.mgda << " seed=" << r.seed << " " << r.status << '\n';
  });
  const std::string csv = sweep_csv(rows);
  if (!g_opts.out.empty()) {
    write_text(g_opts.out, csv);
    log() << "wrote sweep: " << abs_path(g_opts.out) << '\n';
  }

  // Minimum per-trigger ASR, averaged over seeds, per (K, pn, mgda).
  std::map<std::tuple<std::size_t, std::size_t, bool>, std::pair<double, std::size_t>> table;
  for (const auto& r : rows) {
    if (r.status != "ok") continue;
    auto& [sum, n] = table[{r.k, r.pn_total, r.mgda}];
    sum += r.asr_per_trigger_min;
    ++n;
  }
  std::cout << "K  pn_total  mgda  min_asr_mean  seeds\n";
  for (const auto& [key, v] : table) {
    const auto& [k, pn, mgda] = key;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-2zu %-9zu %-5s %-13.4f %zu", k, pn, mgda ? "on" : "off",
                  v.first / static_cast<double>(v.second), v.second);
    std::cout << buf << '\n';
  }
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.status == "ok" ? 0 : 1;
  if (failed) log() << "warning: " << failed << " cells failed\n";
  return 0;
}

int cmd_mgda(const std::string& path) {
  std::ifstream in(path);
  if (!in) data_error("cannot read Gram matrix " + path);
  long t = 0;
  if (!(in >> t) || t < 1) data_error(path + ": expected the task count T >= 1 first");
  Eigen::MatrixXd m(t, t);
  for (long i = 0; i < t; ++i) {
    for (long j = 0; j < t; ++j) {
      if (!(in >> m(i, j))) data_error(path + ": expected " + std::to_string(t * t) + " matrix entries");
    }
  }
  const SimplexWeights w = solve_min_norm(m);
  for (long i = 0; i < t; ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9f", w.lambda[static_cast<std::size_t>(i)]);
    std::cout << buf << '\n';
  }
  log() << "iterations: " << w.iterations << ", converged: " << (w.converged ? "yes" : "no") << '\n';
  return 0;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config:
      return 2;
    case ErrorKind::data:
      return 3;
    case ErrorKind::runtime:
      return 4;
  }
  return 4;
}

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::config:
      return "config";
    case ErrorKind::data:
      return "data";
    case ErrorKind::runtime:
      return "runtime";
  }
  return "runtime";
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-trigger backdoor experiment toolkit"};
  app.require_subcommand(1);
  app.add_option("--config", g_opts.config, "Experiment config (JSON)");
  app.add_option("--seed", g_opts.seed, "Override the config seed");
  app.add_option("--out", g_opts.out, "Output path");
  app.add_option("--jobs", g_opts.jobs, "Parallel sweep cells")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", g_opts.quiet, "Suppress progress logging");

  std::string data_dir, poisoned_dir, checkpoint, reference, grid, gram;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  auto* poison = app.add_subcommand("poison", "Split, poison and write Dp, Dps, Dc2, Dcp and the manifest");
  poison->add_option("--data", data_dir, "Dataset directory (default: cache or config)");
  auto* train_cmd = app.add_subcommand("train", "Train the victim on a poisoned directory");
  train_cmd->add_option("--data", poisoned_dir, "Output directory of `poison`")->required();
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and write the attack report");
  eval_cmd->add_option("--checkpoint", checkpoint, "Victim checkpoint")->required();
  eval_cmd->add_option("--data", poisoned_dir, "Output directory of `poison`")->required();
  eval_cmd->add_option("--reference", reference, "Reference checkpoint trained on clean data");
  auto* run_cmd = app.add_subcommand("run", "Poison, train and evaluate in one go");
  auto* sweep_cmd = app.add_subcommand("sweep", "Run a grid of experiments and write a CSV");
  sweep_cmd->add_option("--grid", grid, "Grid file (JSON)")->required();
  auto* mgda_cmd = app.add_subcommand("mgda", "Solve the min-norm problem for a Gram matrix file");
  mgda_cmd->add_option("gram", gram, "File: T, then T rows of T numbers")->required();

  for (auto* sub : {gen, poison, train_cmd, eval_cmd, run_cmd, sweep_cmd, mgda_cmd}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: config: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data();
    if (*poison) return cmd_poison(data_dir);
    if (*train_cmd) return cmd_train(poisoned_dir);
    if (*eval_cmd) return cmd_eval(checkpoint, poisoned_dir, reference);
    if (*run_cmd) return cmd_run();
    if (*sweep_cmd) return cmd_sweep(grid);
    if (*mgda_cmd) return cmd_mgda(gram);
  } catch (const Error& e) {
    std::cerr << "error: " << kind_name(e.kind()) << ": " << one_line(e.what()) << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << one_line(e.what()) << '\n';
    return 4;
  }
  return 4;
}
