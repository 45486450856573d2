#include "spba/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "spba/error.hpp"
#include "spba/pipeline.hpp"

namespace spba {

double AttackReport::asr_min() const {
  if (asr_per_trigger.empty()) return 0.0;
  double m = 100.0;
  for (const auto& [id, v] : asr_per_trigger) m = std::min(m, v);
  return m;
}

double clean_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (labels.empty()) data_error("clean_accuracy: empty test set");
  if (predictions.size() != labels.size()) runtime_error("clean_accuracy: size mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i] ? 1 : 0;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

double clean_accuracy(const Model& model, const EncodedDataset& clean_test) {
  if (clean_test.size() == 0) data_error("clean_accuracy: empty test set");
  return clean_accuracy(model.predict(clean_test.inputs), clean_test.labels);
}

double weighted_asr(const std::map<std::string, double>& per_trigger,
                    const std::map<std::string, std::size_t>& counts) {
  double num = 0.0;
  std::size_t den = 0;
  for (const auto& [id, v] : per_trigger) {
    const auto it = counts.find(id);
    if (it == counts.end()) runtime_error("weighted_asr: no count for trigger '" + id + "'");
    num += v * static_cast<double>(it->second);
    den += it->second;
  }
  return den == 0 ? 0.0 : num / static_cast<double>(den);
}

AsrResult attack_success_rate(std::span<const int> predictions, std::span<const int> labels,
                              std::span<const std::optional<std::string>> trigger_ids) {
  if (predictions.size() != labels.size() || labels.size() != trigger_ids.size()) {
    runtime_error("attack_success_rate: size mismatch");
  }
  if (labels.empty()) data_error("attack_success_rate: empty poisoned test set");
  std::map<std::string, std::size_t> hits;
  AsrResult r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!trigger_ids[i]) data_error("attack_success_rate: sample " + std::to_string(i) + " has no trigger id");
    ++r.counts[*trigger_ids[i]];
    if (predictions[i] == labels[i]) ++hits[*trigger_ids[i]];
  }
  std::size_t total_hits = 0;
  for (const auto& [id, n] : r.counts) {
    const std::size_t h = hits[id];
    total_hits += h;
    r.per_trigger[id] = 100.0 * static_cast<double>(h) / static_cast<double>(n);
  }
  r.overall = 100.0 * static_cast<double>(total_hits) / static_cast<double>(labels.size());
  return r;
}

AsrResult attack_success_rate(const Model& model, const EncodedDataset& poisoned_test,
                              const TriggerRegistry* registry) {
  if (registry) {
    for (std::size_t i = 0; i < poisoned_test.size(); ++i) {
      const auto& id = poisoned_test.trigger_ids[i];
      if (!id) data_error("attack_success_rate: sample " + std::to_string(i) + " has no trigger id");
      if (poisoned_test.labels[i] != registry->at(*id).target_label) {
        data_error("attack_success_rate: sample " + std::to_string(i) + " label differs from target of '" +
                   *id + "'");
      }
    }
  }
  if (poisoned_test.size() == 0) data_error("attack_success_rate: empty poisoned test set");
  return attack_success_rate(model.predict(poisoned_test.inputs), poisoned_test.labels,
                             poisoned_test.trigger_ids);
}

double accuracy_variance(double acc_reference, double acc_victim) {
  return std::abs(acc_reference - acc_victim);
}

namespace {

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string format_report(const AttackReport& r) {
  std::ostringstream os;
  os << "clean_accuracy = " << fixed4(r.clean_accuracy) << '\n';
  os << "reference_accuracy = " << fixed4(r.reference_accuracy) << '\n';
  os << "asr_overall = " << fixed4(r.asr_overall) << '\n';
  for (const auto& [id, v] : r.asr_per_trigger) os << "asr_per_trigger." << id << " = " << fixed4(v) << '\n';
  for (const auto& [id, n] : r.test_count_per_trigger) os << "test_count_per_trigger." << id << " = " << n << '\n';
  os << "av = " << fixed4(r.av) << '\n';
  os << "pn_total = " << r.pn_total << '\n';
  for (const auto& [id, n] : r.pn_per_trigger) os << "pn_per_trigger." << id << " = " << n << '\n';
  os << "config_hash = " << r.config_hash << '\n';
  os << "seed = " << r.seed << '\n';
  return os.str();
}

AttackReport parse_report(const std::string& text) {
  AttackReport r;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto number = [&](const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0') data_error("report line " + std::to_string(line_no) + ": bad number");
    return x;
  };
  auto count = [&](const std::string& v) -> std::uint64_t {
    try {
      std::size_t pos = 0;
      const auto x = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      data_error("report line " + std::to_string(line_no) + ": bad integer");
    }
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) data_error("report line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 3);
    auto suffix = [&](const std::string& prefix) -> std::optional<std::string> {
      if (key.size() > prefix.size() && key.starts_with(prefix)) return key.substr(prefix.size());
      return std::nullopt;
    };
    if (key == "clean_accuracy") {
      r.clean_accuracy = number(value);
    } else if (key == "reference_accuracy") {
      r.reference_accuracy = number(value);
    } else if (key == "asr_overall") {
      r.asr_overall = number(value);
    } else if (key == "av") {
      r.av = number(value);
    } else if (key == "pn_total") {
      r.pn_total = count(value);
    } else if (key == "config_hash") {
      r.config_hash = value;
    } else if (key == "seed") {
      r.seed = count(value);
    } else if (auto id = suffix("asr_per_trigger.")) {
      r.asr_per_trigger[*id] = number(value);
    } else if (auto id2 = suffix("test_count_per_trigger.")) {
      r.test_count_per_trigger[*id2] = count(value);
    } else if (auto id3 = suffix("pn_per_trigger.")) {
      r.pn_per_trigger[*id3] = count(value);
    } else {
      data_error("report line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  return r;
}

void emit_report(const AttackReport& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) runtime_error("cannot write report " + path.string());
  out << format_report(r);
  if (!out) runtime_error("failed writing report " + path.string());
}

AttackReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) data_error("cannot read report " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_report(buf.str());
}

SweepGrid parse_sweep_grid(const nlohmann::json& j, const ExperimentConfig& base) {
  if (!j.is_object()) config_error("grid: expected an object");
  SweepGrid g;
  for (const auto& [key, value] : j.items()) {
    if (key != "pn_totals" && key != "pn_per_trigger" && key != "k" && key != "mgda" && key != "seeds") {
      config_error("grid." + key + ": unknown key");
    }
  }
  try {
    if (j.contains("pn_totals") == j.contains("pn_per_trigger")) {
      config_error("grid: give exactly one of pn_totals, pn_per_trigger");
    }
    if (j.contains("pn_totals")) {
      g.pn_values = j.at("pn_totals").get<std::vector<std::size_t>>();
    } else {
      g.pn_values = j.at("pn_per_trigger").get<std::vector<std::size_t>>();
      g.pn_is_per_trigger = true;
    }
    g.k_values = j.contains("k") ? j.at("k").get<std::vector<std::size_t>>()
                                 : std::vector<std::size_t>{base.triggers.count};
    g.mgda = j.contains("mgda") ? j.at("mgda").get<std::vector<bool>>() : std::vector<bool>{base.train.mgda_enabled};
    g.seeds = j.contains("seeds") ? j.at("seeds").get<std::vector<std::uint64_t>>()
                                  : std::vector<std::uint64_t>{base.seed};
  } catch (const nlohmann::json::exception& e) {
    config_error(std::string("grid: ") + e.what());
  }
  if (g.cells() == 0) config_error("grid: every axis needs at least one value");
  for (std::size_t k : g.k_values) {
    if (k == 0) config_error("grid.k: values must be >= 1");
  }
  return g;
}

SweepGrid load_sweep_grid(const std::filesystem::path& path, const ExperimentConfig& base) {
  std::ifstream in(path);
  if (!in) config_error("cannot read grid " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    config_error(path.string() + ": " + e.what());
  }
  return parse_sweep_grid(j, base);
}

namespace {

struct Cell {
  std::size_t k;
  std::size_t pn;
  bool mgda;
  std::uint64_t seed;
};

ExperimentConfig cell_config(const ExperimentConfig& base, const SweepGrid& grid, const Cell& c) {
  ExperimentConfig cfg = base.with_seed(c.seed);
  if (cfg.triggers.generated) {
    cfg.triggers.count = c.k;
  } else {
    if (c.k > cfg.triggers.list.size()) {
      config_error("grid asks for K = " + std::to_string(c.k) + " but the config lists " +
                   std::to_string(cfg.triggers.list.size()) + " triggers");
    }
    cfg.triggers.list.resize(c.k);
    cfg.triggers.count = c.k;
  }
  cfg.attack = {};
  if (grid.pn_is_per_trigger) {
    cfg.attack.pn_each = c.pn;
  } else {
    cfg.attack.pn_total = c.pn;
  }
  cfg.train.mgda_enabled = c.mgda;
  return cfg;
}

template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  if (jobs == 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace

std::vector<SweepRow> sweep(const ExperimentConfig& base, const SweepGrid& grid, unsigned jobs,
                            const std::function<void(const SweepRow&)>& on_row) {
  if (grid.cells() == 0) config_error("sweep: empty grid");
  const LabeledDataset data = make_dataset(base.dataset);

  std::vector<Cell> cells;
  for (std::size_t k : grid.k_values) {
    for (std::size_t pn : grid.pn_values) {
      for (bool mgda : grid.mgda) {
        for (std::uint64_t seed : grid.seeds) cells.push_back({k, pn, mgda, seed});
      }
    }
  }

  // The Dc1-only reference depends on the seed alone.
  std::vector<std::optional<double>> reference(grid.seeds.size());
  std::vector<std::string> reference_error(grid.seeds.size());
  parallel_for(grid.seeds.size(), jobs, [&](std::size_t i) {
    try {
      reference[i] = reference_accuracy(base.with_seed(grid.seeds[i]), data);
    } catch (const std::exception& e) {
      reference_error[i] = e.what();
    }
  });

  std::vector<SweepRow> rows(cells.size());
  std::mutex report_mutex;
  parallel_for(cells.size(), jobs, [&](std::size_t i) {
    const Cell& c = cells[i];
    SweepRow& row = rows[i];
    row.k = c.k;
    row.mgda = c.mgda;
    row.seed = c.seed;
    try {
      const ExperimentConfig cfg = cell_config(base, grid, c);
      const auto seed_index = static_cast<std::size_t>(
          std::find(grid.seeds.begin(), grid.seeds.end(), c.seed) - grid.seeds.begin());
      if (!reference[seed_index]) runtime_error("reference model failed: " + reference_error[seed_index]);
      const ExperimentResult res = run_experiment(cfg, data, reference[seed_index]);
      const TriggerRegistry registry = registry_for(cfg, data);
      row.pn_total = res.report.pn_total;
      for (const auto& spec : registry.specs()) {
        const auto it = res.report.pn_per_trigger.find(spec.trigger_id);
        row.pn_per_trigger.push_back(it == res.report.pn_per_trigger.end() ? 0 : it->second);
      }
      row.clean_acc = res.report.clean_accuracy;
      row.av = res.report.av;
      row.asr_overall = res.report.asr_overall;
      row.asr_per_trigger_min = res.report.asr_min();
    } catch (const std::exception& e) {
      row.status = "failed";
      row.pn_total = grid.pn_is_per_trigger ? c.pn * c.k : c.pn;
      std::lock_guard lock(report_mutex);
      std::cerr << "sweep: cell " << i << " failed: " << e.what() << '\n';
    }
    if (on_row) {
      std::lock_guard lock(report_mutex);
      on_row(row);
    }
  });
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "K,pn_total,pn_per_trigger,mgda,seed,clean_acc,av,asr_overall,asr_per_trigger_min,status\n";
  for (const auto& r : rows) {
    std::string per;
    for (std::size_t i = 0; i < r.pn_per_trigger.size(); ++i) {
      if (i) per += ';';
      per += std::to_string(r.pn_per_trigger[i]);
    }
    os << r.k << ',' << r.pn_total << ',' << per << ',' << (r.mgda ? 1 : 0) << ',' << r.seed << ','
       << fixed4(r.clean_acc) << ',' << fixed4(r.av) << ',' << fixed4(r.asr_overall) << ','
       << fixed4(r.asr_per_trigger_min) << ',' << r.status << '\n';
  }
  return os.str();
}

}  // namespace spba
