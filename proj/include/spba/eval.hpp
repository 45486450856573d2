#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spba/config.hpp"
#include "spba/model.hpp"
#include "spba/training.hpp"

namespace spba {

/// Percentages are in [0, 100]; av is in percentage points.
struct AttackReport {
  double clean_accuracy = 0.0;
  double reference_accuracy = 0.0;
  double asr_overall = 0.0;
  std::map<std::string, double> asr_per_trigger;
  std::map<std::string, std::size_t> test_count_per_trigger;
  double av = 0.0;
  std::size_t pn_total = 0;
  std::map<std::string, std::size_t> pn_per_trigger;
  std::string config_hash;
  std::uint64_t seed = 0;

  /// Lowest per-trigger ASR (0 when there are no triggers).
  double asr_min() const;
};

double clean_accuracy(std::span<const int> predictions, std::span<const int> labels);
double clean_accuracy(const Model& model, const EncodedDataset& clean_test);

struct AsrResult {
  double overall = 0.0;
  std::map<std::string, double> per_trigger;
  std::map<std::string, std::size_t> counts;
};

/// Per trigger: share of samples predicted as their (target) label. The
/// overall value weights triggers by sample count.
AsrResult attack_success_rate(std::span<const int> predictions, std::span<const int> labels,
                              std::span<const std::optional<std::string>> trigger_ids);
/// When `registry` is given, every label must equal its trigger's target.
AsrResult attack_success_rate(const Model& model, const EncodedDataset& poisoned_test,
                              const TriggerRegistry* registry = nullptr);

/// Weighted mean of per-trigger rates by counts.
double weighted_asr(const std::map<std::string, double>& per_trigger,
                    const std::map<std::string, std::size_t>& counts);

/// |reference - victim|
double accuracy_variance(double acc_reference, double acc_victim);

/// Text report, one `key = value` per line, numbers at 4 decimals.
std::string format_report(const AttackReport& r);
AttackReport parse_report(const std::string& text);
void emit_report(const AttackReport& r, const std::filesystem::path& path);
AttackReport load_report(const std::filesystem::path& path);

/// Sweep over attack and training settings. pn values are totals unless
/// `pn_is_per_trigger` is set.
struct SweepGrid {
  std::vector<std::size_t> pn_values;
  bool pn_is_per_trigger = false;
  std::vector<std::size_t> k_values;
  std::vector<bool> mgda;
  std::vector<std::uint64_t> seeds;

  std::size_t cells() const { return pn_values.size() * k_values.size() * mgda.size() * seeds.size(); }
};

/// JSON object with keys `pn_totals` or `pn_per_trigger`, and `k`, `mgda`,
/// `seeds`; missing `k`/`mgda`/`seeds` fall back to the base config.
SweepGrid parse_sweep_grid(const nlohmann::json& j, const ExperimentConfig& base);
SweepGrid load_sweep_grid(const std::filesystem::path& path, const ExperimentConfig& base);

struct SweepRow {
  std::size_t k = 0;
  std::size_t pn_total = 0;
  std::vector<std::size_t> pn_per_trigger;
  bool mgda = false;
  std::uint64_t seed = 0;
  double clean_acc = 0.0;
  double av = 0.0;
  double asr_overall = 0.0;
  double asr_per_trigger_min = 0.0;
  std::string status = "ok";
};

/// Runs every cell (order: K, pn, mgda, seed) through poison, train and eval.
/// Cell failures are recorded in `status`; the sweep continues.
std::vector<SweepRow> sweep(const ExperimentConfig& base, const SweepGrid& grid, unsigned jobs = 1,
                            const std::function<void(const SweepRow&)>& on_row = {});

/// Header: K,pn_total,pn_per_trigger,mgda,seed,clean_acc,av,asr_overall,asr_per_trigger_min,status
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace spba
