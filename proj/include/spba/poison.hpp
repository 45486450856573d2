#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "spba/datamodel.hpp"
#include "spba/triggers.hpp"

namespace spba {

struct AttackConfig {
  TriggerRegistry registry;
  std::map<std::string, std::size_t> pn_per_trigger;
  std::uint64_t seed = 0;

  /// Every pn key must name a registry trigger.
  void validate() const;
  std::size_t pn_total() const;
  /// Stable canonical text form; the basis of `config_hash`.
  std::string canonical() const;
  std::string hash() const;
};

/// Splits `total` as evenly as possible over the registry, earlier triggers
/// receiving the remainder.
std::map<std::string, std::size_t> uniform_allocation(const TriggerRegistry& registry,
                                                      std::size_t total);

struct PoisonedSubset {
  LabeledDataset samples;  // Dps
  PoisonManifest manifest;
};

/// Builds Dps from Dc3. Sources for non-pool triggers are drawn without
/// replacement across all triggers; pool triggers draw from their pool.
PoisonedSubset build_poisoned_subset(const LabeledDataset& unpolluted, const AttackConfig& cfg);

struct PoisonedTrainSet {
  LabeledDataset data;  // Dp: clean samples first, then poisoned
  std::size_t clean_count = 0;
  std::size_t poisoned_count = 0;

  double poisoned_fraction() const {
    return data.empty() ? 0.0 : static_cast<double>(poisoned_count) / static_cast<double>(data.size());
  }
};

PoisonedTrainSet assemble_poisoned_dataset(const LabeledDataset& clean_train,
                                           const LabeledDataset& poisoned_subset);

struct TestsetOptions {
  /// Per-trigger subsample of Dc2; nullopt means every Dc2 sample.
  std::optional<std::size_t> per_trigger;
  /// Pool uids already consumed by the training subset.
  std::set<std::string> excluded_pool_uids;
};

/// Dcp: Dc2 with each trigger applied in turn, labels set to the trigger targets.
LabeledDataset build_poisoned_testset(const LabeledDataset& clean_test,
                                      const TriggerRegistry& registry, std::uint64_t seed,
                                      const TestsetOptions& options = {});

}  // namespace spba
