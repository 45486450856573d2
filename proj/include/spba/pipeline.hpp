#pragma once

#include <optional>

#include "spba/config.hpp"
#include "spba/eval.hpp"
#include "spba/poison.hpp"
#include "spba/training.hpp"

namespace spba {

/// Attack-stage artifacts for one experiment.
struct AttackArtifacts {
  TriggerRegistry registry;
  AttackConfig attack;
  DatasetSplit split;
  PoisonedSubset poisoned_subset;  // Dps + manifest
  PoisonedTrainSet train_set;      // Dp
  LabeledDataset poisoned_test;    // Dcp
};

AttackArtifacts run_attack_stage(const ExperimentConfig& cfg, const LabeledDataset& data);

/// Registry for an existing dataset (dimension and classes taken from it).
TriggerRegistry registry_for(const ExperimentConfig& cfg, const LabeledDataset& data);

/// Model spec matching the encoded inputs.
ModelSpec model_spec_for(const ExperimentConfig& cfg, const EncodedDataset& encoded, int num_classes);

struct TrainedModel {
  Model model;
  TrainResult result;
};

/// Trains a freshly initialized model on `train_set`.
TrainedModel train_model(const ExperimentConfig& cfg, const EncodedDataset& train_set,
                         const TriggerRegistry& registry, int num_classes,
                         const MgdaObserver& observer = {});

/// Clean rows of an encoded Dp (that is, Dc1).
EncodedDataset clean_rows(const EncodedDataset& d);

AttackReport build_report(const ExperimentConfig& cfg, const Model& victim, double reference_accuracy,
                          const EncodedDataset& clean_test, const EncodedDataset& poisoned_test,
                          const PoisonManifest& manifest, const TriggerRegistry& registry);

struct ExperimentResult {
  AttackReport report;
  PoisonManifest manifest;
  TrainResult victim;
};

/// Complete poison -> train -> evaluate run. The AV reference accuracy is
/// computed by training on Dc1 alone unless `reference_accuracy` is given.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const LabeledDataset& data,
                                std::optional<double> reference_accuracy = std::nullopt,
                                const MgdaObserver& observer = {});

/// Clean accuracy of the Dc1-only reference model for `cfg`.
double reference_accuracy(const ExperimentConfig& cfg, const LabeledDataset& data);

}  // namespace spba
