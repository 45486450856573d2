#include "spba/pipeline.hpp"

#include "spba/error.hpp"

namespace spba {

TriggerRegistry registry_for(const ExperimentConfig& cfg, const LabeledDataset& data) {
  if (data.empty()) data_error("dataset is empty");
  const std::size_t dim = data.payload_kind == PayloadKind::vector ? data.samples.front().features().size() : 0;
  return build_registry(cfg, data.payload_kind, dim, data.num_classes);
}

AttackArtifacts run_attack_stage(const ExperimentConfig& cfg, const LabeledDataset& data) {
  const ValidationReport v = validate_dataset(data);
  if (!v.ok()) data_error("invalid dataset: " + v.violations.front());

  TriggerRegistry registry = registry_for(cfg, data);
  AttackConfig attack = build_attack_config(cfg, registry);
  SplitSpec split_spec = cfg.split;
  split_spec.seed = cfg.split_seed();
  DatasetSplit split = split_dataset(data, split_spec);
  PoisonedSubset dps = build_poisoned_subset(split.unpolluted, attack);
  PoisonedTrainSet dp = assemble_poisoned_dataset(split.train, dps.samples);

  TestsetOptions opts;
  opts.per_trigger = cfg.eval.test_per_trigger;
  for (const auto& r : dps.manifest.records) {
    if (r.source_uid.starts_with("pool/")) opts.excluded_pool_uids.insert(r.source_uid);
  }
  LabeledDataset dcp = build_poisoned_testset(split.test, registry, cfg.testset_seed(), opts);
  return AttackArtifacts{std::move(registry), std::move(attack), std::move(split),
                         std::move(dps),      std::move(dp),     std::move(dcp)};
}

ModelSpec model_spec_for(const ExperimentConfig& cfg, const EncodedDataset& encoded, int num_classes) {
  ModelSpec spec;
  spec.arch = cfg.model.arch;
  spec.hidden = cfg.model.hidden;
  spec.num_classes = num_classes;
  spec.init_seed = cfg.model_seed();
  spec.input_dim = static_cast<std::size_t>(encoded.inputs.cols());
  const bool audio = encoded.frames > 0;
  if (spec.arch == Arch::cnn_spectrogram) {
    if (!audio) config_error("model.arch: cnn_spectrogram needs an audio dataset");
    spec.frames = encoded.frames;
    spec.bands = encoded.bands;
  }
  spec.validate();
  return spec;
}

TrainedModel train_model(const ExperimentConfig& cfg, const EncodedDataset& train_set,
                         const TriggerRegistry& registry, int num_classes, const MgdaObserver& observer) {
  Model model(model_spec_for(cfg, train_set, num_classes));
  TrainConfig tc = cfg.train;
  tc.seed = cfg.train_seed();
  TrainResult result = train(model, train_set, tc, registry, observer);
  return TrainedModel{std::move(model), std::move(result)};
}

EncodedDataset clean_rows(const EncodedDataset& d) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!d.trigger_ids[i]) rows.push_back(i);
  }
  return d.subset(rows);
}

AttackReport build_report(const ExperimentConfig& cfg, const Model& victim, double reference_acc,
                          const EncodedDataset& clean_test, const EncodedDataset& poisoned_test,
                          const PoisonManifest& manifest, const TriggerRegistry& registry) {
  AttackReport r;
  r.clean_accuracy = clean_accuracy(victim, clean_test);
  r.reference_accuracy = reference_acc;
  const AsrResult asr = attack_success_rate(victim, poisoned_test, &registry);
  r.asr_overall = asr.overall;
  r.asr_per_trigger = asr.per_trigger;
  r.test_count_per_trigger = asr.counts;
  r.av = accuracy_variance(reference_acc, r.clean_accuracy);
  r.pn_total = manifest.pn_total;
  r.pn_per_trigger = manifest.pn_per_trigger;
  r.config_hash = cfg.hash();
  r.seed = cfg.seed;
  return r;
}

double reference_accuracy(const ExperimentConfig& cfg, const LabeledDataset& data) {
  TriggerRegistry registry = registry_for(cfg, data);
  SplitSpec split_spec = cfg.split;
  split_spec.seed = cfg.split_seed();
  const DatasetSplit split = split_dataset(data, split_spec);
  const EncodedDataset train_set = encode_dataset(split.train, cfg.features);
  const EncodedDataset test_set = encode_dataset(split.test, cfg.features);
  const TrainedModel ref = train_model(cfg, train_set, registry, data.num_classes);
  return clean_accuracy(ref.model, test_set);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const LabeledDataset& data,
                                std::optional<double> reference_acc, const MgdaObserver& observer) {
  AttackArtifacts art = run_attack_stage(cfg, data);
  const EncodedDataset dp = encode_dataset(art.train_set.data, cfg.features);
  const EncodedDataset dc2 = encode_dataset(art.split.test, cfg.features);
  const EncodedDataset dcp = encode_dataset(art.poisoned_test, cfg.features);

  TrainedModel victim = train_model(cfg, dp, art.registry, data.num_classes, observer);
  if (!reference_acc) {
    const TrainedModel ref = train_model(cfg, clean_rows(dp), art.registry, data.num_classes);
    reference_acc = clean_accuracy(ref.model, dc2);
  }
  ExperimentResult out;
  out.report = build_report(cfg, victim.model, *reference_acc, dc2, dcp, art.poisoned_subset.manifest,
                            art.registry);
  out.manifest = std::move(art.poisoned_subset.manifest);
  out.victim = std::move(victim.result);
  return out;
}

}  // namespace spba
