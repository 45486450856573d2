#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spba/datamodel.hpp"
#include "spba/features.hpp"
#include "spba/model.hpp"
#include "spba/poison.hpp"
#include "spba/training.hpp"
#include "spba/triggers.hpp"

namespace spba {

/// C Gaussian clusters: class means ~ N(0, mean_scale^2 I), samples
/// mean + spread * N(0, I).
struct SyntheticVectorConfig {
  int num_classes = 10;
  std::size_t dim = 64;
  std::size_t per_class = 625;
  double spread = 0.3;
  double mean_scale = 1.0;
  std::uint64_t seed = 11;
};

/// Per-class two-tone sine mixtures with jitter and white noise.
struct SyntheticAudioConfig {
  int num_classes = 4;
  std::size_t per_class = 40;
  int sample_rate = 16000;
  double duration_s = 0.5;
  double noise = 0.02;
  std::uint64_t seed = 11;
};

struct DatasetSection {
  enum class Kind { synthetic_vector, synthetic_audio, directory };
  Kind kind = Kind::synthetic_vector;
  SyntheticVectorConfig vector;
  SyntheticAudioConfig audio;
  std::filesystem::path directory;
};

/// Either an explicit trigger list or K generated triggers. Generated vector
/// triggers use orthonormal signatures; generated audio triggers alternate
/// between spectral tilt and amplitude modulation.
struct TriggerSection {
  std::vector<TriggerSpec> list;
  bool generated = true;
  std::size_t count = 3;
  double scale = 2.0;
  bool distinct_targets = true;  // trigger k -> class k mod C; else all -> `target`
  int target = 0;
  std::uint64_t seed = 101;
};

struct AttackSection {
  // Exactly one of these is used, in this priority order.
  std::map<std::string, std::size_t> pn_per_trigger;
  std::optional<std::size_t> pn_each;
  std::optional<std::size_t> pn_total;
};

struct ModelSection {
  Arch arch = Arch::mlp;
  std::vector<int> hidden = {64};
};

struct EvalSection {
  std::optional<std::size_t> test_per_trigger;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  DatasetSection dataset;
  SplitSpec split;
  TriggerSection triggers;
  AttackSection attack;
  ModelSection model;
  TrainConfig train;
  EvalSection eval;
  FeatureConfig features;

  // Stage seeds, all derived from `seed`.
  std::uint64_t split_seed() const;
  std::uint64_t attack_seed() const;
  std::uint64_t model_seed() const;
  std::uint64_t train_seed() const;
  std::uint64_t testset_seed() const;

  /// Copy with `seed` replaced and stage seeds re-derived.
  ExperimentConfig with_seed(std::uint64_t new_seed) const;

  std::string canonical() const;
  std::string hash() const;
};

/// Defaults: 10-class 64-d vector task, 80/5/15 split, 3 triggers at scale
/// 2.0, 50 poisoned samples per trigger, mlp(64), 30 epochs of Adam, MGDA on.
ExperimentConfig default_config();

/// Unknown keys and type errors raise config errors naming the field path.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);

LabeledDataset synthetic_vector_dataset(const SyntheticVectorConfig& cfg);
LabeledDataset synthetic_audio_dataset(const SyntheticAudioConfig& cfg);
/// Generates or loads the configured dataset.
LabeledDataset make_dataset(const DatasetSection& section);

/// `dim` is the vector payload dimension (ignored for audio).
TriggerRegistry build_registry(const ExperimentConfig& cfg, PayloadKind kind, std::size_t dim,
                               int num_classes);
AttackConfig build_attack_config(const ExperimentConfig& cfg, const TriggerRegistry& registry);

}  // namespace spba
