#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace spba {

enum class SplitTag { train, test, pool, unpolluted };
enum class PayloadKind { vector, audio };

const char* to_string(SplitTag tag);
const char* to_string(PayloadKind kind);
SplitTag split_tag_from_string(const std::string& s);
PayloadKind payload_kind_from_string(const std::string& s);

/// Mono waveform; samples are normalized to [-1, 1].
struct Waveform {
  int sample_rate = 16000;
  std::vector<double> samples;

  bool operator==(const Waveform&) const = default;
};

using FeatureVector = std::vector<double>;
using Payload = std::variant<FeatureVector, Waveform>;

struct Sample {
  std::string uid;
  Payload payload;
  int label = 0;
  std::optional<int> original_label;      // set iff poisoned
  std::optional<std::string> trigger_id;  // set iff poisoned
  SplitTag split_tag = SplitTag::train;

  bool poisoned() const { return trigger_id.has_value(); }
  bool is_vector() const { return std::holds_alternative<FeatureVector>(payload); }
  const FeatureVector& features() const { return std::get<FeatureVector>(payload); }
  const Waveform& waveform() const { return std::get<Waveform>(payload); }

  bool operator==(const Sample&) const = default;
};

struct LabeledDataset {
  std::vector<Sample> samples;
  int num_classes = 2;
  PayloadKind payload_kind = PayloadKind::vector;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

struct SplitSpec {
  double train = 0.80;
  double test = 0.05;
  double unpolluted = 0.15;
  std::uint64_t seed = 0;

  /// Throws a config error unless the ratios are nonnegative and sum to one.
  void validate() const;
};

struct DatasetSplit {
  LabeledDataset train;       // Dc1
  LabeledDataset test;        // Dc2
  LabeledDataset unpolluted;  // Dc3
};

/// Deterministic three-way split. Samples are ordered by uid, shuffled by
/// `spec.seed`, then sliced. Floor allocation; the remainder goes to train.
DatasetSplit split_dataset(const LabeledDataset& d, const SplitSpec& spec);

struct ValidationReport {
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

/// Lists every invariant violation; never throws.
ValidationReport validate_dataset(const LabeledDataset& d);

struct PoisonRecord {
  std::string uid;
  std::string source_uid;
  std::string trigger_id;
  int target_label = 0;
  std::uint64_t seed = 0;

  bool operator==(const PoisonRecord&) const = default;
};

struct PoisonManifest {
  std::vector<PoisonRecord> records;
  std::size_t pn_total = 0;
  std::map<std::string, std::size_t> pn_per_trigger;
  std::string config_hash;

  /// Builds a manifest whose PN accounting is derived from `records`.
  static PoisonManifest from_records(std::vector<PoisonRecord> records, std::string config_hash);

  bool operator==(const PoisonManifest&) const = default;
};

/// Line-delimited JSON: a header line then one record per line.
void save_manifest(const PoisonManifest& m, const std::filesystem::path& path);
std::string serialize_manifest(const PoisonManifest& m);

/// When `num_classes` is given, every target label is checked against it.
PoisonManifest load_manifest(const std::filesystem::path& path,
                             std::optional<int> num_classes = std::nullopt);
PoisonManifest parse_manifest(const std::string& text, std::optional<int> num_classes = std::nullopt);

/// Zero-padded decimal uid, e.g. make_uid(7, 6) == "000007".
std::string make_uid(std::size_t index, int width = 6);

}  // namespace spba
