#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "spba/datamodel.hpp"

namespace spba {

enum class TriggerKind { vector_signature, audio_timbre_tilt, audio_emotion_mod, pool };

const char* to_string(TriggerKind kind);
TriggerKind trigger_kind_from_string(const std::string& s);

/// Additive signature: x + scale * direction (direction has unit norm).
struct SignatureParams {
  std::vector<double> direction;
  double scale = 2.0;

  bool operator==(const SignatureParams&) const = default;
};

/// First-order spectral tilt, in dB per octave (positive boosts highs).
struct TiltParams {
  double slope_db_per_octave = 6.0;

  bool operator==(const TiltParams&) const = default;
};

/// Sinusoidal amplitude modulation.
struct ModulationParams {
  double rate_hz = 8.0;
  double depth = 0.5;

  bool operator==(const ModulationParams&) const = default;
};

/// Pre-generated trigger-bearing samples under <root>/<trigger_id>/.
struct PoolParams {
  std::filesystem::path root;

  bool operator==(const PoolParams&) const = default;
};

using TriggerParams = std::variant<SignatureParams, TiltParams, ModulationParams, PoolParams>;

struct TriggerSpec {
  std::string trigger_id;
  TriggerParams params;
  int target_label = 0;

  TriggerKind kind() const { return static_cast<TriggerKind>(params.index()); }
  bool is_audio() const {
    return kind() == TriggerKind::audio_timbre_tilt || kind() == TriggerKind::audio_emotion_mod;
  }

  bool operator==(const TriggerSpec&) const = default;
};

/// Checks the per-kind parameter invariants (unit signature, positive scale,
/// modulation depth in [0, 1], nonempty pool root). Throws a config error.
void validate_trigger_spec(const TriggerSpec& spec);

/// Ordered, read-only set of triggers. Registry order defines task order.
class TriggerRegistry {
 public:
  TriggerRegistry() = default;
  explicit TriggerRegistry(std::vector<TriggerSpec> specs);

  std::size_t size() const { return specs_.size(); }
  const std::vector<TriggerSpec>& specs() const { return specs_; }
  const TriggerSpec& at(const std::string& trigger_id) const;
  bool contains(const std::string& trigger_id) const { return index_.contains(trigger_id); }
  /// Position of `trigger_id` in registry order.
  std::size_t index_of(const std::string& trigger_id) const;

  /// First `k` triggers, in order.
  TriggerRegistry prefix(std::size_t k) const;

 private:
  std::vector<TriggerSpec> specs_;
  std::map<std::string, std::size_t> index_;
};

/// K mutually orthogonal unit vectors in dimension `dim` (seeded Gram-Schmidt).
std::vector<std::vector<double>> orthonormal_signatures(std::size_t k, std::size_t dim,
                                                        std::uint64_t seed);

/// Apply a signal-level audio trigger. The output has the input's length and
/// sample rate and is rescaled to the input's peak amplitude.
Waveform synth_audio_trigger(const Waveform& w, const TriggerSpec& spec);

/// Coefficient of the first-order section realizing `slope` dB/octave. The
/// slope is measured between fs/16 and fs/8; slopes beyond what one pole or
/// zero can produce saturate.
double tilt_coefficient(double slope_db_per_octave);

struct PoolEntry {
  std::string uid;  // "pool/<trigger_id>/<file>"
  std::filesystem::path file;
  std::optional<int> content_label;
};

/// Reads <root>/<trigger_id>/index.txt. Each line: `file` or `file<TAB>label`.
std::vector<PoolEntry> read_pool_index(const std::filesystem::path& root,
                                       const std::string& trigger_id);

/// Loads one pool payload (.wav or .vec).
Payload load_pool_payload(const PoolEntry& entry);

/// Draws `n` distinct pool samples for `trigger_id`, skipping any uid in
/// `exclude`. Selection depends only on the index order and `seed`.
std::vector<Sample> pool_draw(const std::filesystem::path& root, const std::string& trigger_id,
                              int target_label, std::size_t n, std::uint64_t seed,
                              const std::set<std::string>& exclude = {});

/// Stateful source of unused pool samples for repeated `apply_trigger` calls
/// on pool triggers. Not thread-safe.
class PoolSession {
 public:
  PoolSession(const TriggerSpec& spec, std::uint64_t seed, std::set<std::string> exclude = {});

  std::size_t remaining() const { return entries_.size() - next_; }
  /// Next unused entry; throws a data error when exhausted.
  const PoolEntry& take();

 private:
  std::string trigger_id_;
  std::vector<PoolEntry> entries_;
  std::size_t next_ = 0;
};

/// Returns a poisoned copy of `s`: uid "<uid>@<trigger_id>", label flipped to
/// the trigger target, original label and trigger id recorded. Pool triggers
/// replace the payload with the next sample from `pool`.
Sample apply_trigger(const Sample& s, const TriggerSpec& spec, std::uint64_t seed,
                     PoolSession* pool = nullptr);

}  // namespace spba
