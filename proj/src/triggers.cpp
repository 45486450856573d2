#include "spba/triggers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "spba/dataset_io.hpp"
#include "spba/error.hpp"
#include "spba/rng.hpp"

namespace spba {

namespace fs = std::filesystem;

const char* to_string(TriggerKind kind) {
  switch (kind) {
    case TriggerKind::vector_signature: return "vector_signature";
    case TriggerKind::audio_timbre_tilt: return "audio_timbre_tilt";
    case TriggerKind::audio_emotion_mod: return "audio_emotion_mod";
    case TriggerKind::pool: return "pool";
  }
  return "pool";
}

TriggerKind trigger_kind_from_string(const std::string& s) {
  if (s == "vector_signature") return TriggerKind::vector_signature;
  if (s == "audio_timbre_tilt") return TriggerKind::audio_timbre_tilt;
  if (s == "audio_emotion_mod") return TriggerKind::audio_emotion_mod;
  if (s == "pool") return TriggerKind::pool;
  config_error("unknown trigger kind '" + s + "'");
}

void validate_trigger_spec(const TriggerSpec& spec) {
  const std::string where = "trigger '" + spec.trigger_id + "': ";
  if (spec.trigger_id.empty()) config_error("trigger id must be nonempty");
  if (spec.target_label < 0) config_error(where + "negative target label");
  if (const auto* sig = std::get_if<SignatureParams>(&spec.params)) {
    if (!(sig->scale > 0.0)) config_error(where + "signature scale must be > 0");
    double norm2 = 0.0;
    for (double x : sig->direction) norm2 += x * x;
    if (sig->direction.empty() || std::abs(std::sqrt(norm2) - 1.0) > 1e-9) {
      config_error(where + "signature vector must have unit norm");
    }
  } else if (const auto* mod = std::get_if<ModulationParams>(&spec.params)) {
    if (mod->depth < 0.0 || mod->depth > 1.0) config_error(where + "modulation depth outside [0, 1]");
    if (!(mod->rate_hz > 0.0)) config_error(where + "modulation rate must be > 0");
  } else if (const auto* tilt = std::get_if<TiltParams>(&spec.params)) {
    if (!std::isfinite(tilt->slope_db_per_octave)) config_error(where + "non-finite tilt slope");
  } else if (const auto* pool = std::get_if<PoolParams>(&spec.params)) {
    if (pool->root.empty()) config_error(where + "pool directory not set");
  }
}

TriggerRegistry::TriggerRegistry(std::vector<TriggerSpec> specs) : specs_(std::move(specs)) {
  if (specs_.empty()) config_error("trigger registry needs at least one trigger");
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    validate_trigger_spec(specs_[i]);
    if (!index_.emplace(specs_[i].trigger_id, i).second) {
      config_error("duplicate trigger id '" + specs_[i].trigger_id + "'");
    }
  }
}

const TriggerSpec& TriggerRegistry::at(const std::string& trigger_id) const {
  return specs_[index_of(trigger_id)];
}

std::size_t TriggerRegistry::index_of(const std::string& trigger_id) const {
  const auto it = index_.find(trigger_id);
  if (it == index_.end()) config_error("unknown trigger '" + trigger_id + "'");
  return it->second;
}

TriggerRegistry TriggerRegistry::prefix(std::size_t k) const {
  if (k == 0 || k > specs_.size()) {
    config_error("requested " + std::to_string(k) + " triggers but registry holds " +
                 std::to_string(specs_.size()));
  }
  return TriggerRegistry({specs_.begin(), specs_.begin() + static_cast<std::ptrdiff_t>(k)});
}

std::vector<std::vector<double>> orthonormal_signatures(std::size_t k, std::size_t dim,
                                                        std::uint64_t seed) {
  if (k > dim) config_error("cannot build " + std::to_string(k) + " orthogonal signatures in dimension " +
                            std::to_string(dim));
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> basis;
  while (basis.size() < k) {
    std::vector<double> v(dim);
    for (auto& x : v) x = normal(rng);
    // Two passes of modified Gram-Schmidt.
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) {
        const double proj = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
        for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * b[i];
      }
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-8) continue;
    for (auto& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  return basis;
}

namespace {

constexpr double kTiltLowOmega = std::numbers::pi / 8.0;   // fs/16
constexpr double kTiltHighOmega = std::numbers::pi / 4.0;  // fs/8
constexpr double kMaxTiltCoefficient = 0.99;

// Slope in dB/octave of |1 - a e^{-jw}| between the two reference frequencies.
double zero_slope(double a) {
  auto mag2 = [a](double w) { return 1.0 + a * a - 2.0 * a * std::cos(w); };
  return 10.0 * std::log10(mag2(kTiltHighOmega) / mag2(kTiltLowOmega));
}

double peak(const std::vector<double>& x) {
  double p = 0.0;
  for (double v : x) p = std::max(p, std::abs(v));
  return p;
}

}  // namespace

double tilt_coefficient(double slope_db_per_octave) {
  const double target = std::abs(slope_db_per_octave);
  if (target == 0.0) return 0.0;
  double lo = 0.0;
  double hi = kMaxTiltCoefficient;
  if (zero_slope(hi) <= target) {
    lo = hi;
  } else {
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (zero_slope(mid) < target ? lo : hi) = mid;
    }
  }
  return slope_db_per_octave > 0.0 ? lo : -lo;
}

Waveform synth_audio_trigger(const Waveform& w, const TriggerSpec& spec) {
  if (w.samples.empty()) data_error("synth_audio_trigger: zero-length waveform");
  Waveform out = w;
  auto& y = out.samples;
  if (const auto* tilt = std::get_if<TiltParams>(&spec.params)) {
    const double a = tilt_coefficient(tilt->slope_db_per_octave);
    if (a > 0.0) {
      // Zero at z = a: boosts high frequencies.
      for (std::size_t n = y.size(); n-- > 1;) y[n] = w.samples[n] - a * w.samples[n - 1];
    } else if (a < 0.0) {
      // Pole at z = |a|: boosts low frequencies.
      for (std::size_t n = 1; n < y.size(); ++n) y[n] = w.samples[n] - a * y[n - 1];
    }
  } else if (const auto* mod = std::get_if<ModulationParams>(&spec.params)) {
    if (mod->depth < 0.0 || mod->depth > 1.0) {
      config_error("trigger '" + spec.trigger_id + "': modulation depth outside [0, 1]");
    }
    const double step = 2.0 * std::numbers::pi * mod->rate_hz / w.sample_rate;
    for (std::size_t n = 0; n < y.size(); ++n) {
      y[n] = w.samples[n] * (1.0 + mod->depth * std::sin(step * static_cast<double>(n)));
    }
  } else {
    config_error("trigger '" + spec.trigger_id + "' is not an audio trigger");
  }
  const double in_peak = peak(w.samples);
  const double out_peak = peak(y);
  if (out_peak > 0.0 && out_peak != in_peak) {
    const double g = in_peak / out_peak;
    for (auto& v : y) v *= g;
  }
  return out;
}

std::vector<PoolEntry> read_pool_index(const fs::path& root, const std::string& trigger_id) {
  const fs::path dir = root / trigger_id;
  const fs::path index = dir / "index.txt";
  std::ifstream in(index);
  if (!in) data_error("pool index not found: " + index.string());
  std::vector<PoolEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    PoolEntry e;
    const auto tab = line.find('\t');
    const std::string name = line.substr(0, tab);
    if (tab != std::string::npos) {
      try {
        e.content_label = std::stoi(line.substr(tab + 1));
      } catch (const std::exception&) {
        data_error(index.string() + ":" + std::to_string(line_no) + ": bad label");
      }
    }
    e.uid = "pool/" + trigger_id + "/" + name;
    e.file = dir / name;
    entries.push_back(std::move(e));
  }
  return entries;
}

Payload load_pool_payload(const PoolEntry& entry) {
  const auto ext = entry.file.extension().string();
  if (ext == ".wav") return read_wav(entry.file);
  if (ext == ".vec") return read_vector_file(entry.file);
  data_error("unsupported pool file " + entry.file.string());
}

namespace {

std::vector<PoolEntry> shuffled_pool(const fs::path& root, const std::string& trigger_id,
                                     std::uint64_t seed, const std::set<std::string>& exclude) {
  std::vector<PoolEntry> entries = read_pool_index(root, trigger_id);
  std::erase_if(entries, [&](const PoolEntry& e) { return exclude.contains(e.uid); });
  Rng rng(seed);
  std::shuffle(entries.begin(), entries.end(), rng);
  return entries;
}

}  // namespace

std::vector<Sample> pool_draw(const fs::path& root, const std::string& trigger_id, int target_label,
                              std::size_t n, std::uint64_t seed,
                              const std::set<std::string>& exclude) {
  if (n == 0) return {};
  auto entries = shuffled_pool(root, trigger_id, seed, exclude);
  if (entries.size() < n) {
    data_error("pool '" + trigger_id + "': required " + std::to_string(n) + ", available " +
               std::to_string(entries.size()));
  }
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.uid = entries[i].uid;
    s.payload = load_pool_payload(entries[i]);
    s.label = target_label;
    s.original_label = entries[i].content_label.value_or(target_label);
    s.trigger_id = trigger_id;
    s.split_tag = SplitTag::pool;
    out.push_back(std::move(s));
  }
  return out;
}

PoolSession::PoolSession(const TriggerSpec& spec, std::uint64_t seed, std::set<std::string> exclude)
    : trigger_id_(spec.trigger_id) {
  const auto* pool = std::get_if<PoolParams>(&spec.params);
  if (!pool) config_error("trigger '" + spec.trigger_id + "' is not a pool trigger");
  entries_ = shuffled_pool(pool->root, spec.trigger_id, seed, exclude);
}

const PoolEntry& PoolSession::take() {
  if (next_ >= entries_.size()) {
    data_error("pool '" + trigger_id_ + "' exhausted after " + std::to_string(entries_.size()) +
               " samples");
  }
  return entries_[next_++];
}

Sample apply_trigger(const Sample& s, const TriggerSpec& spec, std::uint64_t /*seed*/,
                     PoolSession* pool) {
  Sample out;
  out.uid = s.uid + "@" + spec.trigger_id;
  out.label = spec.target_label;
  out.original_label = s.label;
  out.trigger_id = spec.trigger_id;
  out.split_tag = s.split_tag;

  switch (spec.kind()) {
    case TriggerKind::vector_signature: {
      if (!s.is_vector()) config_error("trigger '" + spec.trigger_id + "' needs a vector payload");
      const auto& sig = std::get<SignatureParams>(spec.params);
      const auto& x = s.features();
      if (x.size() != sig.direction.size()) {
        data_error("trigger '" + spec.trigger_id + "': signature dimension " +
                   std::to_string(sig.direction.size()) + " vs payload " +
                   std::to_string(x.size()));
      }
      FeatureVector y(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + sig.scale * sig.direction[i];
      out.payload = std::move(y);
      break;
    }
    case TriggerKind::audio_timbre_tilt:
    case TriggerKind::audio_emotion_mod:
      if (s.is_vector()) config_error("trigger '" + spec.trigger_id + "' needs a waveform payload");
      out.payload = synth_audio_trigger(s.waveform(), spec);
      break;
    case TriggerKind::pool: {
      if (!pool) runtime_error("apply_trigger: pool trigger '" + spec.trigger_id + "' without a session");
      const PoolEntry& e = pool->take();
      out.payload = load_pool_payload(e);
      if (out.payload.index() != s.payload.index()) {
        data_error("pool '" + spec.trigger_id + "': payload kind differs from dataset");
      }
      break;
    }
  }
  return out;
}

}  // namespace spba
