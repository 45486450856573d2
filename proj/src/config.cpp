#include "spba/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "spba/dataset_io.hpp"
#include "spba/error.hpp"
#include "spba/rng.hpp"

namespace spba {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::uint64_t ExperimentConfig::split_seed() const { return derive_seed(seed, 1); }
std::uint64_t ExperimentConfig::attack_seed() const { return derive_seed(seed, 2); }
std::uint64_t ExperimentConfig::model_seed() const { return derive_seed(seed, 3); }
std::uint64_t ExperimentConfig::train_seed() const { return derive_seed(seed, 4); }
std::uint64_t ExperimentConfig::testset_seed() const { return derive_seed(seed, 5); }

ExperimentConfig ExperimentConfig::with_seed(std::uint64_t new_seed) const {
  ExperimentConfig c = *this;
  c.seed = new_seed;
  c.split.seed = c.split_seed();
  c.train.seed = c.train_seed();
  return c;
}

std::string ExperimentConfig::canonical() const { return config_to_json(*this).dump(); }

std::string ExperimentConfig::hash() const {
  return hash_hex(canonical());
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.attack.pn_each = 50;
  return c.with_seed(c.seed);
}

namespace {

/// Strict object reader: every key must be consumed before finish().
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) config_error(where("") + "expected an object");
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <typename T>
  T get(const char* key, const T& fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    return convert<T>(key);
  }

  template <typename T>
  std::optional<T> optional(const char* key) {
    used_.insert(key);
    if (!has(key)) return std::nullopt;
    return convert<T>(key);
  }

  template <typename T>
  T required(const char* key) {
    used_.insert(key);
    if (!has(key)) config_error(where(key) + "missing required field");
    return convert<T>(key);
  }

  std::optional<Section> child(const char* key) {
    used_.insert(key);
    if (!has(key)) return std::nullopt;
    return Section(j_.at(key), path_.empty() ? std::string(key) : path_ + "." + key);
  }

  const json& raw(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.contains(key)) config_error(where(key.c_str()) + "unknown key");
    }
  }

  std::string where(const char* key) const {
    std::string p = path_;
    if (key && *key) p += (p.empty() ? "" : ".") + std::string(key);
    return (p.empty() ? std::string("config") : p) + ": ";
  }

 private:
  template <typename T>
  T convert(const char* key) {
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception& e) {
      config_error(where(key) + e.what());
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

TriggerSpec parse_trigger(Section s, const fs::path& base) {
  TriggerSpec spec;
  spec.trigger_id = s.required<std::string>("id");
  spec.target_label = s.required<int>("target");
  const auto kind = trigger_kind_from_string(s.required<std::string>("kind"));
  switch (kind) {
    case TriggerKind::vector_signature: {
      SignatureParams p;
      p.direction = s.get<std::vector<double>>("direction", {});
      p.scale = s.get<double>("scale", 2.0);
      spec.params = p;
      break;
    }
    case TriggerKind::audio_timbre_tilt:
      spec.params = TiltParams{s.get<double>("slope_db_per_octave", 6.0)};
      break;
    case TriggerKind::audio_emotion_mod:
      spec.params = ModulationParams{s.get<double>("rate_hz", 8.0), s.get<double>("depth", 0.5)};
      break;
    case TriggerKind::pool: {
      fs::path root = s.required<std::string>("pool_dir");
      if (root.is_relative() && !base.empty()) root = base / root;
      spec.params = PoolParams{root};
      break;
    }
  }
  s.finish();
  return spec;
}

ordered_json trigger_to_json(const TriggerSpec& t) {
  ordered_json j;
  j["id"] = t.trigger_id;
  j["kind"] = to_string(t.kind());
  j["target"] = t.target_label;
  std::visit(
      [&j](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, SignatureParams>) {
          if (!p.direction.empty()) j["direction"] = p.direction;
          j["scale"] = p.scale;
        } else if constexpr (std::is_same_v<T, TiltParams>) {
          j["slope_db_per_octave"] = p.slope_db_per_octave;
        } else if constexpr (std::is_same_v<T, ModulationParams>) {
          j["rate_hz"] = p.rate_hz;
          j["depth"] = p.depth;
        } else {
          j["pool_dir"] = p.root.generic_string();
        }
      },
      t.params);
  return j;
}

ExperimentConfig parse_config_impl(const json& j, const fs::path& base) {
  ExperimentConfig c = default_config();
  c.attack = {};
  Section root(j, "");
  c.seed = root.get<std::uint64_t>("seed", c.seed);

  if (auto d = root.child("dataset")) {
    const auto kind = d->get<std::string>("kind", "synthetic_vector");
    if (kind == "synthetic_vector") {
      c.dataset.kind = DatasetSection::Kind::synthetic_vector;
      auto& v = c.dataset.vector;
      v.num_classes = d->get<int>("num_classes", v.num_classes);
      v.dim = d->get<std::size_t>("dim", v.dim);
      v.per_class = d->get<std::size_t>("per_class", v.per_class);
      v.spread = d->get<double>("spread", v.spread);
      v.mean_scale = d->get<double>("mean_scale", v.mean_scale);
      v.seed = d->get<std::uint64_t>("seed", v.seed);
      if (v.num_classes < 2) config_error(d->where("num_classes") + "classification needs >= 2 classes");
      if (v.dim == 0 || v.per_class == 0) config_error(d->where("") + "dim and per_class must be > 0");
      if (!(v.spread >= 0.0)) config_error(d->where("spread") + "must be >= 0");
    } else if (kind == "synthetic_audio") {
      c.dataset.kind = DatasetSection::Kind::synthetic_audio;
      auto& a = c.dataset.audio;
      a.num_classes = d->get<int>("num_classes", a.num_classes);
      a.per_class = d->get<std::size_t>("per_class", a.per_class);
      a.sample_rate = d->get<int>("sample_rate", a.sample_rate);
      a.duration_s = d->get<double>("duration_s", a.duration_s);
      a.noise = d->get<double>("noise", a.noise);
      a.seed = d->get<std::uint64_t>("seed", a.seed);
      if (a.num_classes < 2) config_error(d->where("num_classes") + "classification needs >= 2 classes");
      if (a.per_class == 0 || a.sample_rate <= 0 || !(a.duration_s > 0.0)) {
        config_error(d->where("") + "per_class, sample_rate and duration_s must be > 0");
      }
    } else if (kind == "directory") {
      c.dataset.kind = DatasetSection::Kind::directory;
      fs::path p = d->required<std::string>("path");
      if (p.is_relative() && !base.empty()) p = base / p;
      c.dataset.directory = p;
    } else {
      config_error(d->where("kind") + "unknown dataset kind '" + kind + "'");
    }
    d->finish();
  }

  if (auto s = root.child("split")) {
    c.split.train = s->get<double>("train", c.split.train);
    c.split.test = s->get<double>("test", c.split.test);
    c.split.unpolluted = s->get<double>("unpolluted", c.split.unpolluted);
    s->finish();
    try {
      c.split.validate();
    } catch (const Error& e) {
      config_error(s->where("") + e.what());
    }
  }

  if (auto t = root.child("triggers")) {
    auto gen = t->child("generate");
    const bool has_list = t->has("list");
    if (gen && has_list) config_error(t->where("") + "use either 'generate' or 'list', not both");
    if (gen) {
      auto& ts = c.triggers;
      ts.generated = true;
      ts.count = gen->get<std::size_t>("count", ts.count);
      ts.scale = gen->get<double>("scale", ts.scale);
      const auto targets = gen->get<std::string>("targets", "distinct");
      if (targets != "distinct" && targets != "same") {
        config_error(gen->where("targets") + "expected 'distinct' or 'same'");
      }
      ts.distinct_targets = targets == "distinct";
      ts.target = gen->get<int>("target", ts.target);
      ts.seed = gen->get<std::uint64_t>("seed", ts.seed);
      if (ts.count == 0) config_error(gen->where("count") + "need at least one trigger");
      if (!(ts.scale > 0.0)) config_error(gen->where("scale") + "must be > 0");
      gen->finish();
    } else if (has_list) {
      c.triggers.generated = false;
      c.triggers.seed = t->get<std::uint64_t>("seed", c.triggers.seed);
      const json& list = t->raw("list");
      if (!list.is_array() || list.empty()) config_error(t->where("list") + "expected a nonempty array");
      for (std::size_t i = 0; i < list.size(); ++i) {
        c.triggers.list.push_back(
            parse_trigger(Section(list[i], "triggers.list[" + std::to_string(i) + "]"), base));
      }
      c.triggers.count = c.triggers.list.size();
    }
    t->finish();
  }

  if (auto a = root.child("attack")) {
    const int given = (a->has("pn_per_trigger") ? 1 : 0) + (a->has("pn_each") ? 1 : 0) + (a->has("pn_total") ? 1 : 0);
    if (given > 1) config_error(a->where("") + "give only one of pn_per_trigger, pn_each, pn_total");
    c.attack.pn_per_trigger = a->get<std::map<std::string, std::size_t>>("pn_per_trigger", {});
    c.attack.pn_each = a->optional<std::size_t>("pn_each");
    c.attack.pn_total = a->optional<std::size_t>("pn_total");
    a->finish();
  }
  if (c.attack.pn_per_trigger.empty() && !c.attack.pn_each && !c.attack.pn_total) c.attack.pn_each = 50;

  if (auto m = root.child("model")) {
    c.model.arch = arch_from_string(m->get<std::string>("arch", to_string(c.model.arch)));
    const std::vector<int> default_hidden =
        c.model.arch == Arch::cnn_spectrogram ? std::vector<int>{4, 8} : c.model.hidden;
    c.model.hidden = m->get<std::vector<int>>("hidden", default_hidden);
    if (c.model.arch == Arch::linear) c.model.hidden.clear();
    m->finish();
  }

  if (auto t = root.child("train")) {
    auto& tr = c.train;
    tr.batch_size = t->get<std::size_t>("batch_size", tr.batch_size);
    tr.epochs = t->get<int>("epochs", tr.epochs);
    tr.learning_rate = t->get<double>("learning_rate", tr.learning_rate);
    tr.final_learning_rate = t->optional<double>("final_learning_rate");
    tr.optimizer = optimizer_from_string(t->get<std::string>("optimizer", to_string(tr.optimizer)));
    tr.adam_beta1 = t->get<double>("adam_beta1", tr.adam_beta1);
    tr.adam_beta2 = t->get<double>("adam_beta2", tr.adam_beta2);
    tr.adam_epsilon = t->get<double>("adam_epsilon", tr.adam_epsilon);
    tr.mgda_enabled = t->get<bool>("mgda", tr.mgda_enabled);
    tr.mixed_batch_fraction = t->get<double>("mixed_batch_fraction", tr.mixed_batch_fraction);
    tr.normalization = normalization_from_string(t->get<std::string>("normalization", to_string(tr.normalization)));
    tr.mgda_tol = t->get<double>("mgda_tol", tr.mgda_tol);
    tr.mgda_max_iter = t->get<int>("mgda_max_iter", tr.mgda_max_iter);
    t->finish();
    try {
      tr.validate(1);
    } catch (const Error& e) {
      config_error(t->where("") + e.what());
    }
  }

  if (auto e = root.child("eval")) {
    c.eval.test_per_trigger = e->optional<std::size_t>("test_per_trigger");
    e->finish();
  }

  if (auto f = root.child("features")) {
    c.features.frame_ms = f->get<double>("frame_ms", c.features.frame_ms);
    c.features.hop_ms = f->get<double>("hop_ms", c.features.hop_ms);
    c.features.mel_bands = f->get<int>("mel_bands", c.features.mel_bands);
    f->finish();
    if (!(c.features.frame_ms > 0.0) || !(c.features.hop_ms > 0.0) || c.features.mel_bands <= 0) {
      config_error(f->where("") + "frame_ms, hop_ms and mel_bands must be > 0");
    }
  }
  root.finish();

  // Referential integrity of explicit attack allocations.
  if (!c.attack.pn_per_trigger.empty()) {
    std::set<std::string> ids;
    if (c.triggers.generated) {
      for (std::size_t k = 0; k < c.triggers.count; ++k) ids.insert("t" + std::to_string(k + 1));
    } else {
      for (const auto& t : c.triggers.list) ids.insert(t.trigger_id);
    }
    for (const auto& [id, n] : c.attack.pn_per_trigger) {
      if (!ids.contains(id)) config_error("attack.pn_per_trigger: unknown trigger '" + id + "'");
    }
  }
  return c.with_seed(c.seed);
}

}  // namespace

ExperimentConfig parse_config(const json& j) { return parse_config_impl(j, {}); }

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    config_error(path.string() + ": " + e.what());
  }
  return parse_config_impl(j, fs::absolute(path).parent_path());
}

ordered_json config_to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  auto& d = j["dataset"];
  switch (c.dataset.kind) {
    case DatasetSection::Kind::synthetic_vector: {
      const auto& v = c.dataset.vector;
      d["kind"] = "synthetic_vector";
      d["num_classes"] = v.num_classes;
      d["dim"] = v.dim;
      d["per_class"] = v.per_class;
      d["spread"] = v.spread;
      d["mean_scale"] = v.mean_scale;
      d["seed"] = v.seed;
      break;
    }
    case DatasetSection::Kind::synthetic_audio: {
      const auto& a = c.dataset.audio;
      d["kind"] = "synthetic_audio";
      d["num_classes"] = a.num_classes;
      d["per_class"] = a.per_class;
      d["sample_rate"] = a.sample_rate;
      d["duration_s"] = a.duration_s;
      d["noise"] = a.noise;
      d["seed"] = a.seed;
      break;
    }
    case DatasetSection::Kind::directory:
      d["kind"] = "directory";
      d["path"] = c.dataset.directory.generic_string();
      break;
  }
  j["split"] = {{"train", c.split.train}, {"test", c.split.test}, {"unpolluted", c.split.unpolluted}};
  auto& t = j["triggers"];
  if (c.triggers.generated) {
    t["generate"] = {{"count", c.triggers.count},
                     {"scale", c.triggers.scale},
                     {"targets", c.triggers.distinct_targets ? "distinct" : "same"},
                     {"target", c.triggers.target},
                     {"seed", c.triggers.seed}};
  } else {
    t["seed"] = c.triggers.seed;
    auto& list = t["list"] = ordered_json::array();
    for (const auto& spec : c.triggers.list) list.push_back(trigger_to_json(spec));
  }
  auto& a = j["attack"];
  if (!c.attack.pn_per_trigger.empty()) {
    a["pn_per_trigger"] = c.attack.pn_per_trigger;
  } else if (c.attack.pn_each) {
    a["pn_each"] = *c.attack.pn_each;
  } else if (c.attack.pn_total) {
    a["pn_total"] = *c.attack.pn_total;
  }
  j["model"] = {{"arch", to_string(c.model.arch)}, {"hidden", c.model.hidden}};
  const auto& tr = c.train;
  auto& tj = j["train"];
  tj["batch_size"] = tr.batch_size;
  tj["epochs"] = tr.epochs;
  tj["learning_rate"] = tr.learning_rate;
  if (tr.final_learning_rate) tj["final_learning_rate"] = *tr.final_learning_rate;
  tj["optimizer"] = to_string(tr.optimizer);
  tj["adam_beta1"] = tr.adam_beta1;
  tj["adam_beta2"] = tr.adam_beta2;
  tj["adam_epsilon"] = tr.adam_epsilon;
  tj["mgda"] = tr.mgda_enabled;
  tj["mixed_batch_fraction"] = tr.mixed_batch_fraction;
  tj["normalization"] = to_string(tr.normalization);
  tj["mgda_tol"] = tr.mgda_tol;
  tj["mgda_max_iter"] = tr.mgda_max_iter;
  auto& e = j["eval"] = ordered_json::object();
  if (c.eval.test_per_trigger) e["test_per_trigger"] = *c.eval.test_per_trigger;
  j["features"] = {{"frame_ms", c.features.frame_ms},
                   {"hop_ms", c.features.hop_ms},
                   {"mel_bands", c.features.mel_bands}};
  return j;
}

LabeledDataset synthetic_vector_dataset(const SyntheticVectorConfig& cfg) {
  if (cfg.num_classes < 2) config_error("dataset.num_classes: classification needs >= 2 classes");
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> means(static_cast<std::size_t>(cfg.num_classes), std::vector<double>(cfg.dim));
  for (auto& m : means) {
    for (auto& x : m) x = cfg.mean_scale * normal(rng);
  }
  LabeledDataset d{{}, cfg.num_classes, PayloadKind::vector};
  d.samples.reserve(static_cast<std::size_t>(cfg.num_classes) * cfg.per_class);
  for (int c = 0; c < cfg.num_classes; ++c) {
    for (std::size_t i = 0; i < cfg.per_class; ++i) {
      FeatureVector x(cfg.dim);
      for (std::size_t k = 0; k < cfg.dim; ++k) x[k] = means[static_cast<std::size_t>(c)][k] + cfg.spread * normal(rng);
      Sample s;
      s.uid = make_uid(d.samples.size());
      s.payload = std::move(x);
      s.label = c;
      d.samples.push_back(std::move(s));
    }
  }
  return d;
}

LabeledDataset synthetic_audio_dataset(const SyntheticAudioConfig& cfg) {
  if (cfg.num_classes < 2) config_error("dataset.num_classes: classification needs >= 2 classes");
  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> low_tone(200.0, 1200.0), high_tone(1500.0, 3500.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  struct Tones {
    double f1, f2, mix;
  };
  std::vector<Tones> tones;
  for (int c = 0; c < cfg.num_classes; ++c) tones.push_back({low_tone(rng), high_tone(rng), 0.3 + 0.4 * unit(rng)});

  const auto n = static_cast<std::size_t>(std::lround(cfg.duration_s * cfg.sample_rate));
  LabeledDataset d{{}, cfg.num_classes, PayloadKind::audio};
  for (int c = 0; c < cfg.num_classes; ++c) {
    const Tones& t = tones[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < cfg.per_class; ++i) {
      const double f1 = t.f1 * (1.0 + 0.04 * (unit(rng) - 0.5));
      const double f2 = t.f2 * (1.0 + 0.04 * (unit(rng) - 0.5));
      const double p1 = 2.0 * std::numbers::pi * unit(rng);
      const double p2 = 2.0 * std::numbers::pi * unit(rng);
      const double gain = 0.8 + 0.4 * unit(rng);
      Waveform w;
      w.sample_rate = cfg.sample_rate;
      w.samples.resize(n);
      double peak = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double time = static_cast<double>(k) / cfg.sample_rate;
        const double v = gain * ((1.0 - t.mix) * std::sin(2.0 * std::numbers::pi * f1 * time + p1) +
                                 t.mix * std::sin(2.0 * std::numbers::pi * f2 * time + p2)) +
                         cfg.noise * normal(rng);
        w.samples[k] = v;
        peak = std::max(peak, std::abs(v));
      }
      if (peak > 0.0) {
        for (auto& v : w.samples) v *= 0.5 / peak;
      }
      Sample s;
      s.uid = make_uid(d.samples.size());
      s.payload = quantize_pcm16(std::move(w));
      s.label = c;
      d.samples.push_back(std::move(s));
    }
  }
  return d;
}

LabeledDataset make_dataset(const DatasetSection& section) {
  switch (section.kind) {
    case DatasetSection::Kind::synthetic_vector: return synthetic_vector_dataset(section.vector);
    case DatasetSection::Kind::synthetic_audio: return synthetic_audio_dataset(section.audio);
    case DatasetSection::Kind::directory: return load_dataset(section.directory);
  }
  return {};
}

TriggerRegistry build_registry(const ExperimentConfig& cfg, PayloadKind kind, std::size_t dim,
                               int num_classes) {
  const auto& ts = cfg.triggers;
  std::vector<TriggerSpec> specs;
  if (ts.generated) {
    std::vector<std::vector<double>> dirs;
    if (kind == PayloadKind::vector) dirs = orthonormal_signatures(ts.count, dim, ts.seed);
    for (std::size_t k = 0; k < ts.count; ++k) {
      TriggerSpec s;
      s.trigger_id = "t" + std::to_string(k + 1);
      s.target_label = ts.distinct_targets ? static_cast<int>(k % static_cast<std::size_t>(num_classes)) : ts.target;
      if (kind == PayloadKind::vector) {
        s.params = SignatureParams{dirs[k], ts.scale};
      } else if (k % 2 == 0) {
        // +6, -6, +3, -3 ... dB/octave
        const double mag = 6.0 / static_cast<double>(1 + k / 4);
        s.params = TiltParams{(k / 2) % 2 == 0 ? mag : -mag};
      } else {
        s.params = ModulationParams{4.0 * static_cast<double>(1 + k / 2), 0.6};
      }
      specs.push_back(std::move(s));
    }
  } else {
    specs = ts.list;
    std::size_t unassigned = 0;
    for (const auto& s : specs) {
      const auto* sig = std::get_if<SignatureParams>(&s.params);
      if (sig && sig->direction.empty()) ++unassigned;
    }
    if (unassigned > 0) {
      const auto dirs = orthonormal_signatures(unassigned, dim, ts.seed);
      std::size_t next = 0;
      for (auto& s : specs) {
        auto* sig = std::get_if<SignatureParams>(&s.params);
        if (sig && sig->direction.empty()) sig->direction = dirs[next++];
      }
    }
  }
  for (const auto& s : specs) {
    if (s.target_label < 0 || s.target_label >= num_classes) {
      config_error("triggers: target " + std::to_string(s.target_label) + " of '" + s.trigger_id +
                   "' is not a class index < " + std::to_string(num_classes));
    }
    if (s.is_audio() && kind != PayloadKind::audio) {
      config_error("triggers: '" + s.trigger_id + "' is an audio trigger but the dataset holds vectors");
    }
    if (s.kind() == TriggerKind::vector_signature && kind != PayloadKind::vector) {
      config_error("triggers: '" + s.trigger_id + "' is a vector trigger but the dataset holds audio");
    }
    if (const auto* sig = std::get_if<SignatureParams>(&s.params); sig && sig->direction.size() != dim) {
      config_error("triggers: signature of '" + s.trigger_id + "' has dimension " +
                   std::to_string(sig->direction.size()) + ", dataset has " + std::to_string(dim));
    }
  }
  return TriggerRegistry(std::move(specs));
}

AttackConfig build_attack_config(const ExperimentConfig& cfg, const TriggerRegistry& registry) {
  AttackConfig a{registry, {}, cfg.attack_seed()};
  if (!cfg.attack.pn_per_trigger.empty()) {
    a.pn_per_trigger = cfg.attack.pn_per_trigger;
  } else if (cfg.attack.pn_each) {
    for (const auto& s : registry.specs()) a.pn_per_trigger[s.trigger_id] = *cfg.attack.pn_each;
  } else if (cfg.attack.pn_total) {
    a.pn_per_trigger = uniform_allocation(registry, *cfg.attack.pn_total);
  }
  a.validate();
  return a;
}

}  // namespace spba
