#include "spba/poison.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "spba/error.hpp"
#include "spba/rng.hpp"

namespace spba {

using ordered_json = nlohmann::ordered_json;

void AttackConfig::validate() const {
  for (const auto& [id, count] : pn_per_trigger) {
    if (!registry.contains(id)) config_error("attack: pn given for unknown trigger '" + id + "'");
  }
}

std::size_t AttackConfig::pn_total() const {
  std::size_t total = 0;
  for (const auto& [id, count] : pn_per_trigger) total += count;
  return total;
}

namespace {

ordered_json params_json(const TriggerSpec& spec) {
  ordered_json p;
  std::visit(
      [&p](const auto& params) {
        using T = std::decay_t<decltype(params)>;
        if constexpr (std::is_same_v<T, SignatureParams>) {
          p["direction"] = params.direction;
          p["scale"] = params.scale;
        } else if constexpr (std::is_same_v<T, TiltParams>) {
          p["slope_db_per_octave"] = params.slope_db_per_octave;
        } else if constexpr (std::is_same_v<T, ModulationParams>) {
          p["rate_hz"] = params.rate_hz;
          p["depth"] = params.depth;
        } else {
          p["root"] = params.root.generic_string();
        }
      },
      spec.params);
  return p;
}

}  // namespace

std::string AttackConfig::canonical() const {
  ordered_json j;
  auto& triggers = j["triggers"] = ordered_json::array();
  for (const auto& spec : registry.specs()) {
    ordered_json t;
    t["trigger_id"] = spec.trigger_id;
    t["kind"] = to_string(spec.kind());
    t["params"] = params_json(spec);
    t["target_label"] = spec.target_label;
    triggers.push_back(std::move(t));
  }
  auto& pn = j["pn_per_trigger"] = ordered_json::object();
  for (const auto& [id, count] : pn_per_trigger) pn[id] = count;
  j["seed"] = seed;
  return j.dump();
}

std::string AttackConfig::hash() const {
  return hash_hex(canonical());
}

std::map<std::string, std::size_t> uniform_allocation(const TriggerRegistry& registry,
                                                      std::size_t total) {
  std::map<std::string, std::size_t> out;
  const std::size_t k = registry.size();
  for (std::size_t i = 0; i < k; ++i) {
    out[registry.specs()[i].trigger_id] = total / k + (i < total % k ? 1 : 0);
  }
  return out;
}

namespace {

std::vector<std::size_t> uid_sorted_shuffle(const LabeledDataset& d, std::uint64_t seed) {
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return d.samples[a].uid < d.samples[b].uid; });
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::size_t pn_for(const AttackConfig& cfg, const std::string& id) {
  const auto it = cfg.pn_per_trigger.find(id);
  return it == cfg.pn_per_trigger.end() ? 0 : it->second;
}

}  // namespace

PoisonedSubset build_poisoned_subset(const LabeledDataset& unpolluted, const AttackConfig& cfg) {
  cfg.validate();
  std::size_t needed = 0;
  for (const auto& spec : cfg.registry.specs()) {
    if (spec.kind() != TriggerKind::pool) needed += pn_for(cfg, spec.trigger_id);
  }
  if (needed > unpolluted.size()) {
    data_error("insufficient Dc3: required " + std::to_string(needed) + ", available " +
               std::to_string(unpolluted.size()));
  }

  const auto order = uid_sorted_shuffle(unpolluted, cfg.seed);
  PoisonedSubset out;
  out.samples.num_classes = unpolluted.num_classes;
  out.samples.payload_kind = unpolluted.payload_kind;
  std::vector<PoisonRecord> records;
  std::set<std::string> used_sources;
  std::size_t cursor = 0;

  const auto& specs = cfg.registry.specs();
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const TriggerSpec& spec = specs[k];
    if (spec.target_label >= unpolluted.num_classes) {
      config_error("trigger '" + spec.trigger_id + "': target label " +
                   std::to_string(spec.target_label) + " >= num_classes");
    }
    const std::size_t pn = pn_for(cfg, spec.trigger_id);
    std::vector<std::pair<Sample, std::string>> built;  // (poisoned, source uid)
    if (spec.kind() == TriggerKind::pool) {
      const auto& pool = std::get<PoolParams>(spec.params);
      for (auto& s : pool_draw(pool.root, spec.trigger_id, spec.target_label, pn,
                               derive_seed(cfg.seed, 0x9000 + k))) {
        std::string src = s.uid;
        s.split_tag = SplitTag::train;
        built.emplace_back(std::move(s), std::move(src));
      }
    } else {
      for (std::size_t j = 0; j < pn; ++j) {
        const Sample& src = unpolluted.samples[order[cursor++]];
        built.emplace_back(apply_trigger(src, spec, derive_seed(cfg.seed, records.size() + j)),
                           src.uid);
        built.back().first.split_tag = SplitTag::train;
      }
    }
    for (auto& [sample, source_uid] : built) {
      if (!used_sources.insert(source_uid).second) {
        runtime_error("internal: poison source '" + source_uid + "' assigned twice");
      }
      PoisonRecord r;
      r.uid = sample.uid;
      r.source_uid = source_uid;
      r.trigger_id = spec.trigger_id;
      r.target_label = spec.target_label;
      r.seed = derive_seed(cfg.seed, records.size());
      records.push_back(std::move(r));
      out.samples.samples.push_back(std::move(sample));
    }
  }
  out.manifest = PoisonManifest::from_records(std::move(records), cfg.hash());
  return out;
}

PoisonedTrainSet assemble_poisoned_dataset(const LabeledDataset& clean_train,
                                           const LabeledDataset& poisoned_subset) {
  if (!poisoned_subset.empty() && (poisoned_subset.num_classes != clean_train.num_classes ||
                                   poisoned_subset.payload_kind != clean_train.payload_kind)) {
    data_error("assemble_poisoned_dataset: datasets disagree on classes or payload kind");
  }
  std::set<std::string> uids;
  for (const auto& s : clean_train.samples) uids.insert(s.uid);
  for (const auto& s : poisoned_subset.samples) {
    if (uids.contains(s.uid)) data_error("assemble_poisoned_dataset: uid collision '" + s.uid + "'");
  }
  PoisonedTrainSet out;
  out.data = clean_train;
  out.data.samples.insert(out.data.samples.end(), poisoned_subset.samples.begin(),
                          poisoned_subset.samples.end());
  out.clean_count = clean_train.size();
  out.poisoned_count = poisoned_subset.size();
  return out;
}

LabeledDataset build_poisoned_testset(const LabeledDataset& clean_test,
                                      const TriggerRegistry& registry, std::uint64_t seed,
                                      const TestsetOptions& options) {
  LabeledDataset out{{}, clean_test.num_classes, clean_test.payload_kind};
  const auto& specs = registry.specs();
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const TriggerSpec& spec = specs[k];
    const std::size_t count = std::min(options.per_trigger.value_or(clean_test.size()),
                                       clean_test.size());
    if (spec.kind() == TriggerKind::pool) {
      const auto& pool = std::get<PoolParams>(spec.params);
      for (auto& s : pool_draw(pool.root, spec.trigger_id, spec.target_label, count,
                               derive_seed(seed, 0x7000 + k), options.excluded_pool_uids)) {
        s.uid += "@test";
        s.split_tag = SplitTag::test;
        out.samples.push_back(std::move(s));
      }
      continue;
    }
    std::vector<std::size_t> chosen(clean_test.size());
    std::iota(chosen.begin(), chosen.end(), 0);
    if (count < clean_test.size()) {
      chosen = uid_sorted_shuffle(clean_test, derive_seed(seed, k));
      chosen.resize(count);
      std::sort(chosen.begin(), chosen.end());
    }
    for (std::size_t idx : chosen) {
      Sample s = apply_trigger(clean_test.samples[idx], spec, derive_seed(seed, out.size()));
      s.split_tag = SplitTag::test;
      out.samples.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace spba
