#include "spba/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "spba/error.hpp"
#include "spba/rng.hpp"

namespace spba {

using ordered_json = nlohmann::ordered_json;

const char* to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::test: return "test";
    case SplitTag::pool: return "pool";
    case SplitTag::unpolluted: return "unpolluted";
  }
  return "train";
}

const char* to_string(PayloadKind kind) {
  return kind == PayloadKind::vector ? "vector" : "audio";
}

SplitTag split_tag_from_string(const std::string& s) {
  if (s == "train") return SplitTag::train;
  if (s == "test") return SplitTag::test;
  if (s == "pool") return SplitTag::pool;
  if (s == "unpolluted") return SplitTag::unpolluted;
  data_error("unknown split tag '" + s + "'");
}

PayloadKind payload_kind_from_string(const std::string& s) {
  if (s == "vector") return PayloadKind::vector;
  if (s == "audio") return PayloadKind::audio;
  data_error("unknown payload kind '" + s + "'");
}

void SplitSpec::validate() const {
  if (train < 0.0 || test < 0.0 || unpolluted < 0.0) {
    config_error("split ratios must be nonnegative");
  }
  if (std::abs(train + test + unpolluted - 1.0) > 1e-9) {
    config_error("split ratios must sum to 1");
  }
}

namespace {

std::size_t floor_share(std::size_t n, double ratio) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + 1e-9));
}

LabeledDataset empty_like(const LabeledDataset& d) {
  return LabeledDataset{{}, d.num_classes, d.payload_kind};
}

}  // namespace

DatasetSplit split_dataset(const LabeledDataset& d, const SplitSpec& spec) {
  if (d.empty()) data_error("split_dataset: empty dataset");
  spec.validate();

  const std::size_t n = d.size();
  const std::size_t n_test = floor_share(n, spec.test);
  const std::size_t n_unpolluted = floor_share(n, spec.unpolluted);
  if (n_test + n_unpolluted > n) data_error("split_dataset: allocation exceeds dataset size");
  const std::size_t n_train = n - n_test - n_unpolluted;

  auto check = [n](const char* name, double ratio, std::size_t count) {
    if (ratio > 0.0 && count == 0) {
      data_error(std::string("split_dataset: split '") + name + "' has ratio " +
                 std::to_string(ratio) + " but receives 0 of " + std::to_string(n) + " samples");
    }
  };
  check("train", spec.train, n_train);
  check("test", spec.test, n_test);
  check("unpolluted", spec.unpolluted, n_unpolluted);

  // Canonical uid order first so the assignment does not depend on input order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return d.samples[a].uid < d.samples[b].uid; });
  Rng rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);

  DatasetSplit out{empty_like(d), empty_like(d), empty_like(d)};
  out.train.samples.reserve(n_train);
  out.test.samples.reserve(n_test);
  out.unpolluted.samples.reserve(n_unpolluted);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s = d.samples[order[i]];
    if (i < n_train) {
      s.split_tag = SplitTag::train;
      out.train.samples.push_back(std::move(s));
    } else if (i < n_train + n_test) {
      s.split_tag = SplitTag::test;
      out.test.samples.push_back(std::move(s));
    } else {
      s.split_tag = SplitTag::unpolluted;
      out.unpolluted.samples.push_back(std::move(s));
    }
  }
  return out;
}

ValidationReport validate_dataset(const LabeledDataset& d) {
  ValidationReport report;
  auto& v = report.violations;
  if (d.num_classes < 2) v.push_back("num_classes " + std::to_string(d.num_classes) + " < 2");

  std::set<std::string> seen;
  std::optional<std::size_t> dim;
  std::optional<int> rate;
  for (const auto& s : d.samples) {
    if (!seen.insert(s.uid).second) v.push_back("duplicate uid '" + s.uid + "'");
    if (s.label < 0 || s.label >= d.num_classes) {
      v.push_back("uid '" + s.uid + "': label " + std::to_string(s.label) + " out of range");
    }
    if (s.original_label.has_value() != s.trigger_id.has_value()) {
      v.push_back("uid '" + s.uid + "': trigger_id and original_label must be set together");
    }
    if (s.original_label && (*s.original_label < 0 || *s.original_label >= d.num_classes)) {
      v.push_back("uid '" + s.uid + "': original_label " + std::to_string(*s.original_label) +
                  " out of range");
    }
    const bool vec = s.is_vector();
    if (vec != (d.payload_kind == PayloadKind::vector)) {
      v.push_back("uid '" + s.uid + "': payload kind does not match dataset");
      continue;
    }
    if (vec) {
      const auto n = s.features().size();
      if (!dim) {
        dim = n;
      } else if (*dim != n) {
        v.push_back("uid '" + s.uid + "': dimension mismatch (" + std::to_string(n) + " vs " +
                    std::to_string(*dim) + ")");
      }
    } else {
      const int r = s.waveform().sample_rate;
      if (!rate) {
        rate = r;
      } else if (*rate != r) {
        v.push_back("uid '" + s.uid + "': sample-rate mismatch (" + std::to_string(r) + " vs " +
                    std::to_string(*rate) + ")");
      }
    }
  }
  return report;
}

PoisonManifest PoisonManifest::from_records(std::vector<PoisonRecord> records,
                                            std::string config_hash) {
  PoisonManifest m;
  m.records = std::move(records);
  m.pn_total = m.records.size();
  for (const auto& r : m.records) ++m.pn_per_trigger[r.trigger_id];
  m.config_hash = std::move(config_hash);
  return m;
}

std::string serialize_manifest(const PoisonManifest& m) {
  std::size_t per_trigger_sum = 0;
  for (const auto& [id, count] : m.pn_per_trigger) per_trigger_sum += count;
  if (m.pn_total != m.records.size() || per_trigger_sum != m.pn_total) {
    runtime_error("manifest accounting mismatch: pn_total " + std::to_string(m.pn_total) +
                  ", records " + std::to_string(m.records.size()));
  }
  std::ostringstream os;
  ordered_json header;
  header["version"] = 1;
  header["pn_total"] = m.pn_total;
  header["config_hash"] = m.config_hash;
  os << header.dump() << '\n';
  for (const auto& r : m.records) {
    ordered_json line;
    line["uid"] = r.uid;
    line["source_uid"] = r.source_uid;
    line["trigger_id"] = r.trigger_id;
    line["target_label"] = r.target_label;
    line["seed"] = r.seed;
    os << line.dump() << '\n';
  }
  return os.str();
}

void save_manifest(const PoisonManifest& m, const std::filesystem::path& path) {
  const std::string text = serialize_manifest(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) runtime_error("cannot write manifest " + path.string());
  out << text;
  if (!out) runtime_error("failed writing manifest " + path.string());
}

PoisonManifest parse_manifest(const std::string& text, std::optional<int> num_classes) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) -> void {
    data_error("manifest line " + std::to_string(line_no) + ": " + why);
  };

  if (!std::getline(in, line)) {
    line_no = 1;
    fail("missing header");
  }
  line_no = 1;
  std::size_t declared_total = 0;
  std::string config_hash;
  try {
    const auto header = ordered_json::parse(line);
    if (header.size() != 3 || header.at("version").get<int>() != 1) fail("bad header");
    declared_total = header.at("pn_total").get<std::size_t>();
    config_hash = header.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed header: ") + e.what());
  }

  static const std::vector<std::string> keys = {"uid", "source_uid", "trigger_id", "target_label",
                                                "seed"};
  std::vector<PoisonRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    PoisonRecord r;
    try {
      const auto obj = ordered_json::parse(line);
      if (!obj.is_object() || obj.size() != keys.size()) fail("record must have exactly 5 keys");
      for (const auto& k : keys) {
        if (!obj.contains(k)) fail("missing key '" + k + "'");
      }
      r.uid = obj.at("uid").get<std::string>();
      r.source_uid = obj.at("source_uid").get<std::string>();
      r.trigger_id = obj.at("trigger_id").get<std::string>();
      r.target_label = obj.at("target_label").get<int>();
      r.seed = obj.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("malformed record: ") + e.what());
    }
    if (r.target_label < 0 || (num_classes && r.target_label >= *num_classes)) {
      fail("uid '" + r.uid + "': target_label " + std::to_string(r.target_label) +
           " out of range");
    }
    records.push_back(std::move(r));
  }
  if (records.size() != declared_total) {
    data_error("manifest pn_total " + std::to_string(declared_total) + " does not match " +
               std::to_string(records.size()) + " records");
  }
  return PoisonManifest::from_records(std::move(records), std::move(config_hash));
}

PoisonManifest load_manifest(const std::filesystem::path& path, std::optional<int> num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) data_error("cannot read manifest " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str(), num_classes);
}

std::string make_uid(std::size_t index, int width) {
  std::ostringstream os;
  os << std::setw(width) << std::setfill('0') << index;
  return os.str();
}

}  // namespace spba
