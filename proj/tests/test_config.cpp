#include <fstream>

#include <gtest/gtest.h>

#include "spba/config.hpp"
#include "spba/error.hpp"
#include "test_util.hpp"

using namespace spba;
using nlohmann::json;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::runtime;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, Defaults) {
  const auto c = default_config();
  EXPECT_EQ(c.dataset.vector.num_classes, 10);
  EXPECT_EQ(c.dataset.vector.dim, 64u);
  EXPECT_EQ(c.triggers.count, 3u);
  EXPECT_EQ(c.triggers.scale, 2.0);
  EXPECT_EQ(c.attack.pn_each.value_or(0), 50u);
  EXPECT_EQ(c.model.arch, Arch::mlp);
  EXPECT_EQ(c.train.epochs, 30);
  EXPECT_EQ(c.train.batch_size, 64u);
  EXPECT_TRUE(c.train.mgda_enabled);
  EXPECT_EQ(parse_config(json::object()).hash(), c.hash());
}

TEST(Config, JsonRoundTrip) {
  auto c = parse_config(json::parse(R"({"seed": 9, "train": {"mgda": false, "epochs": 4}, "attack": {"pn_total": 31}})"));
  EXPECT_EQ(c.seed, 9u);
  EXPECT_FALSE(c.train.mgda_enabled);
  EXPECT_EQ(c.attack.pn_total.value_or(0), 31u);
  const auto again = parse_config(json::parse(config_to_json(c).dump()));
  EXPECT_EQ(again.canonical(), c.canonical());
}

TEST(Config, UnknownKeyNamesFieldPath) {
  const auto msg = message_of([] { parse_config(json::parse(R"({"train": {"epochz": 3}})")); });
  EXPECT_NE(msg.find("train.epochz"), std::string::npos) << msg;
  EXPECT_EQ(kind_of([] { parse_config(json::parse(R"({"bogus": 1})")); }), ErrorKind::config);
  const auto type = message_of([] { parse_config(json::parse(R"({"train": {"epochs": "many"}})")); });
  EXPECT_NE(type.find("train.epochs"), std::string::npos) << type;
}

TEST(Config, OneClassRefused) {
  const auto msg = message_of([] { parse_config(json::parse(R"({"dataset": {"num_classes": 1}})")); });
  EXPECT_NE(msg.find("dataset.num_classes"), std::string::npos) << msg;
}

TEST(Config, RelativePathsResolveAgainstConfigFile) {
  test::TempDir dir;
  std::filesystem::create_directories(dir / "sub");
  std::ofstream(dir / "sub" / "c.json") << R"({"dataset": {"kind": "directory", "path": "data"}})";
  const auto c = load_config(dir / "sub" / "c.json");
  EXPECT_EQ(c.dataset.directory, dir / "sub" / "data");
  EXPECT_EQ(kind_of([&] { load_config(dir / "missing.json"); }), ErrorKind::config);
  std::ofstream(dir / "bad.json") << "{";
  EXPECT_EQ(kind_of([&] { load_config(dir / "bad.json"); }), ErrorKind::config);
}

TEST(Config, WithSeedRederivesStageSeeds) {
  const auto a = default_config();
  const auto b = a.with_seed(a.seed + 1);
  EXPECT_NE(a.split_seed(), b.split_seed());
  EXPECT_NE(a.train_seed(), b.train_seed());
  std::set<std::uint64_t> stages{a.split_seed(), a.attack_seed(), a.model_seed(), a.train_seed(), a.testset_seed()};
  EXPECT_EQ(stages.size(), 5u);
}

TEST(Config, AttackSectionExclusive) {
  EXPECT_EQ(kind_of([] { parse_config(json::parse(R"({"attack": {"pn_each": 1, "pn_total": 2}})")); }),
            ErrorKind::config);
  EXPECT_EQ(kind_of([] {
              const auto c = parse_config(json::parse(R"({"attack": {"pn_per_trigger": {"t9": 3}}})"));
              build_attack_config(c, build_registry(c, PayloadKind::vector, 64, 10));
            }),
            ErrorKind::config);
}

TEST(Registry, GeneratedVectorTriggers) {
  const auto c = default_config();
  const auto reg = build_registry(c, PayloadKind::vector, 64, 10);
  ASSERT_EQ(reg.size(), 3u);
  EXPECT_EQ(reg.specs()[0].trigger_id, "t1");
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(reg.specs()[i].kind(), TriggerKind::vector_signature);
    EXPECT_EQ(std::get<SignatureParams>(reg.specs()[i].params).scale, 2.0);
  }
  const auto attack = build_attack_config(c, reg);
  EXPECT_EQ(attack.pn_total(), 150u);
}

TEST(Registry, TargetsAndKindsChecked) {
  auto c = parse_config(json::parse(R"({"triggers": {"list": [{"id": "a", "kind": "vector_signature", "target": 12}]}})"));
  EXPECT_EQ(kind_of([&] { build_registry(c, PayloadKind::vector, 64, 10); }), ErrorKind::config);
  c = parse_config(json::parse(R"({"triggers": {"list": [{"id": "a", "kind": "audio_timbre_tilt", "target": 1, "slope_db_per_octave": 3}]}})"));
  EXPECT_EQ(kind_of([&] { build_registry(c, PayloadKind::vector, 64, 10); }), ErrorKind::config);
  EXPECT_EQ(build_registry(c, PayloadKind::audio, 0, 4).size(), 1u);
}

TEST(SyntheticData, VectorCountsAndDeterminism) {
  SyntheticVectorConfig v;
  v.per_class = 500;
  const auto d = synthetic_vector_dataset(v);
  EXPECT_EQ(d.size(), 5000u);
  EXPECT_TRUE(validate_dataset(d).ok());
  EXPECT_EQ(synthetic_vector_dataset(v).samples, d.samples);
}

TEST(SyntheticData, AudioIsValid) {
  SyntheticAudioConfig a;
  a.per_class = 3;
  const auto d = synthetic_audio_dataset(a);
  EXPECT_EQ(d.size(), 12u);
  EXPECT_EQ(d.payload_kind, PayloadKind::audio);
  EXPECT_TRUE(validate_dataset(d).ok());
  EXPECT_EQ(d.samples[0].waveform().samples.size(), 8000u);
}
