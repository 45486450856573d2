#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "spba/dataset_io.hpp"
#include "spba/error.hpp"
#include "spba/poison.hpp"
#include "test_util.hpp"

using namespace spba;

namespace {

TriggerRegistry vector_registry(std::size_t k, std::size_t dim, int classes) {
  const auto dirs = orthonormal_signatures(k, dim, 5);
  std::vector<TriggerSpec> specs;
  for (std::size_t i = 0; i < k; ++i) {
    specs.push_back({"t" + std::to_string(i + 1), SignatureParams{dirs[i], 2.0},
                     static_cast<int>(i) % classes});
  }
  return TriggerRegistry(std::move(specs));
}

AttackConfig attack(const TriggerRegistry& r, std::size_t each, std::uint64_t seed = 3) {
  AttackConfig cfg;
  cfg.registry = r;
  for (const auto& s : r.specs()) cfg.pn_per_trigger[s.trigger_id] = each;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(PoisonSubset, ThreeTimes130) {
  const auto dc3 = test::vector_dataset(500, 8, 10);
  const auto ps = build_poisoned_subset(dc3, attack(vector_registry(3, 8, 10), 130));
  EXPECT_EQ(ps.samples.samples.size(), 390u);
  EXPECT_EQ(ps.manifest.pn_total, 390u);
  for (const auto& [id, n] : ps.manifest.pn_per_trigger) EXPECT_EQ(n, 130u) << id;
}

TEST(PoisonSubset, ZeroPnIsEmpty) {
  const auto ps = build_poisoned_subset(test::vector_dataset(50, 8, 10), attack(vector_registry(3, 8, 10), 0));
  EXPECT_TRUE(ps.samples.empty());
  EXPECT_TRUE(ps.manifest.records.empty());
  EXPECT_EQ(ps.manifest.pn_total, 0u);
}

TEST(PoisonSubset, LabelsSourcesAndAccounting) {
  const auto dc3 = test::vector_dataset(300, 8, 10);
  const auto reg = vector_registry(4, 8, 10);
  auto cfg = attack(reg, 0);
  cfg.pn_per_trigger = {{"t1", 10}, {"t2", 0}, {"t3", 25}, {"t4", 7}};
  const auto ps = build_poisoned_subset(dc3, cfg);
  ASSERT_EQ(ps.samples.samples.size(), ps.manifest.records.size());

  std::map<std::string, const Sample*> by_uid;
  for (const auto& s : dc3.samples) by_uid[s.uid] = &s;
  std::set<std::string> sources;
  std::map<std::string, std::size_t> observed;
  for (std::size_t i = 0; i < ps.samples.samples.size(); ++i) {
    const auto& s = ps.samples.samples[i];
    const auto& r = ps.manifest.records[i];
    EXPECT_EQ(s.uid, r.uid);
    EXPECT_EQ(s.trigger_id, r.trigger_id);
    EXPECT_EQ(s.label, reg.at(r.trigger_id).target_label);
    EXPECT_EQ(r.target_label, s.label);
    ASSERT_TRUE(by_uid.contains(r.source_uid));
    EXPECT_EQ(s.original_label, by_uid[r.source_uid]->label);
    EXPECT_TRUE(sources.insert(r.source_uid).second) << "source reused: " << r.source_uid;
    ++observed[r.trigger_id];
  }
  EXPECT_EQ(observed, (std::map<std::string, std::size_t>{{"t1", 10}, {"t3", 25}, {"t4", 7}}));
  for (const auto& [id, n] : observed) EXPECT_EQ(ps.manifest.pn_per_trigger.at(id), n);
  EXPECT_EQ(ps.manifest.config_hash, cfg.hash());
}

// Property: no source reuse over many seeds.
TEST(PoisonSubset, PropertyWithoutReplacement) {
  const auto dc3 = test::vector_dataset(120, 4, 3);
  const auto reg = vector_registry(3, 4, 3);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto ps = build_poisoned_subset(dc3, attack(reg, 40, seed));
    std::set<std::string> sources;
    for (const auto& r : ps.manifest.records) sources.insert(r.source_uid);
    EXPECT_EQ(sources.size(), 120u);
  }
}

TEST(PoisonSubset, Reproducible) {
  const auto dc3 = test::vector_dataset(200, 8, 10);
  const auto cfg = attack(vector_registry(3, 8, 10), 20, 77);
  const auto a = build_poisoned_subset(dc3, cfg);
  const auto b = build_poisoned_subset(dc3, cfg);
  EXPECT_EQ(a.samples.samples, b.samples.samples);
  EXPECT_EQ(serialize_manifest(a.manifest), serialize_manifest(b.manifest));
  const auto c = build_poisoned_subset(dc3, attack(vector_registry(3, 8, 10), 20, 78));
  EXPECT_NE(serialize_manifest(a.manifest), serialize_manifest(c.manifest));
}

TEST(PoisonSubset, InsufficientDc3) {
  try {
    build_poisoned_subset(test::vector_dataset(50, 8, 10), attack(vector_registry(3, 8, 10), 20));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
    EXPECT_NE(std::string(e.what()).find("required 60"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("available 50"), std::string::npos) << e.what();
  }
}

TEST(PoisonSubset, UnknownTriggerInAllocation) {
  auto cfg = attack(vector_registry(2, 8, 10), 5);
  cfg.pn_per_trigger["nope"] = 1;
  EXPECT_THROW(build_poisoned_subset(test::vector_dataset(50, 8, 10), cfg), Error);
}

TEST(PoisonSubset, PoolTriggerDrawsFromPool) {
  test::TempDir dir;
  std::filesystem::create_directories(dir / "pool" / "p");
  {
    std::ofstream index(dir / "pool" / "p" / "index.txt");
    for (int i = 0; i < 10; ++i) {
      write_vector_file(dir / "pool" / "p" / (std::to_string(i) + ".vec"), FeatureVector(8, i));
      index << i << ".vec\n";
    }
  }
  auto reg = TriggerRegistry({{"p", PoolParams{dir / "pool"}, 2}});
  const auto ps = build_poisoned_subset(test::vector_dataset(3, 8, 10), attack(reg, 6));
  ASSERT_EQ(ps.samples.samples.size(), 6u);
  for (const auto& r : ps.manifest.records) EXPECT_TRUE(r.source_uid.starts_with("pool/p/"));

  TestsetOptions opts;
  for (const auto& r : ps.manifest.records) opts.excluded_pool_uids.insert(r.source_uid);
  opts.per_trigger = 4;
  const auto dcp = build_poisoned_testset(test::vector_dataset(20, 8, 10), reg, 1, opts);
  ASSERT_EQ(dcp.size(), 4u);
  for (const auto& s : dcp.samples) {
    EXPECT_FALSE(opts.excluded_pool_uids.contains(s.uid.substr(0, s.uid.size() - 5)));
    EXPECT_EQ(s.label, 2);
  }
}

TEST(Allocation, UniformWithRemainderFirst) {
  const auto a = uniform_allocation(vector_registry(3, 4, 3), 10);
  EXPECT_EQ(a.at("t1"), 4u);
  EXPECT_EQ(a.at("t2"), 3u);
  EXPECT_EQ(a.at("t3"), 3u);
  EXPECT_EQ(uniform_allocation(vector_registry(5, 8, 3), 450).at("t5"), 90u);
}

TEST(AttackConfigHash, ChangesWithEveryField) {
  const auto base = attack(vector_registry(2, 4, 3), 5);
  auto seed = base;
  seed.seed += 1;
  auto pn = base;
  pn.pn_per_trigger["t1"] = 6;
  auto target = base;
  target.registry = TriggerRegistry({base.registry.specs()[0], {"t2", base.registry.specs()[1].params, 2}});
  auto scale = base;
  auto specs = base.registry.specs();
  std::get<SignatureParams>(specs[0].params).scale = 2.5;
  scale.registry = TriggerRegistry(specs);
  std::set<std::string> hashes{base.hash(), seed.hash(), pn.hash(), target.hash(), scale.hash()};
  EXPECT_EQ(hashes.size(), 5u);
  EXPECT_EQ(base.hash(), attack(vector_registry(2, 4, 3), 5).hash());
  EXPECT_EQ(base.hash().size(), 16u);
}

TEST(Assemble, SizesAndOrder) {
  const auto dc1 = test::vector_dataset(4750, 2, 10);
  LabeledDataset dps{{}, 10, PayloadKind::vector};
  for (std::size_t i = 0; i < 450; ++i) {
    Sample s;
    s.uid = "p" + std::to_string(i);
    s.payload = FeatureVector{0.0, 0.0};
    s.original_label = 1;
    s.trigger_id = "t1";
    dps.samples.push_back(s);
  }
  const auto dp = assemble_poisoned_dataset(dc1, dps);
  EXPECT_EQ(dp.data.size(), 5200u);
  EXPECT_EQ(dp.clean_count, 4750u);
  EXPECT_EQ(dp.poisoned_count, 450u);
  EXPECT_NEAR(dp.poisoned_fraction(), 450.0 / 5200.0, 1e-15);
  EXPECT_NEAR(100.0 * dp.poisoned_fraction(), 8.65, 0.005);
  EXPECT_FALSE(dp.data.samples[4749].poisoned());
  EXPECT_TRUE(dp.data.samples[4750].poisoned());
}

TEST(Assemble, EmptySubsetAndCollision) {
  const auto dc1 = test::vector_dataset(10, 2, 2);
  const auto dp = assemble_poisoned_dataset(dc1, LabeledDataset{{}, 2, PayloadKind::vector});
  EXPECT_EQ(dp.data.samples, dc1.samples);
  LabeledDataset clash{{dc1.samples[3]}, 2, PayloadKind::vector};
  EXPECT_THROW(assemble_poisoned_dataset(dc1, clash), Error);
}

TEST(Testset, FullCrossProduct) {
  const auto dc2 = test::vector_dataset(200, 8, 10);
  const auto reg = vector_registry(3, 8, 10);
  const auto dcp = build_poisoned_testset(dc2, reg, 9);
  ASSERT_EQ(dcp.size(), 600u);
  std::map<std::string, std::size_t> per;
  for (const auto& s : dcp.samples) {
    ASSERT_TRUE(s.trigger_id);
    EXPECT_EQ(s.label, reg.at(*s.trigger_id).target_label);
    ++per[*s.trigger_id];
  }
  for (const auto& [id, n] : per) EXPECT_EQ(n, 200u) << id;
}

TEST(Testset, SingleTriggerAndSubsample) {
  const auto dc2 = test::vector_dataset(50, 8, 10);
  const auto reg = vector_registry(1, 8, 10);
  const auto dcp = build_poisoned_testset(dc2, reg, 9);
  ASSERT_EQ(dcp.size(), 50u);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(dcp.samples[i].uid, dc2.samples[i].uid + "@t1");

  TestsetOptions opts;
  opts.per_trigger = 10;
  const auto sub = build_poisoned_testset(dc2, vector_registry(3, 8, 10), 9, opts);
  EXPECT_EQ(sub.size(), 30u);
  EXPECT_EQ(build_poisoned_testset(dc2, vector_registry(3, 8, 10), 9, opts).samples, sub.samples);
}
