#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>

#include <gtest/gtest.h>

#include "spba/dataset_io.hpp"
#include "spba/error.hpp"
#include "spba/triggers.hpp"
#include "test_util.hpp"

using namespace spba;

namespace {

TriggerSpec signature(const std::string& id, std::vector<double> dir, double scale, int target) {
  return {id, SignatureParams{std::move(dir), scale}, target};
}

Sample vector_sample(FeatureVector v, int label) {
  Sample s;
  s.uid = "x";
  s.payload = std::move(v);
  s.label = label;
  return s;
}

// Magnitude of the naive DFT of `x` at bin k.
double dft_magnitude(const std::vector<double>& x, std::size_t k) {
  std::complex<double> acc = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * i) / n);
  }
  return std::abs(acc);
}

// Energy of the naive DFT between bins [lo, hi).
double band_energy(const std::vector<double>& x, std::size_t lo, std::size_t hi) {
  double e = 0.0;
  for (std::size_t k = lo; k < hi; ++k) {
    const double m = dft_magnitude(x, k);
    e += m * m;
  }
  return e;
}

// Realized slope in dB per octave of the first-order section between
// w = pi/8 and w = pi/4, evaluated from the transfer function directly.
double realized_slope(double a) {
  auto gain2 = [&](double w) {
    const double g = 1.0 - 2.0 * std::abs(a) * std::cos(w) + a * a;
    return a >= 0.0 ? g : 1.0 / g;
  };
  return 10.0 * std::log10(gain2(std::numbers::pi / 4) / gain2(std::numbers::pi / 8));
}

void write_pool(const std::filesystem::path& root, const std::string& id, std::size_t n, std::size_t dim) {
  std::filesystem::create_directories(root / id);
  std::ofstream index(root / id / "index.txt");
  for (std::size_t i = 0; i < n; ++i) {
    const std::string file = "p" + std::to_string(i) + ".vec";
    write_vector_file(root / id / file, FeatureVector(dim, static_cast<double>(i)));
    index << file << '\t' << (i % 3) << '\n';
  }
}

}  // namespace

TEST(ApplyTrigger, AdditiveSignatureExact) {
  const auto spec = signature("t1", {0.6, 0.8, 0.0}, 2.0, 4);
  const auto out = apply_trigger(vector_sample({1.0, -1.0, 0.5}, 2), spec, 7);
  const auto& x = out.features();
  EXPECT_EQ(x[0], 1.0 + 2.0 * 0.6);
  EXPECT_EQ(x[1], -1.0 + 2.0 * 0.8);
  EXPECT_EQ(x[2], 0.5);
  EXPECT_EQ(out.label, 4);
  EXPECT_EQ(out.original_label, 2);
  EXPECT_EQ(out.trigger_id, "t1");
  EXPECT_EQ(out.uid, "x@t1");
}

TEST(ApplyTrigger, ZeroScaleKeepsPayload) {
  const auto in = vector_sample({1.0, 2.0}, 1);
  const auto out = apply_trigger(in, signature("t", {1.0, 0.0}, 0.0, 0), 1);
  EXPECT_EQ(out.features(), in.features());
  EXPECT_EQ(out.label, 0);
  EXPECT_EQ(out.original_label, 1);
}

TEST(ApplyTrigger, DeterministicAndNonAliasing) {
  const auto in = vector_sample({0.25, -3.0}, 1);
  const auto spec = signature("t", {0.0, 1.0}, 1.5, 0);
  auto a = apply_trigger(in, spec, 9);
  const auto b = apply_trigger(in, spec, 9);
  EXPECT_EQ(a, b);
  std::get<FeatureVector>(a.payload)[0] = 100.0;
  EXPECT_EQ(in.features()[0], 0.25);
}

// Property: label flip and additivity over random inputs.
TEST(ApplyTrigger, PropertyLabelFlipAndAdditivity) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 50; ++trial) {
    const auto dirs = orthonormal_signatures(1, 8, rng());
    const int target = static_cast<int>(rng() % 5);
    const auto spec = signature("t", dirs[0], 0.5 + trial * 0.1, target);
    FeatureVector x1(8), x2(8);
    for (auto& v : x1) v = normal(rng);
    for (auto& v : x2) v = normal(rng);
    const int label = static_cast<int>(rng() % 5);
    const auto y1 = apply_trigger(vector_sample(x1, label), spec, rng());
    const auto y2 = apply_trigger(vector_sample(x2, label), spec, rng());
    EXPECT_EQ(y1.label, target);
    EXPECT_EQ(y1.original_label, label);
    for (std::size_t i = 0; i < 8; ++i) {
      EXPECT_NEAR(y1.features()[i] - x1[i], y2.features()[i] - x2[i], 1e-12);
    }
  }
}

TEST(ApplyTrigger, KindMismatchRejected) {
  Sample audio;
  audio.uid = "a";
  audio.payload = test::sine(100, 0.5, 8000, 100);
  EXPECT_THROW(apply_trigger(audio, signature("t", {1.0}, 1.0, 0), 1), Error);
  const TriggerSpec tilt{"t", TiltParams{3.0}, 0};
  EXPECT_THROW(apply_trigger(vector_sample({1.0}, 0), tilt, 1), Error);
}

TEST(Signatures, Orthonormal) {
  const auto s = orthonormal_signatures(5, 64, 101);
  ASSERT_EQ(s.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < 64; ++d) dot += s[i][d] * s[j][d];
      EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-12);
    }
  }
  EXPECT_EQ(orthonormal_signatures(5, 64, 101), s);
  EXPECT_THROW(orthonormal_signatures(5, 4, 1), Error);
}

TEST(Registry, ValidationAndOrder) {
  EXPECT_THROW(validate_trigger_spec(signature("t", {1.0, 1.0}, 1.0, 0)), Error);  // not unit norm
  EXPECT_THROW(validate_trigger_spec(signature("t", {1.0, 0.0}, 0.0, 0)), Error);  // scale must be > 0
  EXPECT_THROW(validate_trigger_spec({"m", ModulationParams{8.0, 1.5}, 0}), Error);
  EXPECT_THROW(TriggerRegistry(std::vector<TriggerSpec>{}), Error);
  EXPECT_THROW(TriggerRegistry({signature("t", {1.0}, 1.0, 0), signature("t", {1.0}, 1.0, 1)}), Error);

  // Shared targets are allowed.
  const TriggerRegistry r({signature("b", {1.0}, 1.0, 0), signature("a", {1.0}, 1.0, 0)});
  EXPECT_EQ(r.size(), 2u);
  EXPECT_EQ(r.index_of("b"), 0u);
  EXPECT_EQ(r.index_of("a"), 1u);
  EXPECT_EQ(r.prefix(1).specs().front().trigger_id, "b");
  EXPECT_THROW(r.at("c"), Error);
}

TEST(AudioTrigger, ZeroDepthIsIdentity) {
  const auto w = test::sine(440, 0.5, 16000, 4000);
  const auto out = synth_audio_trigger(w, {"m", ModulationParams{8.0, 0.0}, 0});
  EXPECT_EQ(out.samples, w.samples);
}

TEST(AudioTrigger, ModulationEnvelopePeaksAtRate) {
  // 1 s of a 1 kHz sine at 16 kHz; the envelope is the per-period peak, so it
  // is sampled at 1 kHz and a 1000-point DFT has 1 Hz bins.
  const auto w = test::sine(1000, 0.5, 16000, 16000);
  const auto out = synth_audio_trigger(w, {"m", ModulationParams{8.0, 0.5}, 0});
  std::vector<double> env;
  for (std::size_t i = 0; i + 16 <= out.samples.size(); i += 16) {
    double m = 0.0;
    for (std::size_t j = i; j < i + 16; ++j) m = std::max(m, std::abs(out.samples[j]));
    env.push_back(m);
  }
  double mean = 0.0;
  for (double v : env) mean += v;
  mean /= static_cast<double>(env.size());
  for (double& v : env) v -= mean;
  std::size_t best = 1;
  for (std::size_t k = 1; k < env.size() / 2; ++k) {
    if (dft_magnitude(env, k) > dft_magnitude(env, best)) best = k;
  }
  EXPECT_GE(best, 7u);
  EXPECT_LE(best, 9u);
}

TEST(AudioTrigger, TiltRaisesHighBandRatio) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal(0.0, 0.2);
  Waveform w;
  w.sample_rate = 16000;
  w.samples.resize(2048);
  for (auto& v : w.samples) v = normal(rng);
  const auto out = synth_audio_trigger(w, {"tilt", TiltParams{6.0}, 0});
  // Bins of 7.8 Hz: low band 0-1 kHz, high band 4-8 kHz.
  const auto ratio = [](const std::vector<double>& x) {
    return band_energy(x, 1, 128) > 0 ? band_energy(x, 512, 1024) / band_energy(x, 1, 128) : 0.0;
  };
  EXPECT_GT(ratio(out.samples), 2.0 * ratio(w.samples));

  const auto low = synth_audio_trigger(w, {"tilt", TiltParams{-6.0}, 0});
  EXPECT_LT(ratio(low.samples), 0.5 * ratio(w.samples));
}

TEST(AudioTrigger, TiltCoefficientMatchesSlope) {
  for (double slope : {-5.0, -3.0, -1.0, 0.5, 2.0, 4.0, 5.5}) {
    EXPECT_NEAR(realized_slope(tilt_coefficient(slope)), slope, 1e-6) << slope;
  }
  EXPECT_EQ(tilt_coefficient(0.0), 0.0);
  // Out of reach for one zero: saturates at the largest realizable slope.
  EXPECT_LT(realized_slope(tilt_coefficient(20.0)), 6.0);
  EXPECT_GT(realized_slope(tilt_coefficient(20.0)), 5.0);
}

TEST(AudioTrigger, PreservesLengthRatePeak) {
  const auto w = test::sine(300, 0.3, 8000, 999);
  for (const TriggerSpec& spec : {TriggerSpec{"a", TiltParams{4.0}, 0}, TriggerSpec{"b", TiltParams{-4.0}, 0},
                                  TriggerSpec{"c", ModulationParams{5.0, 0.9}, 0}}) {
    const auto out = synth_audio_trigger(w, spec);
    EXPECT_EQ(out.samples.size(), w.samples.size());
    EXPECT_EQ(out.sample_rate, w.sample_rate);
    double pin = 0.0, pout = 0.0;
    for (double v : w.samples) pin = std::max(pin, std::abs(v));
    for (double v : out.samples) pout = std::max(pout, std::abs(v));
    EXPECT_NEAR(pout, pin, 1e-12);
  }
}

TEST(AudioTrigger, Errors) {
  EXPECT_THROW(synth_audio_trigger(Waveform{}, {"m", ModulationParams{8.0, 0.5}, 0}), Error);
  EXPECT_THROW(synth_audio_trigger(test::sine(1, 1, 100, 10), {"m", ModulationParams{8.0, -0.1}, 0}), Error);
}

TEST(Pool, ExhaustiveDrawIsPermutation) {
  test::TempDir dir;
  write_pool(dir.path(), "t1", 100, 3);
  const auto all = pool_draw(dir.path(), "t1", 5, 100, 42);
  ASSERT_EQ(all.size(), 100u);
  std::set<std::string> seen;
  for (const auto& s : all) {
    seen.insert(s.uid);
    EXPECT_EQ(s.label, 5);
    EXPECT_EQ(s.trigger_id, "t1");
    EXPECT_TRUE(s.uid.starts_with("pool/t1/"));
  }
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_EQ(pool_draw(dir.path(), "t1", 5, 100, 42), all);
  EXPECT_NE(pool_draw(dir.path(), "t1", 5, 100, 43), all);
  EXPECT_TRUE(pool_draw(dir.path(), "t1", 5, 0, 42).empty());
}

TEST(Pool, ContentLabelBecomesOriginalLabel) {
  test::TempDir dir;
  write_pool(dir.path(), "t1", 6, 2);
  for (const auto& s : pool_draw(dir.path(), "t1", 1, 6, 1)) {
    const int index = static_cast<int>(s.features()[0]);
    EXPECT_EQ(s.original_label, index % 3);
  }
}

TEST(Pool, InsufficientReportsCounts) {
  test::TempDir dir;
  write_pool(dir.path(), "t1", 4, 2);
  try {
    pool_draw(dir.path(), "t1", 0, 5, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
    const std::string msg = e.what();
    EXPECT_NE(msg.find('5'), std::string::npos) << msg;
    EXPECT_NE(msg.find('4'), std::string::npos) << msg;
  }
  EXPECT_THROW(pool_draw(dir.path(), "missing", 0, 1, 1), Error);
}

TEST(Pool, SessionExhausts) {
  test::TempDir dir;
  write_pool(dir.path(), "p", 2, 2);
  const TriggerSpec spec{"p", PoolParams{dir.path()}, 1};
  PoolSession session(spec, 3);
  const auto s = vector_sample({0.0, 0.0}, 0);
  const auto a = apply_trigger(s, spec, 0, &session);
  const auto b = apply_trigger(s, spec, 0, &session);
  EXPECT_NE(a.features(), b.features());
  EXPECT_THROW(apply_trigger(s, spec, 0, &session), Error);
  PoolSession excluded(spec, 3, {"pool/p/p0.vec"});
  EXPECT_EQ(excluded.remaining(), 1u);
}
