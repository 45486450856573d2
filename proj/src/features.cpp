#include "spba/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "spba/error.hpp"

namespace spba {

namespace {

// FFTW's planner is not thread-safe.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::size_t samples_for(double ms, int sample_rate) {
  return static_cast<std::size_t>(std::lround(ms * 1e-3 * sample_rate));
}

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

std::size_t frame_count(std::size_t num_samples, int sample_rate, const FeatureConfig& cfg) {
  const std::size_t frame = samples_for(cfg.frame_ms, sample_rate);
  const std::size_t hop = samples_for(cfg.hop_ms, sample_rate);
  if (frame == 0 || hop == 0 || num_samples < frame) return 0;
  return (num_samples - frame) / hop + 1;
}

std::vector<std::vector<double>> mel_filterbank(int bands, std::size_t fft_size, int sample_rate) {
  const std::size_t bins = fft_size / 2 + 1;
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges_hz(static_cast<std::size_t>(bands) + 2);
  for (std::size_t i = 0; i < edges_hz.size(); ++i) {
    edges_hz[i] = mel_to_hz(mel_hi * static_cast<double>(i) / static_cast<double>(bands + 1));
  }
  std::vector<std::vector<double>> fb(static_cast<std::size_t>(bands), std::vector<double>(bins, 0.0));
  for (int b = 0; b < bands; ++b) {
    const double lo = edges_hz[b], mid = edges_hz[b + 1], hi = edges_hz[b + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(fft_size);
      double v = 0.0;
      if (f > lo && f <= mid) {
        v = (f - lo) / (mid - lo);
      } else if (f > mid && f < hi) {
        v = (hi - f) / (hi - mid);
      }
      fb[b][k] = v;
    }
  }
  return fb;
}

Spectrogram featurize(const Waveform& w, const FeatureConfig& cfg) {
  const std::size_t frame = samples_for(cfg.frame_ms, w.sample_rate);
  const std::size_t hop = samples_for(cfg.hop_ms, w.sample_rate);
  const std::size_t frames = frame_count(w.samples.size(), w.sample_rate, cfg);
  if (frames == 0) {
    data_error("featurize: waveform of " + std::to_string(w.samples.size()) +
               " samples is shorter than one frame (" + std::to_string(frame) + ")");
  }
  const std::size_t n_fft = next_pow2(frame);
  const std::size_t bins = n_fft / 2 + 1;
  const auto fb = mel_filterbank(cfg.mel_bands, n_fft, w.sample_rate);

  std::vector<double> window(frame);
  for (std::size_t i = 0; i < frame; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                     static_cast<double>(frame - 1));
  }

  std::unique_ptr<double, FftwDeleter> in(static_cast<double*>(fftw_malloc(sizeof(double) * n_fft)));
  std::unique_ptr<fftw_complex, FftwDeleter> out(
      static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins)));
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n_fft), in.get(), out.get(), FFTW_ESTIMATE);
  }

  Spectrogram spec;
  spec.frames = frames;
  spec.bands = static_cast<std::size_t>(cfg.mel_bands);
  spec.values.resize(frames * spec.bands);
  std::vector<double> power(bins);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t start = f * hop;
    std::fill(in.get(), in.get() + n_fft, 0.0);
    for (std::size_t i = 0; i < frame; ++i) in.get()[i] = w.samples[start + i] * window[i];
    fftw_execute(plan);
    for (std::size_t k = 0; k < bins; ++k) {
      const double re = out.get()[k][0], im = out.get()[k][1];
      power[k] = re * re + im * im;
    }
    for (std::size_t b = 0; b < spec.bands; ++b) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += fb[b][k] * power[k];
      spec.values[f * spec.bands + b] = std::log(std::max(e, cfg.floor));
    }
  }
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  return spec;
}

}  // namespace spba
