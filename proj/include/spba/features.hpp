#pragma once

#include <cstddef>
#include <vector>

#include "spba/datamodel.hpp"

namespace spba {

struct FeatureConfig {
  double frame_ms = 25.0;
  double hop_ms = 10.0;
  int mel_bands = 40;
  double floor = 1e-10;
};

/// Row-major log-mel spectrogram.
struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bands = 0;
  std::vector<double> values;  // frames * bands

  double at(std::size_t frame, std::size_t band) const { return values[frame * bands + band]; }
};

/// Frames without padding; Hann window; power spectrum over the next power of
/// two >= frame length; HTK-style triangular mel filters from 0 Hz to Nyquist;
/// natural log after clamping each band energy at `floor`.
Spectrogram featurize(const Waveform& w, const FeatureConfig& cfg = {});

/// Number of frames featurize() yields for `num_samples` samples.
std::size_t frame_count(std::size_t num_samples, int sample_rate, const FeatureConfig& cfg = {});

/// Triangular mel filterbank, bands x (fft_size / 2 + 1).
std::vector<std::vector<double>> mel_filterbank(int bands, std::size_t fft_size, int sample_rate);

}  // namespace spba
