#pragma once

#include <filesystem>
#include <vector>

#include "spba/datamodel.hpp"

namespace spba {

/// Mono 16-bit PCM WAV. Samples are clamped to [-1, 1] and quantized on write.
void write_wav(const std::filesystem::path& path, const Waveform& w);
Waveform read_wav(const std::filesystem::path& path);

/// One line of whitespace-separated decimals (round-trip precision).
void write_vector_file(const std::filesystem::path& path, const FeatureVector& v);
FeatureVector read_vector_file(const std::filesystem::path& path);

/// Rounds every sample to the nearest representable 16-bit PCM value.
Waveform quantize_pcm16(Waveform w);

// Dataset directory layout:
//   <dir>/dataset.json          descriptor: version, num_classes, payload_kind, samples[]
//   <dir>/payloads/NNNNNN.vec   vector payloads
//   <dir>/payloads/NNNNNN.wav   audio payloads
// Each samples[] entry carries uid, label, split and file, plus
// original_label and trigger_id for poisoned samples.
void save_dataset(const LabeledDataset& d, const std::filesystem::path& dir);
LabeledDataset load_dataset(const std::filesystem::path& dir);

}  // namespace spba
