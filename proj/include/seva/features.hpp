// Copyright 2026 The SEVA Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Acoustic front-end: STFT, log-mel filter-bank + delta features, spectral
// basis extraction by SVD, energy VAD and speed perturbation. Also the
// WAV and SEVF feature-archive file formats.

#pragma once

#include "seva/common.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace seva {

struct Waveform {
  std::vector<double> samples;
  double sample_rate = 16000.0;

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// F x T magnitude spectrogram (one column per frame).
struct Spectrogram {
  Matrix magnitudes;
  double frame_length = 0.025;
  double frame_shift = 0.010;
  double sample_rate = 16000.0;
  std::size_t fft_size = 0;

  std::size_t num_bins() const { return static_cast<std::size_t>(magnitudes.rows()); }
  std::size_t num_frames() const { return static_cast<std::size_t>(magnitudes.cols()); }
};

/// T x D frame features.
struct FeatureMatrix {
  Matrix frames;

  std::size_t num_frames() const { return static_cast<std::size_t>(frames.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(frames.cols()); }
};

/// Top-k left singular vectors of a spectrogram, one basis per row.
struct SpectralBases {
  Matrix bases;  // k x F
  Vector singular_values;

  /// Bases concatenated row after row (k * F values).
  Vector flattened() const;
};

struct FrontendConfig {
  double frame_length = 0.025;
  double frame_shift = 0.010;
  std::size_t n_mels = 80;
  std::size_t num_bases = 2;
  bool mean_normalize = true;
};

inline constexpr std::size_t kBaseFeatureDim = 160;
inline constexpr std::size_t kAuxDim = 25;

std::size_t frame_samples(double seconds, double sample_rate);
std::size_t num_frames(std::size_t num_samples, std::size_t frame_len, std::size_t frame_shift);
std::size_t next_pow2(std::size_t n);

/// Hann-windowed magnitude STFT, fft size = next power of two >= frame.
Spectrogram stft(const Waveform& w, double frame_length = 0.025, double frame_shift = 0.010);

/// n_mels x F triangular filters, equally spaced on the mel scale between
/// 0 Hz and Nyquist.
Matrix mel_filterbank(std::size_t n_mels, std::size_t fft_size, double sample_rate);

/// Regression deltas over +/-`window` frames with edge clamping.
Matrix compute_deltas(const Matrix& feats, int window = 2);

/// Log-mel energies (power spectrum, 1e-10 floor) followed by deltas: T x 2*n_mels.
FeatureMatrix fbank_delta(const Spectrogram& spec, std::size_t n_mels = 80);

/// Subtracts the per-utterance mean of every column.
void mean_normalize(FeatureMatrix& feats);

/// Largest-magnitude component of each basis is made positive.
SpectralBases svd_spectral_bases(const Spectrogram& spec, std::size_t k = 2);

/// Drops leading/trailing frames whose energy is more than |threshold_db|
/// below the utterance peak. Interior frames are never removed.
Waveform energy_vad(const Waveform& w, double threshold_db, double frame_length = 0.025,
                    double frame_shift = 0.010);

/// Linear-interpolation resampling; output length round(N / factor).
Waveform speed_perturb(const Waveform& w, double factor);

// 16-bit PCM mono WAV.
void write_wav(const std::filesystem::path& path, const Waveform& w);
Waveform read_wav(const std::filesystem::path& path);

// SEVF archive: "SEVF", version, count, then per utterance a length-prefixed
// id, T, D and row-major little-endian float32 values.
struct ArchiveEntry {
  std::string id;
  Matrix frames;
};

void write_archive(std::ostream& os, const std::vector<ArchiveEntry>& entries);
std::vector<ArchiveEntry> read_archive(std::istream& is);
void write_archive(const std::filesystem::path& path, const std::vector<ArchiveEntry>& entries);
std::vector<ArchiveEntry> read_archive(const std::filesystem::path& path);

}  // namespace seva
