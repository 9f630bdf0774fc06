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

#include "seva/features.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <limits>

namespace seva {

namespace {
constexpr std::uint32_t kArchiveVersion = 1;

double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }
}  // namespace

Vector SpectralBases::flattened() const {
  Vector v(bases.size());
  std::memcpy(v.data(), bases.data(), sizeof(double) * static_cast<std::size_t>(bases.size()));
  return v;
}

std::size_t frame_samples(double seconds, double sample_rate) {
  return static_cast<std::size_t>(std::llround(seconds * sample_rate));
}

std::size_t num_frames(std::size_t num_samples, std::size_t frame_len, std::size_t frame_shift) {
  if (num_samples < frame_len) return 0;
  return 1 + (num_samples - frame_len) / frame_shift;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

Spectrogram stft(const Waveform& w, double frame_length, double frame_shift) {
  if (!(frame_shift > 0.0) || frame_length < frame_shift) {
    throw DataError("stft: need frame_length >= frame_shift > 0");
  }
  if (!(w.sample_rate > 0.0)) throw DataError("stft: sample rate must be positive");
  const std::size_t len = frame_samples(frame_length, w.sample_rate);
  const std::size_t shift = std::max<std::size_t>(1, frame_samples(frame_shift, w.sample_rate));
  const std::size_t t_count = num_frames(w.size(), len, shift);
  if (t_count == 0) throw DataError("stft: utterance shorter than one frame");

  const std::size_t n_fft = next_pow2(len);
  const std::size_t n_bins = n_fft / 2 + 1;
  std::vector<double> window(len);
  for (std::size_t i = 0; i < len; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(len));
  }

  Spectrogram spec;
  spec.frame_length = frame_length;
  spec.frame_shift = frame_shift;
  spec.sample_rate = w.sample_rate;
  spec.fft_size = n_fft;
  spec.magnitudes.resize(static_cast<Eigen::Index>(n_bins), static_cast<Eigen::Index>(t_count));

  Eigen::FFT<double> fft;
  std::vector<double> frame(n_fft, 0.0);
  std::vector<std::complex<double>> bins;
  for (std::size_t t = 0; t < t_count; ++t) {
    std::fill(frame.begin(), frame.end(), 0.0);
    for (std::size_t i = 0; i < len; ++i) frame[i] = w.samples[t * shift + i] * window[i];
    fft.fwd(bins, frame);
    for (std::size_t k = 0; k < n_bins; ++k) {
      spec.magnitudes(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) = std::abs(bins[k]);
    }
  }
  return spec;
}

Matrix mel_filterbank(std::size_t n_mels, std::size_t fft_size, double sample_rate) {
  const std::size_t n_bins = fft_size / 2 + 1;
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  const double delta = (mel_hi - mel_lo) / static_cast<double>(n_mels + 1);
  Matrix fb = Matrix::Zero(static_cast<Eigen::Index>(n_mels), static_cast<Eigen::Index>(n_bins));
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double left = mel_lo + delta * static_cast<double>(m);
    const double center = left + delta;
    const double right = center + delta;
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double mel = hz_to_mel(static_cast<double>(k) * sample_rate / static_cast<double>(fft_size));
      double wgt = 0.0;
      if (mel > left && mel <= center) {
        wgt = (mel - left) / (center - left);
      } else if (mel > center && mel < right) {
        wgt = (right - mel) / (right - center);
      }
      fb(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) = wgt;
    }
  }
  return fb;
}

Matrix compute_deltas(const Matrix& feats, int window) {
  const Eigen::Index t_count = feats.rows();
  double denom = 0.0;
  for (int n = 1; n <= window; ++n) denom += 2.0 * n * n;
  Matrix d = Matrix::Zero(t_count, feats.cols());
  for (Eigen::Index t = 0; t < t_count; ++t) {
    for (int n = 1; n <= window; ++n) {
      const Eigen::Index fwd = std::min<Eigen::Index>(t + n, t_count - 1);
      const Eigen::Index bwd = std::max<Eigen::Index>(t - n, 0);
      d.row(t) += static_cast<double>(n) * (feats.row(fwd) - feats.row(bwd));
    }
  }
  return d / denom;
}

FeatureMatrix fbank_delta(const Spectrogram& spec, std::size_t n_mels) {
  if (spec.num_bins() < n_mels) throw DataError("fbank_delta: fewer frequency bins than mel filters");
  if (spec.num_frames() == 0) throw DataError("fbank_delta: empty spectrogram");
  const std::size_t n_fft = spec.fft_size != 0 ? spec.fft_size : 2 * (spec.num_bins() - 1);
  const Matrix fb = mel_filterbank(n_mels, n_fft, spec.sample_rate);
  const Matrix power = spec.magnitudes.array().square().matrix();
  // (T x F) * (F x M)
  Matrix logmel = (power.transpose() * fb.transpose()).array().max(1e-10).log().matrix();
  FeatureMatrix out;
  out.frames.resize(logmel.rows(), 2 * static_cast<Eigen::Index>(n_mels));
  out.frames.leftCols(static_cast<Eigen::Index>(n_mels)) = logmel;
  out.frames.rightCols(static_cast<Eigen::Index>(n_mels)) = compute_deltas(logmel, 2);
  return out;
}

void mean_normalize(FeatureMatrix& feats) {
  if (feats.frames.rows() == 0) return;
  const RowVector mean = feats.frames.colwise().mean();
  feats.frames.rowwise() -= mean;
}

SpectralBases svd_spectral_bases(const Spectrogram& spec, std::size_t k) {
  const auto& x = spec.magnitudes;
  if (static_cast<std::size_t>(x.rows()) < k || static_cast<std::size_t>(x.cols()) < k) {
    throw DataError("svd_spectral_bases: spectrogram smaller than requested basis count");
  }
  if (x.cwiseAbs().maxCoeff() == 0.0) throw DataError("rank deficient");
  Eigen::MatrixXd xm = x;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(xm, Eigen::ComputeThinU);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (!(sv[0] > 0.0)) throw DataError("rank deficient");
  SpectralBases out;
  out.bases.resize(static_cast<Eigen::Index>(k), x.rows());
  out.singular_values = sv.head(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    Eigen::VectorXd u = svd.matrixU().col(static_cast<Eigen::Index>(i));
    Eigen::Index arg = 0;
    u.cwiseAbs().maxCoeff(&arg);
    if (u[arg] < 0.0) u = -u;
    out.bases.row(static_cast<Eigen::Index>(i)) = u.transpose();
  }
  return out;
}

Waveform energy_vad(const Waveform& w, double threshold_db, double frame_length, double frame_shift) {
  const std::size_t len = std::max<std::size_t>(1, frame_samples(frame_length, w.sample_rate));
  const std::size_t shift = std::max<std::size_t>(1, frame_samples(frame_shift, w.sample_rate));
  const std::size_t n = w.size();
  const std::size_t t_count = std::max<std::size_t>(1, num_frames(n, len, shift));
  std::vector<double> energy(t_count, 0.0);
  for (std::size_t t = 0; t < t_count; ++t) {
    const std::size_t end = std::min(n, t * shift + len);
    for (std::size_t i = t * shift; i < end; ++i) energy[t] += w.samples[i] * w.samples[i];
  }
  const double peak = *std::max_element(energy.begin(), energy.end());
  if (!(peak > 0.0)) throw DataError("no speech detected");
  if (std::isinf(threshold_db) && threshold_db < 0.0) return w;

  const double floor = peak * std::pow(10.0, threshold_db / 10.0);
  std::size_t first = 0;
  while (first < t_count && energy[first] < floor) ++first;
  std::size_t last = t_count - 1;
  while (last > first && energy[last] < floor) --last;

  const std::size_t begin = first == 0 ? 0 : first * shift;
  const std::size_t end = last == t_count - 1 ? n : std::min(n, last * shift + len);
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                     w.samples.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

Waveform speed_perturb(const Waveform& w, double factor) {
  if (!(factor >= 0.5 && factor <= 2.0)) throw DataError("speed_perturb: factor must lie in [0.5, 2.0]");
  const std::size_t n = w.size();
  const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(n) / factor));
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) * factor;
    const auto j = static_cast<std::size_t>(pos);
    if (j + 1 >= n) {
      out.samples[i] = w.samples[n - 1];
      continue;
    }
    const double frac = pos - static_cast<double>(j);
    out.samples[i] = frac == 0.0 ? w.samples[j] : w.samples[j] * (1.0 - frac) + w.samples[j + 1] * frac;
  }
  return out;
}

namespace {

void put_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) throw DataError("wav: truncated header");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  const auto n = static_cast<std::uint32_t>(w.size());
  const auto rate = static_cast<std::uint32_t>(std::llround(w.sample_rate));
  binio::write_magic(os, "RIFF");
  binio::write_u32(os, 36 + 2 * n);
  binio::write_magic(os, "WAVE");
  binio::write_magic(os, "fmt ");
  binio::write_u32(os, 16);
  put_u16(os, 1);  // PCM
  put_u16(os, 1);  // mono
  binio::write_u32(os, rate);
  binio::write_u32(os, rate * 2);
  put_u16(os, 2);
  put_u16(os, 16);
  binio::write_magic(os, "data");
  binio::write_u32(os, 2 * n);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    const auto q = static_cast<std::int16_t>(std::lround(c * 32767.0));
    put_u16(os, static_cast<std::uint16_t>(q));
  }
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open wav: " + path.string());
  binio::expect_magic(is, "RIFF");
  binio::read_u32(is);
  binio::expect_magic(is, "WAVE");
  Waveform w;
  bool have_fmt = false;
  while (true) {
    char id[4];
    if (!is.read(id, 4)) throw DataError("wav: no data chunk in " + path.string());
    const std::uint32_t size = binio::read_u32(is);
    const std::string chunk(id, 4);
    if (chunk == "fmt ") {
      const std::uint16_t format = get_u16(is);
      const std::uint16_t channels = get_u16(is);
      w.sample_rate = binio::read_u32(is);
      binio::read_u32(is);
      get_u16(is);
      const std::uint16_t bits = get_u16(is);
      if (format != 1 || channels != 1 || bits != 16) throw DataError("wav: only 16-bit PCM mono is supported");
      if (size > 16) is.ignore(size - 16);
      have_fmt = true;
    } else if (chunk == "data") {
      if (!have_fmt) throw DataError("wav: data chunk before fmt chunk");
      w.samples.resize(size / 2);
      for (auto& s : w.samples) s = static_cast<std::int16_t>(get_u16(is)) / 32767.0;
      return w;
    } else {
      is.ignore(size + (size & 1));
    }
  }
}

void write_archive(std::ostream& os, const std::vector<ArchiveEntry>& entries) {
  binio::write_magic(os, "SEVF");
  binio::write_u32(os, kArchiveVersion);
  binio::write_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    binio::write_string(os, e.id);
    binio::write_u32(os, static_cast<std::uint32_t>(e.frames.rows()));
    binio::write_u32(os, static_cast<std::uint32_t>(e.frames.cols()));
    for (Eigen::Index i = 0; i < e.frames.size(); ++i) binio::write_f32(os, static_cast<float>(e.frames.data()[i]));
  }
}

std::vector<ArchiveEntry> read_archive(std::istream& is) {
  binio::expect_magic(is, "SEVF");
  const std::uint32_t version = binio::read_u32(is);
  if (version != kArchiveVersion) throw DataError("unsupported SEVF version " + std::to_string(version));
  const std::uint32_t count = binio::read_u32(is);
  std::vector<ArchiveEntry> entries;
  entries.reserve(count);
  for (std::uint32_t u = 0; u < count; ++u) {
    ArchiveEntry e;
    e.id = binio::read_string(is);
    const auto rows = static_cast<Eigen::Index>(binio::read_u32(is));
    const auto cols = static_cast<Eigen::Index>(binio::read_u32(is));
    e.frames.resize(rows, cols);
    for (Eigen::Index i = 0; i < e.frames.size(); ++i) e.frames.data()[i] = binio::read_f32(is);
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_archive(const std::filesystem::path& path, const std::vector<ArchiveEntry>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  write_archive(os, entries);
}

std::vector<ArchiveEntry> read_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open archive: " + path.string());
  return read_archive(is);
}

}  // namespace seva
