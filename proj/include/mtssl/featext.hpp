// mtssl/featext.hpp

// Copyright 2026  mtssl authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <algorithm>
#include <array>
#include <complex>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "mtssl/common.hpp"

namespace mtssl {

inline constexpr int kSampleRate = 16000;
inline constexpr int kFrameLength = 400;  // 25 ms
inline constexpr int kFrameShift = 160;   // 10 ms
inline constexpr int kFftSize = 512;
inline constexpr int kNumMelBins = 80;
inline constexpr double kLogFloor = 1e-10;
inline constexpr double kVarianceFloor = 1e-8;

struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

inline void CheckAudio(const AudioBuffer& audio) {
  if (audio.sample_rate != kSampleRate)
    throw DataError(StrCat("unsupported sample rate ", audio.sample_rate, " (need ", kSampleRate, ")"));
  for (double s : audio.samples)
    if (!std::isfinite(s)) throw DataError("audio contains non-finite samples");
}

/// T x 80 log-mel energies at a 10 ms stride.
struct FeatureSequence {
  Matrix frames;
  int frame_stride_ms = 10;

  Eigen::Index num_frames() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
};

struct NormStats {
  Vector mean;
  Vector variance;
};

inline int NumFrames(std::size_t num_samples) {
  if (num_samples < static_cast<std::size_t>(kFrameLength)) return 0;
  return static_cast<int>((num_samples - kFrameLength) / kFrameShift) + 1;
}

// ---------------------------------------------------------------------------
// WAV I/O: mono, 16-bit PCM, little-endian RIFF.

namespace detail {
inline uint32_t ReadLe32(const unsigned char* p) {
  return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}
inline uint16_t ReadLe16(const unsigned char* p) { return uint16_t(p[0] | (p[1] << 8)); }
inline void PutLe32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void PutLe16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}
inline std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(StrCat("cannot open ", path));
  return std::string(std::istreambuf_iterator<char>(in), {});
}
inline void WriteFile(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(StrCat("cannot write ", path));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(StrCat("short write to ", path));
}
}  // namespace detail

inline std::string EncodeWav(const AudioBuffer& audio) {
  std::string out;
  const uint32_t data_bytes = static_cast<uint32_t>(audio.samples.size() * 2);
  out += "RIFF";
  detail::PutLe32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  detail::PutLe32(out, 16);
  detail::PutLe16(out, 1);  // PCM
  detail::PutLe16(out, 1);  // mono
  detail::PutLe32(out, static_cast<uint32_t>(audio.sample_rate));
  detail::PutLe32(out, static_cast<uint32_t>(audio.sample_rate * 2));
  detail::PutLe16(out, 2);
  detail::PutLe16(out, 16);
  out += "data";
  detail::PutLe32(out, data_bytes);
  for (double s : audio.samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    const auto q = static_cast<int16_t>(std::lround(c * 32767.0));
    detail::PutLe16(out, static_cast<uint16_t>(q));
  }
  return out;
}

inline AudioBuffer DecodeWav(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw DataError("not a RIFF/WAVE file");
  std::size_t pos = 12;
  bool have_fmt = false;
  AudioBuffer audio;
  while (pos + 8 <= bytes.size()) {
    const uint32_t chunk_size = detail::ReadLe32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (body + chunk_size > bytes.size()) throw DataError("truncated WAV chunk");
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw DataError("short fmt chunk");
      const uint16_t format = detail::ReadLe16(p + body);
      const uint16_t channels = detail::ReadLe16(p + body + 2);
      audio.sample_rate = static_cast<int>(detail::ReadLe32(p + body + 4));
      const uint16_t bits = detail::ReadLe16(p + body + 14);
      if (format != 1 || channels != 1 || bits != 16)
        throw DataError("only mono 16-bit PCM WAV is supported");
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      if (!have_fmt) throw DataError("WAV data chunk before fmt chunk");
      const std::size_t n = chunk_size / 2;
      audio.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        audio.samples[i] = static_cast<int16_t>(detail::ReadLe16(p + body + 2 * i)) / 32768.0;
      return audio;
    }
    pos = body + chunk_size + (chunk_size & 1);
  }
  throw DataError("WAV file has no data chunk");
}

inline AudioBuffer ReadWav(const std::string& path) { return DecodeWav(detail::ReadFile(path)); }
inline void WriteWav(const std::string& path, const AudioBuffer& audio) {
  detail::WriteFile(path, EncodeWav(audio));
}

// ---------------------------------------------------------------------------
// Flat binary container shared by features, norm stats and codebooks:
//   "MTSF" | u32 version | u32 kind | u32 rows | u32 cols | rows*cols f32 (row-major)

enum class ContainerKind : uint32_t { kFeatures = 1, kNormStats = 2, kCodebook = 3 };
inline constexpr uint32_t kContainerVersion = 1;

inline std::string EncodeContainer(ContainerKind kind, const Matrix& m) {
  std::string out = "MTSF";
  detail::PutLe32(out, kContainerVersion);
  detail::PutLe32(out, static_cast<uint32_t>(kind));
  detail::PutLe32(out, static_cast<uint32_t>(m.rows()));
  detail::PutLe32(out, static_cast<uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const float f = static_cast<float>(m(r, c));
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      detail::PutLe32(out, bits);
    }
  return out;
}

inline Matrix DecodeContainer(ContainerKind expected, const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 20 || std::memcmp(p, "MTSF", 4) != 0) throw DataError("bad container magic");
  if (detail::ReadLe32(p + 4) != kContainerVersion) throw DataError("unsupported container version");
  if (detail::ReadLe32(p + 8) != static_cast<uint32_t>(expected))
    throw DataError("container holds a different kind of payload");
  const uint32_t rows = detail::ReadLe32(p + 12), cols = detail::ReadLe32(p + 16);
  if (bytes.size() != 20 + std::size_t(rows) * cols * 4) throw DataError("container size mismatch");
  Matrix m(rows, cols);
  const unsigned char* q = p + 20;
  for (uint32_t r = 0; r < rows; ++r)
    for (uint32_t c = 0; c < cols; ++c, q += 4) {
      const uint32_t bits = detail::ReadLe32(q);
      float f;
      std::memcpy(&f, &bits, 4);
      m(r, c) = f;
    }
  return m;
}

inline void WriteFeatures(const std::string& path, const FeatureSequence& f) {
  detail::WriteFile(path, EncodeContainer(ContainerKind::kFeatures, f.frames));
}
inline FeatureSequence ReadFeatures(const std::string& path) {
  return {DecodeContainer(ContainerKind::kFeatures, detail::ReadFile(path)), 10};
}
inline void WriteNormStats(const std::string& path, const NormStats& s) {
  Matrix m(2, s.mean.size());
  m.row(0) = s.mean.transpose();
  m.row(1) = s.variance.transpose();
  detail::WriteFile(path, EncodeContainer(ContainerKind::kNormStats, m));
}
inline NormStats ReadNormStats(const std::string& path) {
  const Matrix m = DecodeContainer(ContainerKind::kNormStats, detail::ReadFile(path));
  if (m.rows() != 2) throw DataError("norm stats container must have 2 rows");
  return {m.row(0).transpose(), m.row(1).transpose()};
}

// ---------------------------------------------------------------------------
// FFT + mel filterbank.

/// In-place iterative radix-2 FFT; size must be a power of two.
inline void Fft(std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = x[i + k], v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline double HzToMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double MelToHz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular filters on the HTK mel scale over 0..8000 Hz, evaluated on the
/// kFftSize/2+1 power-spectrum bins. Row b is the weight vector of band b.
inline const Matrix& MelWeights() {
  static const Matrix weights = [] {
    const int num_bins = kFftSize / 2 + 1;
    Matrix w = Matrix::Zero(kNumMelBins, num_bins);
    const double mel_lo = HzToMel(0.0), mel_hi = HzToMel(kSampleRate / 2.0);
    const double step = (mel_hi - mel_lo) / (kNumMelBins + 1);
    for (int b = 0; b < kNumMelBins; ++b) {
      const double left = mel_lo + b * step, center = left + step, right = center + step;
      for (int k = 0; k < num_bins; ++k) {
        const double mel = HzToMel(static_cast<double>(k) * kSampleRate / kFftSize);
        if (mel > left && mel < right)
          w(b, k) = mel <= center ? (mel - left) / (center - left) : (right - mel) / (right - center);
      }
    }
    return w;
  }();
  return weights;
}

inline const std::vector<double>& HannWindow() {
  static const std::vector<double> window = [] {
    std::vector<double> w(kFrameLength);
    for (int i = 0; i < kFrameLength; ++i)
      w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (kFrameLength - 1));
    return w;
  }();
  return window;
}

inline FeatureSequence ComputeFbank(const AudioBuffer& audio) {
  if (audio.samples.empty()) throw DataError("empty audio");
  CheckAudio(audio);
  const int num_frames = NumFrames(audio.size());
  if (num_frames == 0)
    throw DataError(StrCat("audio shorter than one ", kFrameLength, "-sample analysis window"));

  const auto& window = HannWindow();
  const Matrix& mel = MelWeights();
  FeatureSequence out;
  out.frames.resize(num_frames, kNumMelBins);
  std::vector<std::complex<double>> buf(kFftSize);
  Vector power(kFftSize / 2 + 1);
  for (int t = 0; t < num_frames; ++t) {
    const double* frame = audio.samples.data() + static_cast<std::size_t>(t) * kFrameShift;
    for (int i = 0; i < kFftSize; ++i) buf[i] = i < kFrameLength ? frame[i] * window[i] : 0.0;
    Fft(buf);
    for (int k = 0; k <= kFftSize / 2; ++k) power[k] = std::norm(buf[k]);
    const Vector energies = mel * power;
    for (int b = 0; b < kNumMelBins; ++b) out.frames(t, b) = std::log(std::max(energies[b], kLogFloor));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Global mean/variance normalization.

inline NormStats FitNormStats(std::span<const FeatureSequence> corpus) {
  if (corpus.empty()) throw DataError("norm stats need a non-empty corpus");
  const Eigen::Index dim = corpus.front().dim();
  Eigen::Index total = 0;
  Vector sum = Vector::Zero(dim);
  for (const auto& f : corpus) {
    if (f.dim() != dim) throw ShapeError("feature dims differ across corpus");
    sum += f.frames.colwise().sum().transpose();
    total += f.num_frames();
  }
  if (total < 2) throw DataError("need at least 2 frames for norm stats");
  NormStats stats;
  stats.mean = sum / static_cast<double>(total);
  // second pass on centered data
  Vector sq = Vector::Zero(dim);
  for (const auto& f : corpus)
    sq += (f.frames.rowwise() - stats.mean.transpose()).array().square().colwise().sum().matrix().transpose();
  stats.variance = (sq / static_cast<double>(total)).cwiseMax(kVarianceFloor);
  return stats;
}

inline FeatureSequence Normalize(const FeatureSequence& features, const NormStats& stats) {
  if (features.dim() != stats.mean.size() || stats.variance.size() != stats.mean.size())
    throw ShapeError(StrCat("normalize: feature dim ", features.dim(), " vs stats dim ", stats.mean.size()));
  FeatureSequence out = features;
  const Eigen::RowVectorXd inv_std = stats.variance.array().sqrt().inverse().matrix().transpose();
  out.frames = ((features.frames.rowwise() - stats.mean.transpose()).array().rowwise() * inv_std.array()).matrix();
  return out;
}

inline FeatureSequence Denormalize(const FeatureSequence& features, const NormStats& stats) {
  if (features.dim() != stats.mean.size()) throw ShapeError("denormalize: dim mismatch");
  FeatureSequence out = features;
  const Eigen::RowVectorXd std_dev = stats.variance.array().sqrt().matrix().transpose();
  out.frames = ((features.frames.array().rowwise() * std_dev.array()).matrix().rowwise() + stats.mean.transpose());
  return out;
}

}  // namespace mtssl
