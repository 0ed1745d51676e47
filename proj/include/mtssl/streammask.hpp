// mtssl/streammask.hpp

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
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mtssl/common.hpp"

namespace mtssl {

struct ChunkMaskConfig {
  int chunk_size = 4;                 // encoder frames per chunk
  std::optional<int> history_chunks;  // h; nullopt = unbounded history
  bool offline = false;

  void Validate() const {
    if (chunk_size < 1) throw ConfigError("chunk_size must be >= 1");
    if (history_chunks && *history_chunks < 1) throw ConfigError("history_chunks must be >= 1");
  }
};

/// T x T visibility matrix: At(i, j) means frame j may be used to compute
/// output frame i.
class AttentionMask {
 public:
  AttentionMask() = default;
  explicit AttentionMask(int size, bool fill = false)
      : size_(size), bits_(static_cast<std::size_t>(size) * size, fill ? 1 : 0) {}

  int size() const { return size_; }
  bool At(int i, int j) const { return bits_[static_cast<std::size_t>(i) * size_ + j] != 0; }
  void Set(int i, int j, bool v) { bits_[static_cast<std::size_t>(i) * size_ + j] = v ? 1 : 0; }

  int RowSum(int i) const {
    int n = 0;
    for (int j = 0; j < size_; ++j) n += At(i, j);
    return n;
  }
  bool AllOnes() const {
    return std::all_of(bits_.begin(), bits_.end(), [](uint8_t b) { return b != 0; });
  }
  /// Leading principal submatrix; a chunk mask restricted to a prefix is the
  /// chunk mask of that prefix length.
  AttentionMask Prefix(int n) const {
    AttentionMask out(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) out.Set(i, j, At(i, j));
    return out;
  }

  bool operator==(const AttentionMask&) const = default;

 private:
  int size_ = 0;
  std::vector<uint8_t> bits_;
};

inline AttentionMask BuildChunkMask(int num_frames, const ChunkMaskConfig& config) {
  if (num_frames < 1) throw ConfigError("attention mask needs T >= 1");
  config.Validate();
  if (config.offline) return AttentionMask(num_frames, true);
  AttentionMask mask(num_frames);
  const int c = config.chunk_size;
  for (int i = 0; i < num_frames; ++i) {
    const int chunk = i / c;
    // visible chunks: l - h < l' <= l
    const int first_chunk =
        config.history_chunks ? std::max(0, chunk - *config.history_chunks + 1) : 0;
    const int end = std::min(num_frames, (chunk + 1) * c);
    for (int j = first_chunk * c; j < end; ++j) mask.Set(i, j, true);
  }
  return mask;
}

/// Frames that can influence output i through `num_layers` stacked attention
/// layers sharing the same mask (boolean power of S).
inline AttentionMask ReceptiveField(const AttentionMask& mask, int num_layers) {
  const int n = mask.size();
  AttentionMask reach(n);
  for (int i = 0; i < n; ++i) reach.Set(i, i, true);
  for (int layer = 0; layer < num_layers; ++layer) {
    AttentionMask next(n);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k) {
        if (!mask.At(i, k)) continue;
        for (int j = 0; j < n; ++j)
          if (reach.At(k, j)) next.Set(i, j, true);
      }
    reach = std::move(next);
  }
  return reach;
}

inline void DumpMask(std::ostream& os, const AttentionMask& mask) {
  for (int i = 0; i < mask.size(); ++i) {
    for (int j = 0; j < mask.size(); ++j) os << (mask.At(i, j) ? '1' : '0');
    os << '\n';
  }
}

/// Algorithmic latency (future lookahead) in milliseconds; +inf when offline.
inline double LatencyMs(const ChunkMaskConfig& config, double encoder_frame_ms) {
  if (!(encoder_frame_ms > 0)) throw ConfigError("encoder frame duration must be positive");
  if (config.offline) return std::numeric_limits<double>::infinity();
  return config.chunk_size * encoder_frame_ms;
}

// ---------------------------------------------------------------------------
// Masked-span sampling for masked speech prediction.

struct MaskSpanConfig {
  int span_length = 10;
  double start_probability = 0.08;

  void Validate() const {
    if (span_length < 1) throw ConfigError("span_length must be >= 1");
    if (!(start_probability > 0.0 && start_probability < 1.0))
      throw ConfigError("start_probability must lie in (0, 1)");
  }
};

struct MaskedSet {
  std::vector<int> indices;   // sorted, unique, in [0, T)
  bool fallback_used = false;  // both draws were empty; one forced span was placed

  bool empty() const { return indices.empty(); }
  std::size_t size() const { return indices.size(); }
  bool Contains(int t) const { return std::binary_search(indices.begin(), indices.end(), t); }
};

/// Union of spans [s, s + span) truncated at T.
inline MaskedSet SpansFromStarts(const std::vector<int>& starts, int span_length, int num_frames) {
  std::vector<uint8_t> hit(num_frames, 0);
  for (int s : starts)
    for (int t = std::max(s, 0); t < std::min(s + span_length, num_frames); ++t) hit[t] = 1;
  MaskedSet out;
  for (int t = 0; t < num_frames; ++t)
    if (hit[t]) out.indices.push_back(t);
  return out;
}

inline MaskedSet SampleMaskSpans(int num_frames, const MaskSpanConfig& config, Rng& rng) {
  config.Validate();
  if (num_frames <= config.span_length)
    throw ConfigError(StrCat("mask spans need T > span_length (T=", num_frames,
                             ", span=", config.span_length, ")"));
  for (int attempt = 0; attempt < 2; ++attempt) {
    std::vector<int> starts;
    for (int t = 0; t < num_frames; ++t)
      if (rng.Bernoulli(config.start_probability)) starts.push_back(t);
    if (!starts.empty()) return SpansFromStarts(starts, config.span_length, num_frames);
  }
  const int start = static_cast<int>(rng.UniformInt(0, num_frames - config.span_length));
  MaskedSet out = SpansFromStarts({start}, config.span_length, num_frames);
  out.fallback_used = true;
  return out;
}

}  // namespace mtssl
