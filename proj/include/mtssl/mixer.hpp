// mtssl/mixer.hpp

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
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mtssl/common.hpp"
#include "mtssl/featext.hpp"
#include "mtssl/tsot.hpp"

namespace mtssl {

struct UtteranceRecord {
  std::string utterance_id;
  std::string speaker_id;
  std::string audio_path;
  std::string transcript_path;  // empty when untranscribed
  AudioBuffer audio;
  std::optional<TimedTranscript> transcript;

  double duration() const { return audio.duration(); }
};

using Corpus = std::vector<UtteranceRecord>;

// ---------------------------------------------------------------------------
// Corpus manifest: one record per line, tab separated:
//   utterance_id  speaker_id  audio_path  transcript_path|-  duration_seconds
// Relative paths resolve against the manifest's directory.

inline std::string FormatManifestLine(const UtteranceRecord& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << r.utterance_id << '\t' << r.speaker_id << '\t' << r.audio_path << '\t'
     << (r.transcript_path.empty() ? "-" : r.transcript_path) << '\t' << r.duration() << '\n';
  return os.str();
}

inline Corpus ReadCorpusManifest(const std::string& path) {
  namespace fs = std::filesystem;
  std::ifstream in(path);
  if (!in) throw DataError(StrCat("cannot open manifest ", path));
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  Corpus corpus;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    UtteranceRecord r;
    std::string transcript;
    double duration = 0;
    if (!(std::getline(ls, r.utterance_id, '\t') && std::getline(ls, r.speaker_id, '\t') &&
          std::getline(ls, r.audio_path, '\t') && std::getline(ls, transcript, '\t') && (ls >> duration)))
      throw DataError(StrCat(path, ":", lineno, ": malformed manifest record"));
    r.audio = ReadWav(resolve(r.audio_path).string());
    CheckAudio(r.audio);
    if (r.audio.samples.empty()) throw DataError(StrCat("utterance ", r.utterance_id, " has no audio"));
    if (transcript != "-") {
      r.transcript_path = transcript;
      r.transcript = ReadTimedTranscript(resolve(transcript).string());
      ValidateTimedTranscript(*r.transcript);
    }
    corpus.push_back(std::move(r));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Pre-training augmentation: noise or interfering-speech mixing.

struct AugmentConfig {
  double p_clean = 0.5;
  double p_noise = 0.0;
  double p_speech = 0.5;

  void Validate() const {
    for (double p : {p_clean, p_noise, p_speech})
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augmentation probabilities must lie in [0, 1]");
    if (std::abs(p_clean + p_noise + p_speech - 1.0) > 1e-9)
      throw ConfigError("augmentation probabilities must sum to 1");
  }
};

enum class MixKind { kNone, kNoise, kSpeech };

inline const char* MixKindName(MixKind k) {
  switch (k) {
    case MixKind::kNone: return "none";
    case MixKind::kNoise: return "noise";
    case MixKind::kSpeech: return "speech";
  }
  return "?";
}

inline constexpr double kMinSegmentFraction = 0.1;
inline constexpr double kMaxSegmentFraction = 0.5;
inline constexpr double kSpeechSnrLowDb = -5.0, kSpeechSnrHighDb = 5.0;
inline constexpr double kNoiseSnrLowDb = 0.0, kNoiseSnrHighDb = 20.0;

/// Positions are in samples at 16 kHz; the *_seconds() accessors convert.
struct MixSpec {
  std::string primary_id;
  MixKind kind = MixKind::kNone;
  std::string secondary_id;  // empty for synthetic noise
  int64_t segment_start = 0;
  int64_t segment_length = 0;
  int64_t insert_offset = 0;
  double snr_db = 0.0;
  uint64_t noise_seed = 0;  // synthetic noise source when secondary_id is empty

  double segment_start_seconds() const { return double(segment_start) / kSampleRate; }
  double segment_length_seconds() const { return double(segment_length) / kSampleRate; }
  double insert_offset_seconds() const { return double(insert_offset) / kSampleRate; }
};

/// Per-feature-frame flag: secondary speech active at that frame.
struct PresenceMask {
  std::vector<uint8_t> active;

  std::size_t size() const { return active.size(); }
  int CountActive() const { return static_cast<int>(std::count(active.begin(), active.end(), 1)); }
};

/// Frame t covers samples [160 t, 160 t + 400); it is marked active when its
/// center sample falls inside the inserted segment.
inline PresenceMask MakePresenceMask(std::size_t num_samples, const MixSpec& spec) {
  PresenceMask mask;
  mask.active.assign(NumFrames(num_samples), 0);
  if (spec.kind != MixKind::kSpeech) return mask;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    const int64_t center = static_cast<int64_t>(t) * kFrameShift + kFrameLength / 2;
    mask.active[t] = center >= spec.insert_offset && center < spec.insert_offset + spec.segment_length;
  }
  return mask;
}

/// Encoder-rate mask: the first flag of every group of `factor` frames.
inline std::vector<uint8_t> DownsampleMask(const PresenceMask& mask, int factor = 4) {
  std::vector<uint8_t> out((mask.size() + factor - 1) / factor);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.active[i * factor];
  return out;
}

/// Low-pass filtered Gaussian noise at RMS 0.1, deterministic in `seed`.
inline AudioBuffer SynthesizeNoise(uint64_t seed, std::size_t num_samples) {
  Rng rng(seed);
  AudioBuffer out;
  out.samples.resize(num_samples);
  double state = 0.0, energy = 0.0;
  for (auto& s : out.samples) {
    state = 0.9 * state + rng.Normal();
    s = state;
    energy += s * s;
  }
  const double scale = energy > 0 ? 0.1 / std::sqrt(energy / num_samples) : 0.0;
  for (auto& s : out.samples) s = std::clamp(s * scale, -1.0, 1.0);
  return out;
}

inline MixSpec SampleMixSpec(const AugmentConfig& config, const UtteranceRecord& primary,
                             std::span<const UtteranceRecord> pool, Rng& rng,
                             std::span<const UtteranceRecord> noise_pool = {}) {
  config.Validate();
  if (config.p_noise + config.p_speech > 0 && pool.empty())
    throw ConfigError("mixing requested but the utterance pool is empty");
  MixSpec spec;
  spec.primary_id = primary.utterance_id;
  const int64_t primary_len = static_cast<int64_t>(primary.audio.size());
  const double u = rng.Uniform();
  if (u < config.p_clean) return spec;

  if (u < config.p_clean + config.p_noise) {
    spec.kind = MixKind::kNoise;
    spec.snr_db = rng.Uniform(kNoiseSnrLowDb, kNoiseSnrHighDb);
    if (noise_pool.empty()) {
      spec.noise_seed = rng.NextU64();
      spec.segment_length = primary_len;
    } else {
      const auto& noise = noise_pool[rng.UniformInt(0, int64_t(noise_pool.size()) - 1)];
      spec.secondary_id = noise.utterance_id;
      spec.segment_length = std::min<int64_t>(primary_len, noise.audio.size());
      spec.segment_start = rng.UniformInt(0, int64_t(noise.audio.size()) - spec.segment_length);
      spec.insert_offset = rng.UniformInt(0, primary_len - spec.segment_length);
    }
    return spec;
  }

  // interfering speech, preferring a different speaker
  std::vector<const UtteranceRecord*> candidates;
  for (const auto& r : pool)
    if (r.speaker_id != primary.speaker_id) candidates.push_back(&r);
  if (candidates.empty())
    for (const auto& r : pool)
      if (r.utterance_id != primary.utterance_id) candidates.push_back(&r);
  if (candidates.empty()) throw ConfigError("no secondary utterance available for speech mixing");
  const auto& secondary = *candidates[rng.UniformInt(0, int64_t(candidates.size()) - 1)];
  const int64_t secondary_len = static_cast<int64_t>(secondary.audio.size());

  spec.kind = MixKind::kSpeech;
  spec.secondary_id = secondary.utterance_id;
  const double fraction = rng.Uniform(kMinSegmentFraction, kMaxSegmentFraction);
  const auto wanted = static_cast<int64_t>(std::floor(fraction * double(primary_len)));
  spec.segment_length = std::clamp<int64_t>(std::min(wanted, secondary_len), 1, primary_len);
  spec.segment_start = rng.UniformInt(0, secondary_len - spec.segment_length);
  spec.insert_offset = rng.UniformInt(0, primary_len - spec.segment_length);
  spec.snr_db = rng.Uniform(kSpeechSnrLowDb, kSpeechSnrHighDb);
  return spec;
}

struct MixResult {
  AudioBuffer audio;
  PresenceMask mask;
  int clipped = 0;  // samples clamped to [-1, 1]
};

/// Gain that puts `segment` at `snr_db` below the primary over the overlap.
inline double MixGain(double primary_energy, double segment_energy, double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  if (segment_energy <= 0.0) return 0.0;
  return std::sqrt(primary_energy / (segment_energy * std::pow(10.0, snr_db / 10.0)));
}

inline MixResult ApplyMix(const AudioBuffer& primary, const MixSpec& spec, const AudioBuffer& secondary) {
  MixResult out;
  out.audio = primary;
  out.mask = MakePresenceMask(primary.size(), spec);
  if (spec.kind == MixKind::kNone) return out;

  const auto plen = static_cast<int64_t>(primary.size()), slen = static_cast<int64_t>(secondary.size());
  if (spec.segment_length < 1 || spec.segment_start < 0 || spec.insert_offset < 0 ||
      spec.segment_start + spec.segment_length > slen || spec.insert_offset + spec.segment_length > plen)
    throw DataError(StrCat("mix segment out of bounds for ", spec.primary_id));

  double ep = 0.0, es = 0.0;
  for (int64_t i = 0; i < spec.segment_length; ++i) {
    const double p = primary.samples[spec.insert_offset + i], s = secondary.samples[spec.segment_start + i];
    ep += p * p;
    es += s * s;
  }
  const double gain = MixGain(ep, es, spec.snr_db);
  for (int64_t i = 0; i < spec.segment_length; ++i) {
    double& y = out.audio.samples[spec.insert_offset + i];
    y += gain * secondary.samples[spec.segment_start + i];
    if (y > 1.0 || y < -1.0) {
      y = std::clamp(y, -1.0, 1.0);
      ++out.clipped;
    }
  }
  return out;
}

/// Looks up the secondary source referenced by `spec` (or synthesizes noise).
inline AudioBuffer ResolveSecondary(const MixSpec& spec, std::span<const UtteranceRecord> pool,
                                    std::span<const UtteranceRecord> noise_pool = {}) {
  if (spec.kind == MixKind::kNone) return {};
  if (spec.kind == MixKind::kNoise && spec.secondary_id.empty())
    return SynthesizeNoise(spec.noise_seed, static_cast<std::size_t>(spec.segment_start + spec.segment_length));
  for (auto src : {pool, noise_pool})
    for (const auto& r : src)
      if (r.utterance_id == spec.secondary_id) return r.audio;
  throw DataError(StrCat("secondary source ", spec.secondary_id, " not found"));
}

/// The clean secondary segment alone, placed at its insert offset inside a
/// silent buffer as long as the primary.
inline AudioBuffer PlaceSecondary(const MixSpec& spec, const AudioBuffer& secondary, std::size_t primary_len) {
  AudioBuffer out;
  out.samples.assign(primary_len, 0.0);
  if (spec.kind != MixKind::kSpeech) return out;
  if (spec.segment_start + spec.segment_length > int64_t(secondary.size()) ||
      spec.insert_offset + spec.segment_length > int64_t(primary_len))
    throw DataError("secondary placement out of bounds");
  std::copy_n(secondary.samples.begin() + spec.segment_start, spec.segment_length,
              out.samples.begin() + spec.insert_offset);
  return out;
}

// ---------------------------------------------------------------------------
// Fine-tuning mixtures.

struct MixedUtterance {
  AudioBuffer audio;
  TimedTranscript transcript;
  int64_t delay = 0;  // samples
  int clipped = 0;
};

inline MixedUtterance MixWithDelay(const UtteranceRecord& a, const UtteranceRecord& b, int64_t delay) {
  if (!a.transcript || !b.transcript)
    throw DataError(StrCat("fine-tune mixing needs timed transcripts (", a.utterance_id, ", ",
                           b.utterance_id, ")"));
  if (a.speaker_id == b.speaker_id) throw DataError("fine-tune mixture needs two distinct speakers");
  MixedUtterance out;
  out.delay = delay;
  const std::size_t len = std::max(a.audio.size(), static_cast<std::size_t>(delay) + b.audio.size());
  out.audio.samples.assign(len, 0.0);
  std::copy(a.audio.samples.begin(), a.audio.samples.end(), out.audio.samples.begin());
  for (std::size_t i = 0; i < b.audio.size(); ++i) {
    double& y = out.audio.samples[delay + i];
    y += b.audio.samples[i];
    if (y > 1.0 || y < -1.0) {
      y = std::clamp(y, -1.0, 1.0);
      ++out.clipped;
    }
  }
  out.transcript = *a.transcript;
  const double shift = static_cast<double>(delay) / kSampleRate;
  for (auto t : *b.transcript) {
    t.end_time += shift;
    out.transcript.push_back(std::move(t));
  }
  return out;
}

/// b is delayed by d ~ Uniform{0 .. len(a)} samples and added to a.
inline MixedUtterance SimulateFinetuneMixture(const UtteranceRecord& a, const UtteranceRecord& b, Rng& rng) {
  const int64_t delay = rng.UniformInt(0, static_cast<int64_t>(a.audio.size()));
  return MixWithDelay(a, b, delay);
}

struct FinetuneMixConfig {
  double p_mixed = 0.5;
  bool volume_perturbation = true;
  double gain_low = 0.5, gain_high = 1.5;
};

struct TrainingExample {
  std::size_t index = 0;
  bool mixed = false;
  std::vector<std::string> source_ids;
  AudioBuffer audio;
  TimedTranscript transcript;
  SerializedTranscript target;
};

/// On-the-fly single/two-speaker example stream. Example i depends only on
/// (master seed, i), so any worker can reproduce any element.
class FinetuneMixStream {
 public:
  FinetuneMixStream(const Corpus& corpus, FinetuneMixConfig config, uint64_t seed)
      : corpus_(&corpus), config_(config), seed_(seed) {
    if (corpus.empty()) throw ConfigError("fine-tune corpus is empty");
    for (const auto& r : corpus)
      if (!r.transcript) throw DataError(StrCat("utterance ", r.utterance_id, " lacks a timed transcript"));
    if (config_.p_mixed > 0) {
      bool two_speakers = false;
      for (const auto& r : corpus) two_speakers |= r.speaker_id != corpus.front().speaker_id;
      if (!two_speakers) throw ConfigError("two-speaker mixing requested on a single-speaker corpus");
    }
  }

  TrainingExample Example(std::size_t index) const {
    Rng rng(DeriveSeed(seed_, index));
    const auto& corpus = *corpus_;
    TrainingExample ex;
    ex.index = index;
    const auto& a = corpus[rng.UniformInt(0, int64_t(corpus.size()) - 1)];
    ex.mixed = rng.Bernoulli(config_.p_mixed);
    if (ex.mixed) {
      std::vector<const UtteranceRecord*> others;
      for (const auto& r : corpus)
        if (r.speaker_id != a.speaker_id) others.push_back(&r);
      const auto& b = *others[rng.UniformInt(0, int64_t(others.size()) - 1)];
      MixedUtterance m = SimulateFinetuneMixture(a, b, rng);
      ex.audio = std::move(m.audio);
      ex.transcript = std::move(m.transcript);
      ex.source_ids = {a.utterance_id, b.utterance_id};
    } else {
      ex.audio = a.audio;
      ex.transcript = *a.transcript;
      ex.source_ids = {a.utterance_id};
    }
    if (config_.volume_perturbation) {
      const double g = rng.Uniform(config_.gain_low, config_.gain_high);
      for (auto& s : ex.audio.samples) s = std::clamp(s * g, -1.0, 1.0);
    }
    ex.target = Serialize(ex.transcript);
    return ex;
  }

 private:
  const Corpus* corpus_;
  FinetuneMixConfig config_;
  uint64_t seed_;
};

}  // namespace mtssl
