// mtssl/synth.hpp

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

// Deterministic synthetic corpus: each "word" is a short harmonic tone whose
// pitch depends on the word and on the speaker's register, so both the token
// identity and the talker are recoverable from FBANK features.

#include <filesystem>
#include <string>
#include <vector>

#include "mtssl/common.hpp"
#include "mtssl/featext.hpp"
#include "mtssl/mixer.hpp"
#include "mtssl/tsot.hpp"

namespace mtssl {

struct SynthOptions {
  int num_utterances = 32;
  int num_speakers = 4;
  std::vector<std::string> words = {"A", "B", "C", "D"};
  int min_words = 2;
  int max_words = 4;
};

inline double SynthWordFrequency(int word) { return 500.0 * std::pow(1.6, word); }
inline double SynthSpeakerRegister(int speaker) { return 1.0 + 0.12 * (speaker % 4); }

inline Corpus MakeSyntheticCorpus(uint64_t seed, const SynthOptions& opt = {}) {
  if (opt.num_speakers < 1 || opt.words.empty() || opt.min_words < 1 || opt.max_words < opt.min_words)
    throw ConfigError("invalid synthetic corpus options");
  Corpus corpus;
  for (int u = 0; u < opt.num_utterances; ++u) {
    Rng rng(DeriveSeed(seed, static_cast<uint64_t>(u)));
    const int speaker = u % opt.num_speakers;
    UtteranceRecord rec;
    rec.utterance_id = StrCat("syn", seed, "-", u < 10 ? "00" : u < 100 ? "0" : "", u);
    rec.speaker_id = StrCat("spk", speaker);
    const double harmonic = 0.25 + 0.15 * (speaker % 3);
    const double amp = rng.Uniform(0.25, 0.4);

    std::vector<double>& s = rec.audio.samples;
    auto silence = [&](double seconds) { s.resize(s.size() + std::size_t(seconds * kSampleRate), 0.0); };
    silence(rng.Uniform(0.05, 0.1));
    TimedTranscript words;
    const int n = static_cast<int>(rng.UniformInt(opt.min_words, opt.max_words));
    for (int w = 0; w < n; ++w) {
      if (w) silence(rng.Uniform(0.04, 0.1));
      const int word = static_cast<int>(rng.UniformInt(0, int64_t(opt.words.size()) - 1));
      const double f = SynthWordFrequency(word) * SynthSpeakerRegister(speaker);
      const auto len = std::size_t(rng.Uniform(0.12, 0.2) * kSampleRate);
      const double phase = rng.Uniform(0.0, 2.0 * M_PI);
      for (std::size_t i = 0; i < len; ++i) {
        const double t = double(i) / kSampleRate;
        // 10 ms raised-cosine on/off ramps
        const double ramp_n = 0.01 * kSampleRate;
        double env = 1.0;
        if (i < ramp_n) env = 0.5 - 0.5 * std::cos(M_PI * i / ramp_n);
        if (len - i < ramp_n) env = 0.5 - 0.5 * std::cos(M_PI * (len - i) / ramp_n);
        s.push_back(amp * env *
                    (std::sin(2 * M_PI * f * t + phase) + harmonic * std::sin(4 * M_PI * f * t + 2 * phase)) /
                    (1.0 + harmonic));
      }
      words.push_back({opt.words[word], double(s.size()) / kSampleRate, rec.speaker_id});
    }
    silence(rng.Uniform(0.05, 0.1));
    rec.transcript = std::move(words);
    corpus.push_back(std::move(rec));
  }
  return corpus;
}

/// Writes <dir>/<id>.wav, <dir>/<id>.txt and <dir>/corpus.tsv.
inline void WriteSyntheticCorpus(const std::string& dir, Corpus& corpus) {
  std::filesystem::create_directories(dir);
  std::string manifest;
  for (auto& r : corpus) {
    r.audio_path = r.utterance_id + ".wav";
    r.transcript_path = r.utterance_id + ".txt";
    WriteWav(dir + "/" + r.audio_path, r.audio);
    WriteTimedTranscript(dir + "/" + r.transcript_path, *r.transcript);
    manifest += FormatManifestLine(r);
  }
  detail::WriteFile(dir + "/corpus.tsv", manifest);
}

}  // namespace mtssl
