// mtssl/pipeline.hpp

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

// Dataset construction shared by the command-line stages and the test
// suites: featurization, pre-training mixtures with bi-label targets, and
// fine-tuning examples with serialized transcript targets.

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mtssl/featext.hpp"
#include "mtssl/mixer.hpp"
#include "mtssl/pretrain.hpp"
#include "mtssl/quantizer.hpp"
#include "mtssl/transducer.hpp"

namespace mtssl {

inline std::vector<FeatureSequence> FeaturizeCorpus(const Corpus& corpus) {
  std::vector<FeatureSequence> out;
  out.reserve(corpus.size());
  for (const auto& r : corpus) {
    if (r.audio.size() < std::size_t(kFrameLength))
      throw DataError(StrCat("utterance ", r.utterance_id, " is shorter than one analysis window"));
    out.push_back(ComputeFbank(r.audio));
  }
  return out;
}

inline FeatureSequence NormalizedFbank(const AudioBuffer& audio, const NormStats& stats) {
  return Normalize(ComputeFbank(audio), stats);
}

struct PretrainItem {
  PretrainExample example;
  MixSpec spec;
  int clipped = 0;
};

/// One augmented example per primary utterance. Example i draws its mix from
/// DeriveSeed(seed, i); targets come from the clean sources (see
/// BuildBiLabelTargets).
inline std::vector<PretrainItem> BuildPretrainSet(const Corpus& primaries, const Corpus& pool,
                                                  const AugmentConfig& augment, const NormStats& stats,
                                                  const Codebook& codebook, uint64_t seed,
                                                  const Corpus& noise_pool = {}) {
  std::vector<PretrainItem> items;
  items.reserve(primaries.size());
  for (std::size_t i = 0; i < primaries.size(); ++i) {
    Rng rng(DeriveSeed(seed, i));
    const auto& primary = primaries[i];
    PretrainItem item;
    item.spec = SampleMixSpec(augment, primary, pool, rng, noise_pool);
    const AudioBuffer secondary = ResolveSecondary(item.spec, pool, noise_pool);
    const MixResult mix = ApplyMix(primary.audio, item.spec, secondary);
    item.clipped = mix.clipped;
    const FeatureSequence clean = NormalizedFbank(primary.audio, stats);
    const FeatureSequence placed = NormalizedFbank(PlaceSecondary(item.spec, secondary, primary.audio.size()), stats);
    item.example.features = NormalizedFbank(mix.audio, stats).frames;
    item.example.targets = BuildBiLabelTargets(clean, placed, item.spec, mix.mask, codebook);
    items.push_back(std::move(item));
  }
  return items;
}

/// Same mixing as BuildPretrainSet, with targets read from imported
/// encoder-rate label streams keyed by utterance id.
inline std::vector<PretrainItem> BuildPretrainSetImported(const Corpus& primaries, const Corpus& pool,
                                                          const AugmentConfig& augment, const NormStats& stats,
                                                          const std::map<std::string, LabelStream>& labels,
                                                          uint64_t seed, const Corpus& noise_pool = {}) {
  auto lookup = [&](const std::string& id) -> const LabelStream& {
    auto it = labels.find(id);
    if (it == labels.end()) throw DataError(StrCat("no imported labels for utterance ", id));
    return it->second;
  };
  std::vector<PretrainItem> items;
  items.reserve(primaries.size());
  for (std::size_t i = 0; i < primaries.size(); ++i) {
    Rng rng(DeriveSeed(seed, i));
    const auto& primary = primaries[i];
    PretrainItem item;
    item.spec = SampleMixSpec(augment, primary, pool, rng, noise_pool);
    const AudioBuffer secondary = ResolveSecondary(item.spec, pool, noise_pool);
    const MixResult mix = ApplyMix(primary.audio, item.spec, secondary);
    item.clipped = mix.clipped;
    item.example.features = NormalizedFbank(mix.audio, stats).frames;
    const LabelStream& own = lookup(primary.utterance_id);
    const LabelStream& other = item.spec.kind == MixKind::kSpeech ? lookup(item.spec.secondary_id) : own;
    item.example.targets = BuildBiLabelTargetsImported(own, other, item.spec, mix.mask);
    items.push_back(std::move(item));
  }
  return items;
}

inline std::vector<PretrainExample> ExamplesOf(const std::vector<PretrainItem>& items) {
  std::vector<PretrainExample> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.example);
  return out;
}

inline Vocabulary VocabularyOf(const Corpus& corpus) {
  std::set<std::string> words;
  for (const auto& r : corpus)
    if (r.transcript)
      for (const auto& t : *r.transcript) words.insert(t.token);
  return Vocabulary(std::vector<std::string>(words.begin(), words.end()));
}

struct FinetuneItem {
  std::string id;
  bool mixed = false;
  FinetuneExample example;
  SerializedTranscript target;
  TimedTranscript transcript;
};

inline std::vector<FinetuneItem> BuildFinetuneSet(const FinetuneMixStream& stream, std::size_t count,
                                                  const NormStats& stats, const Vocabulary& vocab,
                                                  std::size_t first_index = 0) {
  std::vector<FinetuneItem> items;
  items.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    TrainingExample ex = stream.Example(first_index + i);
    FinetuneItem item;
    std::string joined;
    for (const auto& s : ex.source_ids) joined += (joined.empty() ? "" : "+") + s;
    item.id = StrCat("ex", first_index + i, "-", joined);
    item.mixed = ex.mixed;
    item.example.features = NormalizedFbank(ex.audio, stats).frames;
    item.example.target = vocab.Encode(ex.target);
    item.target = std::move(ex.target);
    item.transcript = std::move(ex.transcript);
    items.push_back(std::move(item));
  }
  return items;
}

inline std::vector<FinetuneExample> ExamplesOf(const std::vector<FinetuneItem>& items) {
  std::vector<FinetuneExample> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.example);
  return out;
}

}  // namespace mtssl
