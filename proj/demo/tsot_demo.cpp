// demo/tsot_demo.cpp

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
// Mixes two synthetic utterances, serializes the overlapped transcript into a
// single t-SOT token stream and splits it back into two virtual channels.

#include <iostream>

#include "mtssl/mixer.hpp"
#include "mtssl/synth.hpp"
#include "mtssl/tsot.hpp"

int main(int argc, char** argv) {
  const uint64_t seed = argc > 1 ? std::stoull(argv[1]) : 7;
  mtssl::SynthOptions opt;
  opt.num_utterances = 2;
  const mtssl::Corpus corpus = mtssl::MakeSyntheticCorpus(seed, opt);
  const auto& a = corpus[0];
  const auto& b = corpus[1];
  const auto mix = mtssl::MixWithDelay(a, b, static_cast<int64_t>(a.audio.size() / 2));

  std::cout << "speaker " << a.speaker_id << ":";
  for (const auto& t : *a.transcript) std::cout << ' ' << t.token;
  std::cout << "\nspeaker " << b.speaker_id << ":";
  for (const auto& t : *b.transcript) std::cout << ' ' << t.token;
  std::cout << "\n\nmixture (" << mix.audio.duration() << " s), timed tokens:\n"
            << mtssl::FormatTimedTranscript(mix.transcript);

  const mtssl::SerializedTranscript s = mtssl::Serialize(mix.transcript);
  std::cout << "\nserialized: " << s.ToString() << '\n';
  const mtssl::ChannelTranscripts ch = mtssl::Deserialize(s);
  for (int c = 0; c < 2; ++c) {
    std::cout << "channel " << c << ":";
    for (const auto& w : ch.channels[c]) std::cout << ' ' << w;
    std::cout << '\n';
  }
  return 0;
}
