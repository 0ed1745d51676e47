// tests/tsot_test.cpp

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
#include <gtest/gtest.h>

#include "mtssl/tsot.hpp"

namespace mtssl {
namespace {

TimedTranscript PaperStyleExample() {
  return {{"hello", 0.5, "A"}, {"how", 0.9, "A"}, {"are", 1.6, "A"}, {"you", 1.9, "A"},
          {"fine", 1.2, "B"},  {"thank", 2.3, "B"}, {"you", 2.6, "B"}};
}

TEST(Serialize, WorkedTwoSpeakerExample) {
  EXPECT_EQ(Serialize(PaperStyleExample()).ToString(), "hello how <cc> fine <cc> are you <cc> thank you");
}

TEST(Deserialize, WorkedTwoSpeakerExample) {
  const ChannelTranscripts c =
      Deserialize(SerializedTranscript::FromString("hello how <cc> fine <cc> are you <cc> thank you"));
  EXPECT_EQ(c.channels[0], (std::vector<std::string>{"hello", "how", "are", "you"}));
  EXPECT_EQ(c.channels[1], (std::vector<std::string>{"fine", "thank", "you"}));
  EXPECT_EQ(c.repairs, 0);
}

TEST(Serialize, SingleSpeakerHasNoChannelChange) {
  const TimedTranscript t{{"a", 0.1, "S"}, {"b", 0.2, "S"}, {"c", 0.3, "S"}};
  EXPECT_EQ(Serialize(t).ToString(), "a b c");
  const ChannelTranscripts c = Deserialize(Serialize(t));
  EXPECT_EQ(c.channels[0].size(), 3u);
  EXPECT_TRUE(c.channels[1].empty());
}

TEST(Serialize, AbuttingUtterancesGetOneChannelChange) {
  const TimedTranscript t{{"a", 0.1, "X"}, {"b", 0.2, "X"}, {"c", 0.5, "Y"}, {"d", 0.6, "Y"}};
  EXPECT_EQ(Serialize(t).ToString(), "a b <cc> c d");
}

TEST(Serialize, TiesBreakBySpeakerId) {
  const TimedTranscript t{{"y", 1.0, "B"}, {"x", 1.0, "A"}};
  EXPECT_EQ(Serialize(t).ToString(), "x <cc> y");
}

TEST(Serialize, Errors) {
  EXPECT_THROW(Serialize({{"a", 1, "A"}, {"b", 1, "B"}, {"c", 1, "C"}}), DataError);
  EXPECT_THROW(Serialize({{"a", 1, "A"}, {"b", 0.5, "A"}}), DataError);
  EXPECT_THROW(Serialize({{"a", -1, "A"}}), DataError);
}

TEST(Deserialize, RepairsMalformedChannelChanges) {
  const ChannelTranscripts c = Deserialize(SerializedTranscript::FromString("<cc> a <cc> <cc> b <cc>"));
  EXPECT_EQ(c.channels[0], std::vector<std::string>{"a"});
  EXPECT_EQ(c.channels[1], std::vector<std::string>{"b"});
  EXPECT_EQ(c.repairs, 3);
  EXPECT_TRUE(Deserialize({}).channels[0].empty());
}

TimedTranscript RandomTranscript(Rng& rng) {
  TimedTranscript out;
  const int speakers = int(rng.UniformInt(1, 2));
  for (int s = 0; s < speakers; ++s) {
    double t = rng.Uniform(0, 2);
    const int n = int(rng.UniformInt(0, 8));
    for (int i = 0; i < n; ++i) {
      // coarse grid so cross-speaker ties occur
      t += 0.1 * double(rng.UniformInt(1, 4));
      out.push_back({std::string(1, char('a' + rng.UniformInt(0, 5))), t, s == 0 ? "s1" : "s2"});
    }
  }
  return out;
}

TEST(RoundTrip, RecoversSpeakerStreamsAndCountsChanges) {
  Rng rng(42);
  for (int trial = 0; trial < 1000; ++trial) {
    const TimedTranscript x = RandomTranscript(rng);
    const SerializedTranscript s = Serialize(x);
    const ChannelTranscripts c = Deserialize(s);
    const auto by_speaker = TokensBySpeaker(x);
    std::vector<std::vector<std::string>> want;
    for (const auto& [_, toks] : by_speaker) want.push_back(toks);
    want.resize(2);
    const bool direct = c.channels[0] == want[0] && c.channels[1] == want[1];
    const bool swapped = c.channels[0] == want[1] && c.channels[1] == want[0];
    ASSERT_TRUE(direct || swapped) << s.ToString();
    EXPECT_EQ(c.repairs, 0);

    // token count == input count + speaker changes in end-time order
    int changes = 0;
    for (std::size_t i = 1; i < s.tokens.size(); ++i) changes += s.tokens[i] == kChannelChange;
    EXPECT_EQ(s.tokens.size(), x.size() + changes);
    if (!s.tokens.empty()) {
      EXPECT_NE(s.tokens.front(), kChannelChange);
      EXPECT_NE(s.tokens.back(), kChannelChange);
    }
  }
}

TEST(StreamingDeserializer, PrefixOfOutputIsPrefixOfResult) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const SerializedTranscript s = Serialize(RandomTranscript(rng));
    const ChannelTranscripts full = Deserialize(s);
    StreamingDeserializer d;
    for (const auto& tok : s.tokens) {
      d.Push(tok);
      const ChannelTranscripts part = d.Snapshot();
      for (int ch = 0; ch < 2; ++ch) {
        ASSERT_LE(part.channels[ch].size(), full.channels[ch].size());
        EXPECT_TRUE(std::equal(part.channels[ch].begin(), part.channels[ch].end(), full.channels[ch].begin()));
      }
    }
  }
}

TEST(TimedTranscriptFile, FormatAndParse) {
  const TimedTranscript t{{"hello", 0.5, "A"}, {"fine", 1.25, "B"}};
  const std::string text = FormatTimedTranscript(t);
  EXPECT_EQ(text, "hello 0.500 A\nfine 1.250 B\n");
  EXPECT_EQ(ParseTimedTranscript(text), t);
  EXPECT_THROW(ParseTimedTranscript("oops\n"), DataError);
}

}  // namespace
}  // namespace mtssl
