// mtssl/tsot.hpp

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
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mtssl/common.hpp"

namespace mtssl {

inline const std::string kChannelChange = "<cc>";

struct TimedToken {
  std::string token;
  double end_time = 0.0;  // seconds
  std::string speaker_id;

  bool operator==(const TimedToken&) const = default;
};

using TimedTranscript = std::vector<TimedToken>;

struct SerializedTranscript {
  std::vector<std::string> tokens;

  std::string ToString() const {
    std::string s;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) s += ' ';
      s += tokens[i];
    }
    return s;
  }
  static SerializedTranscript FromString(const std::string& text) {
    SerializedTranscript out;
    std::istringstream is(text);
    for (std::string tok; is >> tok;) out.tokens.push_back(tok);
    return out;
  }
  bool operator==(const SerializedTranscript&) const = default;
};

struct ChannelTranscripts {
  std::array<std::vector<std::string>, 2> channels;
  int repairs = 0;  // redundant <cc> tokens dropped while deserializing
};

/// Per-speaker token sequences in order of appearance, keyed by speaker id.
inline std::map<std::string, std::vector<std::string>> TokensBySpeaker(const TimedTranscript& tokens) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& t : tokens) out[t.speaker_id].push_back(t.token);
  return out;
}

inline void ValidateTimedTranscript(const TimedTranscript& tokens) {
  std::map<std::string, double> last_end;
  for (const auto& t : tokens) {
    if (!(t.end_time >= 0.0)) throw DataError(StrCat("token '", t.token, "' has negative end time"));
    if (t.token == kChannelChange) throw DataError("timed transcript may not contain <cc>");
    auto it = last_end.find(t.speaker_id);
    if (it != last_end.end() && !(t.end_time > it->second))
      throw DataError(StrCat("end times of speaker ", t.speaker_id, " not strictly increasing at '",
                             t.token, "'"));
    last_end[t.speaker_id] = t.end_time;
  }
}

/// Orders tokens by end time (ties: speaker id, then per-speaker order) and
/// inserts <cc> between adjacent tokens of different speakers.
inline SerializedTranscript Serialize(const TimedTranscript& tokens) {
  ValidateTimedTranscript(tokens);
  if (TokensBySpeaker(tokens).size() > 2)
    throw DataError("serialization supports at most two speakers (two virtual channels)");

  std::vector<std::size_t> order(tokens.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (tokens[a].end_time != tokens[b].end_time) return tokens[a].end_time < tokens[b].end_time;
    return tokens[a].speaker_id < tokens[b].speaker_id;
  });

  SerializedTranscript out;
  const std::string* prev_speaker = nullptr;
  for (std::size_t idx : order) {
    if (prev_speaker && *prev_speaker != tokens[idx].speaker_id) out.tokens.push_back(kChannelChange);
    out.tokens.push_back(tokens[idx].token);
    prev_speaker = &tokens[idx].speaker_id;
  }
  return out;
}

/// Left-fold deserializer: push tokens as they are decoded; channel contents
/// after k pushes equal the deserialization of the first k tokens.
class StreamingDeserializer {
 public:
  void Push(const std::string& token) {
    if (token == kChannelChange) {
      // leading or repeated <cc> carries no channel change
      if (!seen_token_ || pending_change_) {
        ++result_.repairs;
        return;
      }
      pending_change_ = true;
      return;
    }
    if (pending_change_) {
      active_ ^= 1;
      pending_change_ = false;
    }
    seen_token_ = true;
    result_.channels[active_].push_back(token);
  }

  /// Current channels. A trailing <cc> is still pending and is counted as a
  /// repair in the returned snapshot.
  ChannelTranscripts Snapshot() const {
    ChannelTranscripts out = result_;
    if (pending_change_) ++out.repairs;
    return out;
  }

 private:
  ChannelTranscripts result_;
  int active_ = 0;
  bool seen_token_ = false;
  bool pending_change_ = false;
};

inline ChannelTranscripts Deserialize(const SerializedTranscript& s) {
  StreamingDeserializer d;
  for (const auto& tok : s.tokens) d.Push(tok);
  return d.Snapshot();
}

// ---------------------------------------------------------------------------
// Timed transcript file: one token per line, "<token> <end_time> <speaker_id>".

inline std::string FormatTimedTranscript(const TimedTranscript& tokens) {
  std::string out;
  char buf[64];
  for (const auto& t : tokens) {
    std::snprintf(buf, sizeof buf, "%.3f", t.end_time);
    out += t.token + ' ' + buf + ' ' + t.speaker_id + '\n';
  }
  return out;
}

inline TimedTranscript ParseTimedTranscript(const std::string& text) {
  TimedTranscript out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    TimedToken t;
    if (!(ls >> t.token >> t.end_time >> t.speaker_id))
      throw DataError(StrCat("malformed timed transcript line ", lineno, ": '", line, "'"));
    out.push_back(std::move(t));
  }
  return out;
}

inline TimedTranscript ReadTimedTranscript(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(StrCat("cannot open ", path));
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseTimedTranscript(ss.str());
}

inline void WriteTimedTranscript(const std::string& path, const TimedTranscript& tokens) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(StrCat("cannot write ", path));
  out << FormatTimedTranscript(tokens);
}

}  // namespace mtssl
