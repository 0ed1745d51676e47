// mtssl/eval.hpp

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
#include <cctype>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "mtssl/common.hpp"

namespace mtssl {

using TokenSeq = std::vector<std::string>;

struct WerReport {
  int substitutions = 0;
  int deletions = 0;
  int insertions = 0;
  int reference_length = 0;

  int errors() const { return substitutions + deletions + insertions; }
  /// (S+D+I)/N. With an empty reference: 0 when there are no errors, +inf
  /// otherwise; pooled reports are the meaningful number in that case.
  double wer() const {
    if (reference_length == 0) return errors() == 0 ? 0.0 : std::numeric_limits<double>::infinity();
    return static_cast<double>(errors()) / reference_length;
  }
  WerReport& operator+=(const WerReport& o) {
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    reference_length += o.reference_length;
    return *this;
  }
};

/// Uppercase, strip punctuation, collapse whitespace, split on spaces.
/// Angle-bracket tokens such as <cc> are dropped.
inline TokenSeq NormalizeText(const std::string& text) {
  TokenSeq out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && !(cur.front() == '<' && cur.back() == '>')) {
      std::string clean;
      for (char c : cur)
        if (!std::ispunct(static_cast<unsigned char>(c)) || c == '\'')
          clean.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
      if (!clean.empty()) out.push_back(clean);
    }
    cur.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c)))
      flush();
    else
      cur.push_back(c);
  }
  flush();
  return out;
}

/// Levenshtein alignment; among equal-cost alignments the backtrace prefers a
/// substitution (or match), then a deletion, then an insertion.
inline WerReport EditDistanceWer(const TokenSeq& hyp, const TokenSeq& ref) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<int> cost((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> int& { return cost[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1), at(i - 1, j) + 1,
                           at(i, j - 1) + 1});

  WerReport r;
  r.reference_length = static_cast<int>(n);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const int sub = ref[i - 1] == hyp[j - 1] ? 0 : 1;
      if (at(i, j) == at(i - 1, j - 1) + sub) {
        r.substitutions += sub;
        --i, --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++r.deletions;
      --i;
    } else {
      ++r.insertions;
      --j;
    }
  }
  return r;
}

inline constexpr int kMaxPermutationChannels = 4;

struct PermutationResult {
  /// assignment[r] = hypothesis channel matched with reference r (after padding).
  std::vector<int> assignment;
  std::vector<WerReport> per_pair;
  WerReport pooled;
};

/// Multi-talker WER: pads channels/references with empty sequences to a common
/// K and picks the hypothesis-to-reference assignment with the fewest errors
/// (first permutation in lexicographic order on ties).
inline PermutationResult PermutationWer(std::vector<TokenSeq> hyps, std::vector<TokenSeq> refs) {
  const std::size_t k = std::max(hyps.size(), refs.size());
  if (k > static_cast<std::size_t>(kMaxPermutationChannels))
    throw ConfigError(StrCat("permutation WER supports at most ", kMaxPermutationChannels,
                             " channels, got ", k));
  hyps.resize(k);
  refs.resize(k);

  std::vector<std::vector<WerReport>> table(k, std::vector<WerReport>(k));
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t h = 0; h < k; ++h) table[r][h] = EditDistanceWer(hyps[h], refs[r]);

  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  PermutationResult best;
  int best_errors = std::numeric_limits<int>::max();
  do {
    int errors = 0;
    for (std::size_t r = 0; r < k; ++r) errors += table[r][perm[r]].errors();
    if (errors < best_errors) {
      best_errors = errors;
      best.assignment = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  for (std::size_t r = 0; r < k; ++r) {
    best.per_pair.push_back(table[r][best.assignment[r]]);
    best.pooled += best.per_pair.back();
  }
  return best;
}

}  // namespace mtssl
