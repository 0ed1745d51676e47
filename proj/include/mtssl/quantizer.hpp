// mtssl/quantizer.hpp

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

#include <cstring>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mtssl/common.hpp"
#include "mtssl/featext.hpp"
#include "mtssl/mixer.hpp"

namespace mtssl {

inline constexpr int kLabelDownsample = 4;
inline constexpr int kBlankLabel = 0;

struct Codebook {
  Matrix centroids;  // C x D

  int size() const { return static_cast<int>(centroids.rows()); }
  Eigen::Index dim() const { return centroids.cols(); }
};

/// Pseudo labels in {1..C} at the encoder frame rate.
struct LabelStream {
  std::vector<int> labels;
  int num_classes = 0;
  double frame_ms = 40.0;

  std::size_t size() const { return labels.size(); }
  bool operator==(const LabelStream&) const = default;
};

/// Primary labels in {1..C}; secondary labels in {0..C} with 0 = blank.
struct BiLabelStream {
  LabelStream primary;
  std::vector<int> secondary;
};

struct KMeansOptions {
  int num_clusters = 500;
  int max_iterations = 20;
  double rel_tolerance = 1e-7;
  uint64_t seed = 0;
};

struct KMeansResult {
  Codebook codebook;
  /// inertia[0] is measured after initialization, inertia[i] after update i.
  std::vector<double> inertia;
};

namespace detail {
/// Index of the nearest centroid (lowest index on ties) and its squared distance.
inline std::pair<int, double> Nearest(const Matrix& centroids, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return {best, best_d};
}
}  // namespace detail

inline double Inertia(const Matrix& points, const Matrix& centroids) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) total += detail::Nearest(centroids, points.row(i)).second;
  return total;
}

/// Lloyd iterations from a k-means++ seeding. Empty clusters keep their
/// previous centroid, so inertia never increases.
inline KMeansResult TrainKMeans(const Matrix& points, const KMeansOptions& opt) {
  const Eigen::Index n = points.rows(), k = opt.num_clusters;
  if (k < 2) throw ConfigError("codebook needs at least 2 clusters");
  if (n < k) throw DataError(StrCat("k-means needs at least C=", k, " frames, got ", n));
  Rng rng(opt.seed);

  Matrix centroids(k, points.cols());
  centroids.row(0) = points.row(rng.UniformInt(0, n - 1));
  Vector d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = (points.row(i) - centroids.row(0)).squaredNorm();
  for (Eigen::Index c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0) {
      const double r = rng.Uniform() * total;
      double acc = 0.0;
      pick = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (d2[i] <= 0) continue;
        acc += d2[i];
        pick = i;
        if (acc > r) break;
      }
    } else {
      pick = rng.UniformInt(0, n - 1);
    }
    centroids.row(c) = points.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (points.row(i) - centroids.row(c)).squaredNorm());
  }

  KMeansResult result;
  std::vector<int> assign(n);
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto [c, d] = detail::Nearest(centroids, points.row(i));
    assign[i] = c;
    inertia += d;
  }
  result.inertia.push_back(inertia);

  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<int> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += points.row(i);
      ++counts[assign[i]];
    }
    for (Eigen::Index c = 0; c < k; ++c)
      if (counts[c] > 0) centroids.row(c) = sums.row(c) / counts[c];

    double next = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto [c, d] = detail::Nearest(centroids, points.row(i));
      assign[i] = c;
      next += d;
    }
    result.inertia.push_back(next);
    const double prev = inertia;
    inertia = next;
    if (prev <= 0.0 || (prev - next) / prev < opt.rel_tolerance) break;
  }
  result.codebook.centroids = std::move(centroids);
  return result;
}

inline KMeansResult TrainKMeans(std::span<const FeatureSequence> corpus, const KMeansOptions& opt) {
  Eigen::Index rows = 0;
  for (const auto& f : corpus) rows += f.num_frames();
  if (corpus.empty()) throw DataError("k-means needs a non-empty corpus");
  Matrix all(rows, corpus.front().dim());
  Eigen::Index r = 0;
  for (const auto& f : corpus) {
    if (f.dim() != all.cols()) throw ShapeError("feature dims differ across corpus");
    all.middleRows(r, f.num_frames()) = f.frames;
    r += f.num_frames();
  }
  return TrainKMeans(all, opt);
}

/// Nearest-centroid label in {1..C} for every feature frame.
inline std::vector<int> AssignFrameLabels(const FeatureSequence& features, const Codebook& codebook) {
  if (features.dim() != codebook.dim())
    throw ShapeError(StrCat("feature dim ", features.dim(), " vs codebook dim ", codebook.dim()));
  std::vector<int> out(features.num_frames());
  for (Eigen::Index t = 0; t < features.num_frames(); ++t)
    out[t] = detail::Nearest(codebook.centroids, features.frames.row(t)).first + 1;
  return out;
}

/// First element of every group of `factor`.
template <typename T>
std::vector<T> DownsampleFirst(const std::vector<T>& v, int factor = kLabelDownsample) {
  std::vector<T> out((v.size() + factor - 1) / factor);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i * factor];
  return out;
}

inline LabelStream AssignLabels(const FeatureSequence& features, const Codebook& codebook) {
  return {DownsampleFirst(AssignFrameLabels(features, codebook)), codebook.size(), 40.0};
}

// ---------------------------------------------------------------------------
// Label stream files. Text: one integer per line. Binary:
//   "MTLB" | u32 version (1) | u32 count | count x i32 (little-endian)

enum class LabelFormat { kText, kBinary };

inline void ValidateLabels(const LabelStream& s) {
  for (std::size_t i = 0; i < s.labels.size(); ++i)
    if (s.labels[i] < 1 || s.labels[i] > s.num_classes)
      throw DataError(StrCat("label ", s.labels[i], " at index ", i, " outside 1..", s.num_classes));
}

inline std::string EncodeLabels(const LabelStream& s, LabelFormat format) {
  std::string out;
  if (format == LabelFormat::kText) {
    for (int l : s.labels) out += std::to_string(l) + '\n';
    return out;
  }
  out = "MTLB";
  detail::PutLe32(out, 1);
  detail::PutLe32(out, static_cast<uint32_t>(s.labels.size()));
  for (int l : s.labels) detail::PutLe32(out, static_cast<uint32_t>(l));
  return out;
}

inline LabelStream DecodeLabels(const std::string& bytes, int num_classes, LabelFormat format) {
  LabelStream s;
  s.num_classes = num_classes;
  if (format == LabelFormat::kText) {
    std::istringstream is(bytes);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::size_t used = 0;
      int v = 0;
      try {
        v = std::stoi(line, &used);
      } catch (const std::exception&) {
        throw DataError(StrCat("non-integer label at index ", s.labels.size()));
      }
      if (used != line.size()) throw DataError(StrCat("trailing junk after label at index ", s.labels.size()));
      s.labels.push_back(v);
    }
  } else {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 12 || std::memcmp(p, "MTLB", 4) != 0) throw DataError("bad label file magic");
    if (detail::ReadLe32(p + 4) != 1) throw DataError("unsupported label file version");
    const uint32_t n = detail::ReadLe32(p + 8);
    if (bytes.size() != 12 + std::size_t(n) * 4) throw DataError("label file size mismatch");
    for (uint32_t i = 0; i < n; ++i) s.labels.push_back(static_cast<int32_t>(detail::ReadLe32(p + 12 + 4 * i)));
  }
  ValidateLabels(s);
  return s;
}

inline LabelStream ImportLabels(const std::string& path, int num_classes, LabelFormat format = LabelFormat::kText) {
  return DecodeLabels(detail::ReadFile(path), num_classes, format);
}
inline void ExportLabels(const std::string& path, const LabelStream& s, LabelFormat format = LabelFormat::kText) {
  detail::WriteFile(path, EncodeLabels(s, format));
}

inline void WriteCodebook(const std::string& path, const Codebook& cb) {
  detail::WriteFile(path, EncodeContainer(ContainerKind::kCodebook, cb.centroids));
}
inline Codebook ReadCodebook(const std::string& path) {
  return {DecodeContainer(ContainerKind::kCodebook, detail::ReadFile(path))};
}

// ---------------------------------------------------------------------------
// Bi-label targets.

/// `secondary_clean` holds features of the clean secondary segment placed at
/// its insert offset in an otherwise silent signal of primary length (see
/// PlaceSecondary), so all three inputs share one frame axis.
inline BiLabelStream BuildBiLabelTargets(const FeatureSequence& primary_clean,
                                         const FeatureSequence& secondary_clean, const MixSpec& spec,
                                         const PresenceMask& mask, const Codebook& codebook) {
  if (primary_clean.num_frames() != static_cast<Eigen::Index>(mask.size()) ||
      secondary_clean.num_frames() != primary_clean.num_frames())
    throw ShapeError(StrCat("bi-label alignment: primary ", primary_clean.num_frames(), ", secondary ",
                            secondary_clean.num_frames(), ", mask ", mask.size(), " frames"));
  BiLabelStream out;
  out.primary = AssignLabels(primary_clean, codebook);
  std::vector<int> sec(mask.size(), kBlankLabel);
  if (spec.kind == MixKind::kSpeech) {
    const std::vector<int> labels = AssignFrameLabels(secondary_clean, codebook);
    for (std::size_t t = 0; t < mask.size(); ++t)
      if (mask.active[t]) sec[t] = labels[t];
  }
  out.secondary = DownsampleFirst(sec);
  return out;
}

/// Bi-label targets from imported encoder-rate streams of both sources: the
/// secondary label at mixture frame t is read from the secondary source at
/// t - offset + segment_start (in encoder frames).
inline BiLabelStream BuildBiLabelTargetsImported(const LabelStream& primary, const LabelStream& secondary,
                                                 const MixSpec& spec, const PresenceMask& mask) {
  const std::vector<uint8_t> active = DownsampleMask(mask);
  if (active.size() != primary.size())
    throw ShapeError(StrCat("imported labels: ", primary.size(), " primary frames vs ", active.size(),
                            " mask frames"));
  BiLabelStream out;
  out.primary = primary;
  out.secondary.assign(active.size(), kBlankLabel);
  if (spec.kind != MixKind::kSpeech) return out;
  constexpr int64_t kSamplesPerLabel = int64_t(kFrameShift) * kLabelDownsample;
  for (std::size_t t = 0; t < active.size(); ++t) {
    if (!active[t]) continue;
    const int64_t src = (int64_t(t) * kSamplesPerLabel - spec.insert_offset + spec.segment_start) / kSamplesPerLabel;
    out.secondary[t] = secondary.labels[std::clamp<int64_t>(src, 0, int64_t(secondary.size()) - 1)];
  }
  return out;
}

}  // namespace mtssl
