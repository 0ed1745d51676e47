// mtssl/encoder.hpp

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

// Streaming transformer encoder: a 2-layer strided frontend (x4 in time), a
// stack of pre-norm transformer layers attending under a chunk mask with a
// clipped learned relative-position bias, and cosine-similarity MSP heads.

#include <string>
#include <vector>

#include "mtssl/autograd.hpp"
#include "mtssl/common.hpp"
#include "mtssl/params.hpp"
#include "mtssl/quantizer.hpp"
#include "mtssl/streammask.hpp"

namespace mtssl {

struct EncoderConfig {
  int input_dim = kNumMelBins;
  int frontend_channels = 128;
  int model_dim = 128;
  int num_heads = 4;
  int ff_dim = 512;
  int body_layers = 4;
  int head_layers = 2;  // pre-training only; discarded for fine-tuning
  int relpos_clip = 16;

  static constexpr int kDownsample = 4;

  int num_layers() const { return body_layers + head_layers; }
  int head_dim() const { return model_dim / num_heads; }

  void Validate() const {
    if (input_dim < 1 || frontend_channels < 1 || model_dim < 1 || ff_dim < 1 || relpos_clip < 0)
      throw ConfigError("encoder dimensions must be positive");
    if (num_heads < 1 || model_dim % num_heads != 0)
      throw ConfigError(StrCat("model_dim ", model_dim, " not divisible by num_heads ", num_heads));
    if (body_layers < 1 || head_layers < 0) throw ConfigError("encoder needs at least one body layer");
  }
};

struct MspHeadConfig {
  int num_classes = 500;  // C
  int embed_dim = 64;
  double gamma = 0.1;
};

inline int EncoderFrames(Eigen::Index feature_frames) {
  return static_cast<int>((feature_frames + EncoderConfig::kDownsample - 1) / EncoderConfig::kDownsample);
}

namespace detail {
inline void AddLayerNorm(ParameterSet& ps, const std::string& name, int dim) {
  ps.Add(name + ".gain", Matrix::Ones(1, dim));
  ps.Add(name + ".bias", Matrix::Zero(1, dim));
}
inline ag::Var ApplyLayerNorm(const ParameterSet& ps, const std::string& name, const ag::Var& x) {
  return ag::LayerNorm(x, ps.Get(name + ".gain"), ps.Get(name + ".bias"));
}
}  // namespace detail

/// Adds the parameters of one transformer layer under `prefix`.
inline void AddTransformerLayer(ParameterSet& ps, const std::string& prefix, const EncoderConfig& cfg, Rng& rng) {
  const int d = cfg.model_dim, dh = cfg.head_dim();
  detail::AddLayerNorm(ps, prefix + ".attn_norm", d);
  for (int h = 0; h < cfg.num_heads; ++h) {
    const std::string hp = StrCat(prefix, ".attn.", h);
    ps.AddGaussian(hp + ".query", d, dh, rng);
    ps.AddGaussian(hp + ".key", d, dh, rng);
    ps.AddGaussian(hp + ".value", d, dh, rng);
    ps.AddGaussian(hp + ".out", dh, d, rng, 1.0 / std::sqrt(double(cfg.num_heads)));
    ps.Add(hp + ".relpos", Matrix::Zero(1, 2 * cfg.relpos_clip + 1));
  }
  ps.Add(prefix + ".attn.out_bias", Matrix::Zero(1, d));
  detail::AddLayerNorm(ps, prefix + ".ff_norm", d);
  ps.AddGaussian(prefix + ".ff.w1", d, cfg.ff_dim, rng);
  ps.Add(prefix + ".ff.b1", Matrix::Zero(1, cfg.ff_dim));
  ps.AddGaussian(prefix + ".ff.w2", cfg.ff_dim, d, rng);
  ps.Add(prefix + ".ff.b2", Matrix::Zero(1, d));
}

inline ag::Var TransformerLayer(const ParameterSet& ps, const std::string& prefix, const EncoderConfig& cfg,
                                const ag::Var& x, const AttentionMask& mask) {
  const int t = static_cast<int>(x->rows());
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
  ag::Var y = detail::ApplyLayerNorm(ps, prefix + ".attn_norm", x);
  ag::Var attn;
  for (int h = 0; h < cfg.num_heads; ++h) {
    const std::string hp = StrCat(prefix, ".attn.", h);
    ag::Var q = ag::MatMul(y, ps.Get(hp + ".query"));
    ag::Var k = ag::MatMul(y, ps.Get(hp + ".key"));
    ag::Var v = ag::MatMul(y, ps.Get(hp + ".value"));
    ag::Var scores = ag::Add(ag::Scale(ag::MatMulT(q, k), scale), ag::RelativePositionBias(ps.Get(hp + ".relpos"), t));
    ag::Var head = ag::MatMul(ag::MatMul(ag::MaskedSoftmaxRows(scores, mask), v), ps.Get(hp + ".out"));
    attn = attn ? ag::Add(attn, head) : head;
  }
  ag::Var x1 = ag::Add(x, ag::AddRow(attn, ps.Get(prefix + ".attn.out_bias")));
  ag::Var z = detail::ApplyLayerNorm(ps, prefix + ".ff_norm", x1);
  z = ag::Gelu(ag::AddRow(ag::MatMul(z, ps.Get(prefix + ".ff.w1")), ps.Get(prefix + ".ff.b1")));
  z = ag::AddRow(ag::MatMul(z, ps.Get(prefix + ".ff.w2")), ps.Get(prefix + ".ff.b2"));
  return ag::Add(x1, z);
}

/// Frontend + body (+ optional pre-training head layers). Parameters live in a
/// shared ParameterSet so the transducer can own the same tensors.
class StreamingEncoder {
 public:
  StreamingEncoder() = default;
  StreamingEncoder(const EncoderConfig& cfg, ParameterSet& ps, Rng& rng, bool with_head_layers)
      : cfg_(cfg), with_head_(with_head_layers) {
    cfg_.Validate();
    ps.AddGaussian("frontend.conv1.weight", 2 * cfg_.input_dim, cfg_.frontend_channels, rng);
    ps.Add("frontend.conv1.bias", Matrix::Zero(1, cfg_.frontend_channels));
    ps.AddGaussian("frontend.conv2.weight", 2 * cfg_.frontend_channels, cfg_.model_dim, rng);
    ps.Add("frontend.conv2.bias", Matrix::Zero(1, cfg_.model_dim));
    {
      Matrix m(1, cfg_.model_dim);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.Normal();
      ps.Add("mask_embedding", std::move(m));
    }
    for (int l = 0; l < cfg_.body_layers; ++l) AddTransformerLayer(ps, StrCat("body.", l), cfg_, rng);
    detail::AddLayerNorm(ps, "body_norm", cfg_.model_dim);
    if (with_head_) {
      for (int l = 0; l < cfg_.head_layers; ++l) AddTransformerLayer(ps, StrCat("head.", l), cfg_, rng);
      detail::AddLayerNorm(ps, "head_norm", cfg_.model_dim);
    }
  }

  const EncoderConfig& config() const { return cfg_; }
  bool with_head_layers() const { return with_head_; }
  int num_attention_layers() const { return cfg_.body_layers + (with_head_ ? cfg_.head_layers : 0); }

  /// Two kernel-2 stride-2 layers: encoder frame t sees feature frames [4t, 4t+4).
  ag::Var Frontend(const ParameterSet& ps, const Matrix& features) const {
    if (features.cols() != cfg_.input_dim)
      throw ShapeError(StrCat("encoder expects ", cfg_.input_dim, "-dim features, got ", features.cols()));
    if (features.rows() < 1) throw ShapeError("encoder input has no frames");
    ag::Var x = ag::Constant(features);
    x = ag::Gelu(ag::AddRow(ag::MatMul(ag::StackFrames(x, 2), ps.Get("frontend.conv1.weight")),
                            ps.Get("frontend.conv1.bias")));
    x = ag::AddRow(ag::MatMul(ag::StackFrames(x, 2), ps.Get("frontend.conv2.weight")), ps.Get("frontend.conv2.bias"));
    return x;
  }

  /// Representations at the encoder frame rate. `mask` must be built for
  /// EncoderFrames(features.rows()); frames in `masked` are replaced by the
  /// learned mask embedding before the transformer stack.
  ag::Var Encode(const ParameterSet& ps, const Matrix& features, const AttentionMask& mask,
                 const MaskedSet& masked = {}) const {
    ag::Var x = Frontend(ps, features);
    if (mask.size() != x->rows())
      throw ShapeError(StrCat("attention mask is ", mask.size(), "x", mask.size(), " but encoder has ", x->rows(),
                              " frames"));
    for (int t : masked.indices)
      if (t < 0 || t >= x->rows()) throw ShapeError(StrCat("masked frame ", t, " out of range"));
    if (!masked.empty()) x = ag::ReplaceRows(x, ps.Get("mask_embedding"), masked.indices);
    for (int l = 0; l < cfg_.body_layers; ++l) x = TransformerLayer(ps, StrCat("body.", l), cfg_, x, mask);
    x = detail::ApplyLayerNorm(ps, "body_norm", x);
    if (with_head_) {
      for (int l = 0; l < cfg_.head_layers; ++l) x = TransformerLayer(ps, StrCat("head.", l), cfg_, x, mask);
      x = detail::ApplyLayerNorm(ps, "head_norm", x);
    }
    return x;
  }

 private:
  EncoderConfig cfg_;
  bool with_head_ = true;
};

// ---------------------------------------------------------------------------
// Masked speech prediction heads.

/// One cosine-similarity head: W^P projection, per-class embeddings and
/// temperature gamma.
struct MspHead {
  std::string prefix;
  int num_outputs = 0;
  double gamma = 0.1;

  static MspHead Create(ParameterSet& ps, const std::string& prefix, int model_dim, int num_outputs,
                        const MspHeadConfig& cfg, Rng& rng) {
    if (!(cfg.gamma > 0)) throw ConfigError("MSP temperature must be > 0");
    ps.AddGaussian(prefix + ".proj", model_dim, cfg.embed_dim, rng);
    Matrix emb(num_outputs, cfg.embed_dim);
    for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] = rng.Normal();
    ps.Add(prefix + ".emb", std::move(emb));
    return {prefix, num_outputs, cfg.gamma};
  }

  /// log p(c | o_t) for every row of `o`.
  ag::Var LogProbs(const ParameterSet& ps, const ag::Var& o) const {
    return ag::LogSoftmaxRows(ag::CosineLogits(ag::MatMul(o, ps.Get(prefix + ".proj")), ps.Get(prefix + ".emb"), gamma));
  }
};

/// p(c | o) for a single frame, as a plain vector.
inline Vector MspDistribution(const ParameterSet& ps, const MspHead& head, const Eigen::RowVectorXd& o) {
  ag::Var lp = head.LogProbs(ps, ag::Constant(Matrix(o)));
  return lp->value.row(0).array().exp().matrix().transpose();
}

struct MspLoss {
  ag::Var loss;  // 1x1 sum over masked frames
  bool empty_mask = false;
  int frames = 0;
  int correct = 0;         // primary (or single) head argmax hits
  int secondary_correct = 0;
};

namespace detail {
inline int ArgmaxRow(const Matrix& m, int r) {
  Eigen::Index c;
  m.row(r).maxCoeff(&c);
  return static_cast<int>(c);
}
}  // namespace detail

/// sum_{t in M} -log p(r_t | o_t); labels are in {1..C}, head class = label - 1.
inline MspLoss MspLossFn(const ParameterSet& ps, const ag::Var& output, const LabelStream& labels,
                         const MaskedSet& masked, const MspHead& head) {
  if (labels.size() != static_cast<std::size_t>(output->rows()))
    throw ShapeError(StrCat("MSP loss: ", labels.size(), " labels vs ", output->rows(), " frames"));
  MspLoss r;
  if (masked.empty()) {
    r.loss = ag::Constant(Matrix::Zero(1, 1));
    r.empty_mask = true;
    return r;
  }
  ag::Var lp = head.LogProbs(ps, output);
  std::vector<int> classes;
  for (int t : masked.indices) {
    const int c = labels.labels[t] - 1;
    if (c < 0 || c >= head.num_outputs) throw DataError(StrCat("label ", labels.labels[t], " outside head range"));
    classes.push_back(c);
    r.correct += detail::ArgmaxRow(lp->value, t) == c;
  }
  r.frames = static_cast<int>(masked.size());
  r.loss = ag::PickNll(lp, masked.indices, classes);
  return r;
}

/// Sum of the primary-head and secondary-head cross-entropies over M. Node
/// roles are fixed: primary head <- primary labels, secondary head <- secondary
/// labels with class 0 = blank.
inline MspLoss BiLabelMspLossFn(const ParameterSet& ps, const ag::Var& output, const BiLabelStream& targets,
                                const MaskedSet& masked, const MspHead& primary, const MspHead& secondary) {
  if (targets.secondary.size() != targets.primary.size())
    throw ShapeError("bi-label targets: primary/secondary length mismatch");
  MspLoss r = MspLossFn(ps, output, targets.primary, masked, primary);
  if (r.empty_mask) return r;
  ag::Var lp = secondary.LogProbs(ps, output);
  std::vector<int> classes;
  for (int t : masked.indices) {
    const int c = targets.secondary[t];
    if (c < 0 || c >= secondary.num_outputs) throw DataError(StrCat("secondary label ", c, " outside head range"));
    classes.push_back(c);
    r.secondary_correct += detail::ArgmaxRow(lp->value, t) == c;
  }
  r.loss = ag::Add(r.loss, ag::PickNll(lp, masked.indices, classes));
  return r;
}

}  // namespace mtssl
