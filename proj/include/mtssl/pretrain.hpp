// mtssl/pretrain.hpp

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

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mtssl/checkpoint.hpp"
#include "mtssl/encoder.hpp"
#include "mtssl/optim.hpp"

namespace mtssl {

enum class Objective { kMsp, kBiLabel };

inline Objective ParseObjective(const std::string& s) {
  if (s == "msp") return Objective::kMsp;
  if (s == "bilabel") return Objective::kBiLabel;
  throw ConfigError(StrCat("unknown objective '", s, "' (msp | bilabel)"));
}
inline const char* ObjectiveName(Objective o) { return o == Objective::kMsp ? "msp" : "bilabel"; }

inline std::map<std::string, std::string> EncoderConfigEcho(const EncoderConfig& c) {
  return {{"encoder.input_dim", std::to_string(c.input_dim)},
          {"encoder.frontend_channels", std::to_string(c.frontend_channels)},
          {"encoder.model_dim", std::to_string(c.model_dim)},
          {"encoder.num_heads", std::to_string(c.num_heads)},
          {"encoder.ff_dim", std::to_string(c.ff_dim)},
          {"encoder.body_layers", std::to_string(c.body_layers)},
          {"encoder.head_layers", std::to_string(c.head_layers)},
          {"encoder.relpos_clip", std::to_string(c.relpos_clip)}};
}

inline EncoderConfig EncoderConfigFromEcho(const Checkpoint& ck) {
  EncoderConfig c;
  auto get = [&](const char* key, int& field) {
    auto it = ck.config.find(key);
    if (it != ck.config.end()) field = std::stoi(it->second);
  };
  get("encoder.input_dim", c.input_dim);
  get("encoder.frontend_channels", c.frontend_channels);
  get("encoder.model_dim", c.model_dim);
  get("encoder.num_heads", c.num_heads);
  get("encoder.ff_dim", c.ff_dim);
  get("encoder.body_layers", c.body_layers);
  get("encoder.head_layers", c.head_layers);
  get("encoder.relpos_clip", c.relpos_clip);
  return c;
}

/// Prefixes of the tensors that carry over into fine-tuning.
inline const std::vector<std::string>& TransferablePrefixes() {
  static const std::vector<std::string> p = {"frontend.", "body.", "body_norm."};
  return p;
}

/// Encoder with pre-training head layers plus both MSP heads. The secondary
/// head (C+1 outputs, class 0 = blank) exists for either objective; under the
/// single-label objective it receives no gradient.
class PretrainModel {
 public:
  PretrainModel(const EncoderConfig& enc, const MspHeadConfig& head, uint64_t seed) : head_cfg_(head) {
    Rng rng(seed);
    encoder_ = StreamingEncoder(enc, params_, rng, /*with_head_layers=*/true);
    primary_ = MspHead::Create(params_, "msp.primary", enc.model_dim, head.num_classes, head, rng);
    secondary_ = MspHead::Create(params_, "msp.secondary", enc.model_dim, head.num_classes + 1, head, rng);
  }

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const StreamingEncoder& encoder() const { return encoder_; }
  const MspHead& primary_head() const { return primary_; }
  const MspHead& secondary_head() const { return secondary_; }
  const MspHeadConfig& head_config() const { return head_cfg_; }

  ag::Var Encode(const Matrix& features, const AttentionMask& mask, const MaskedSet& masked) const {
    return encoder_.Encode(params_, features, mask, masked);
  }

  MspLoss Loss(Objective objective, const ag::Var& output, const BiLabelStream& targets, const MaskedSet& masked) const {
    if (objective == Objective::kMsp) return MspLossFn(params_, output, targets.primary, masked, primary_);
    return BiLabelMspLossFn(params_, output, targets, masked, primary_, secondary_);
  }

  std::map<std::string, std::string> ConfigEcho(Objective objective) const {
    auto m = EncoderConfigEcho(encoder_.config());
    m["msp.num_classes"] = std::to_string(head_cfg_.num_classes);
    m["msp.embed_dim"] = std::to_string(head_cfg_.embed_dim);
    m["msp.gamma"] = StrCat(head_cfg_.gamma);
    m["pretrain.objective"] = ObjectiveName(objective);
    m["pretrain.body_layers"] = std::to_string(encoder_.config().body_layers);
    m["pretrain.head_layers"] = std::to_string(encoder_.config().head_layers);
    m["pretrain.transferable"] = "frontend.,body.,body_norm.";
    m["pretrain.discarded"] = "mask_embedding,head.,head_norm.,msp.";
    return m;
  }

 private:
  MspHeadConfig head_cfg_;
  ParameterSet params_;
  StreamingEncoder encoder_;
  MspHead primary_, secondary_;
};

struct PretrainExample {
  Matrix features;  // normalized mixture features, T x 80
  BiLabelStream targets;
};

struct PretrainOptions {
  Objective objective = Objective::kBiLabel;
  ChunkMaskConfig chunk;
  MaskSpanConfig spans;
  AdamWOptions adam;
  int steps = 500;
  int batch_size = 8;
  uint64_t seed = 0;
};

struct PretrainStepLog {
  int step = 0;
  double loss = 0.0;  // per masked frame
  double accuracy_primary = 0.0;
  double accuracy_secondary = 0.0;
  double lr = 0.0;
};

struct MaskedAccuracy {
  double primary = 0.0;
  double secondary = 0.0;
  int frames = 0;
};

/// Trains in place. `on_step` (optional) sees every log record.
inline std::vector<PretrainStepLog> Pretrain(PretrainModel& model, const std::vector<PretrainExample>& data,
                                             const PretrainOptions& opt, Rng& rng,
                                             const std::function<void(const PretrainStepLog&)>& on_step = {}) {
  if (data.empty()) throw DataError("pre-training set is empty");
  if (opt.objective == Objective::kBiLabel)
    for (const auto& ex : data)
      if (ex.targets.secondary.size() != ex.targets.primary.size())
        throw ConfigError("bi-label objective needs secondary targets for every example");
  AdamW adam(model.params(), opt.adam);
  std::vector<PretrainStepLog> log;
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  for (int step = 0; step < opt.steps; ++step) {
    std::vector<std::size_t> batch;
    for (int b = 0; b < std::min<int>(opt.batch_size, int(data.size())); ++b) {
      if (cursor == order.size()) {
        order.resize(data.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.UniformInt(0, int64_t(i) - 1)]);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    std::vector<MaskedSet> masks;
    std::size_t total = 0;
    for (std::size_t idx : batch) {
      masks.push_back(SampleMaskSpans(EncoderFrames(data[idx].features.rows()), opt.spans, rng));
      total += masks.back().size();
    }
    PretrainStepLog rec;
    rec.step = step;
    rec.lr = adam.lr();
    int hits = 0, hits_sec = 0;
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& ex = data[batch[b]];
      const AttentionMask s = BuildChunkMask(EncoderFrames(ex.features.rows()), opt.chunk);
      ag::Var out = model.Encode(ex.features, s, masks[b]);
      MspLoss l = model.Loss(opt.objective, out, ex.targets, masks[b]);
      const double value = ag::Scalar(l.loss);
      if (!std::isfinite(value))
        throw NumericalError(StrCat("pre-training loss is ", value, " at step ", step, " (example ", batch[b],
                                    ", lr ", rec.lr, ")"));
      loss_sum += value;
      hits += l.correct;
      hits_sec += l.secondary_correct;
      ag::Backward(l.loss, 1.0 / static_cast<double>(total));
    }
    adam.Step();
    model.params().ZeroGrad();
    rec.loss = loss_sum / double(total);
    rec.accuracy_primary = double(hits) / double(total);
    rec.accuracy_secondary = opt.objective == Objective::kBiLabel ? double(hits_sec) / double(total) : 0.0;
    log.push_back(rec);
    if (on_step) on_step(rec);
  }
  return log;
}

/// Masked-frame label accuracy with freshly drawn masks. For the single-label
/// objective the secondary figure probes the single head against the
/// secondary targets (blank is unreachable for that head).
inline MaskedAccuracy EvaluateMaskedAccuracy(const PretrainModel& model, const std::vector<PretrainExample>& data,
                                             Objective objective, const ChunkMaskConfig& chunk,
                                             const MaskSpanConfig& spans, uint64_t seed) {
  Rng rng(seed);
  int hits = 0, hits_sec = 0, total = 0;
  for (const auto& ex : data) {
    const int frames = EncoderFrames(ex.features.rows());
    const MaskedSet m = SampleMaskSpans(frames, spans, rng);
    ag::Var out = model.Encode(ex.features, BuildChunkMask(frames, chunk), m);
    const Matrix lp_primary = model.primary_head().LogProbs(model.params(), out)->value;
    const Matrix lp_secondary = objective == Objective::kBiLabel
                                    ? model.secondary_head().LogProbs(model.params(), out)->value
                                    : lp_primary;
    for (int t : m.indices) {
      ++total;
      hits += detail::ArgmaxRow(lp_primary, t) + 1 == ex.targets.primary.labels[t];
      if (!ex.targets.secondary.empty()) {
        const int pred = detail::ArgmaxRow(lp_secondary, t) + (objective == Objective::kBiLabel ? 0 : 1);
        hits_sec += pred == ex.targets.secondary[t];
      }
    }
  }
  return {double(hits) / std::max(1, total), double(hits_sec) / std::max(1, total), total};
}

}  // namespace mtssl
