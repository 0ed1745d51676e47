// mtssl/transducer.hpp

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

// Transformer transducer: transducer loss by log-domain forward/backward over
// the T x (U+1) lattice, an LSTM prediction network, an additive joint
// network and greedy streaming decoding.

#include <algorithm>
#include <concepts>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mtssl/autograd.hpp"
#include "mtssl/checkpoint.hpp"
#include "mtssl/encoder.hpp"
#include "mtssl/optim.hpp"
#include "mtssl/pretrain.hpp"
#include "mtssl/tsot.hpp"

namespace mtssl {

inline constexpr int kBlankId = 0;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Read-only view of per-cell log-probabilities; row t * U1 + u holds the
/// distribution over K = V + 1 outputs at lattice node (t, u).
struct LogProbLattice {
  int frames = 0;  // T'
  int nodes = 0;   // U + 1
  int outputs = 0; // V + 1 (blank = 0)
  const Matrix* data = nullptr;

  double operator()(int t, int u, int k) const { return (*data)(Eigen::Index(t) * nodes + u, k); }

  static LogProbLattice Of(const Matrix& m, int frames, int nodes) {
    if (m.rows() != Eigen::Index(frames) * nodes)
      throw ShapeError(StrCat("lattice has ", m.rows(), " rows, expected ", frames, "x", nodes));
    return {frames, nodes, static_cast<int>(m.cols()), &m};
  }
};

struct TransducerTrellis {
  Matrix alpha;  // T' x (U+1)
  Matrix beta;   // T' x (U+1)
  double forward_loglik = kNegInf;
  double backward_loglik = kNegInf;
};

inline void CheckTransducerInputs(const LogProbLattice& lp, const std::vector<int>& targets, double tol = 1e-5) {
  if (lp.frames < 1) throw ShapeError("transducer loss needs at least one frame");
  if (lp.nodes != static_cast<int>(targets.size()) + 1) throw ShapeError("lattice width must be U + 1");
  for (int y : targets)
    if (y <= kBlankId || y >= lp.outputs) throw DataError(StrCat("target id ", y, " outside 1..", lp.outputs - 1));
  for (Eigen::Index r = 0; r < lp.data->rows(); ++r) {
    const double m = lp.data->row(r).maxCoeff();
    const double lse = m + std::log((lp.data->row(r).array() - m).exp().sum());
    if (std::abs(lse) > tol)
      throw DataError(StrCat("lattice cell ", r, " is not log-normalized (logsumexp = ", lse, ")"));
  }
}

/// alpha(t,u) = logsumexp(alpha(t-1,u) + blank(t-1,u), alpha(t,u-1) + emit(t,u-1));
/// beta is the mirror recursion ending in the final blank at (T'-1, U).
inline TransducerTrellis ComputeTrellis(const LogProbLattice& lp, const std::vector<int>& targets) {
  const int T = lp.frames, U = lp.nodes - 1;
  TransducerTrellis tr;
  tr.alpha = Matrix::Constant(T, U + 1, kNegInf);
  tr.beta = Matrix::Constant(T, U + 1, kNegInf);
  tr.alpha(0, 0) = 0.0;
  for (int t = 0; t < T; ++t)
    for (int u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) continue;
      double a = kNegInf;
      if (t > 0) a = tr.alpha(t - 1, u) + lp(t - 1, u, kBlankId);
      if (u > 0) a = LogSumExp(a, tr.alpha(t, u - 1) + lp(t, u - 1, targets[u - 1]));
      tr.alpha(t, u) = a;
    }
  tr.forward_loglik = tr.alpha(T - 1, U) + lp(T - 1, U, kBlankId);

  tr.beta(T - 1, U) = lp(T - 1, U, kBlankId);
  for (int t = T - 1; t >= 0; --t)
    for (int u = U; u >= 0; --u) {
      if (t == T - 1 && u == U) continue;
      double b = kNegInf;
      if (t < T - 1) b = tr.beta(t + 1, u) + lp(t, u, kBlankId);
      if (u < U) b = LogSumExp(b, tr.beta(t, u + 1) + lp(t, u, targets[u]));
      tr.beta(t, u) = b;
    }
  tr.backward_loglik = tr.beta(0, 0);
  return tr;
}

/// -log P(targets | lattice) summed over all monotonic alignments.
inline double RnntLoss(const LogProbLattice& lp, const std::vector<int>& targets) {
  CheckTransducerInputs(lp, targets);
  return -ComputeTrellis(lp, targets).forward_loglik;
}

/// d(-log P) / d logp(t, u, k): minus the posterior occupancy of each transition.
inline Matrix RnntGradLogProbs(const LogProbLattice& lp, const std::vector<int>& targets, const TransducerTrellis& tr) {
  const int T = lp.frames, U = lp.nodes - 1;
  const double ll = tr.forward_loglik;
  Matrix g = Matrix::Zero(lp.data->rows(), lp.outputs);
  for (int t = 0; t < T; ++t)
    for (int u = 0; u <= U; ++u) {
      const double a = tr.alpha(t, u);
      if (a == kNegInf) continue;
      const Eigen::Index row = Eigen::Index(t) * lp.nodes + u;
      if (t < T - 1)
        g(row, kBlankId) = -std::exp(a + lp(t, u, kBlankId) + tr.beta(t + 1, u) - ll);
      else if (u == U)
        g(row, kBlankId) = -std::exp(a + lp(t, u, kBlankId) - ll);
      if (u < U) g(row, targets[u]) = -std::exp(a + lp(t, u, targets[u]) + tr.beta(t, u + 1) - ll);
    }
  return g;
}

/// Gradient w.r.t. unnormalized logits whose log-softmax is the lattice.
/// Entries of each cell sum to zero.
inline Matrix RnntGradLogits(const Matrix& logits, int frames, const std::vector<int>& targets) {
  Matrix lp(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    lp.row(r) = logits.row(r).array() - (m + std::log((logits.row(r).array() - m).exp().sum()));
  }
  const auto view = LogProbLattice::Of(lp, frames, int(targets.size()) + 1);
  CheckTransducerInputs(view, targets);
  const Matrix g = RnntGradLogProbs(view, targets, ComputeTrellis(view, targets));
  Matrix out(g.rows(), g.cols());
  for (Eigen::Index r = 0; r < g.rows(); ++r) out.row(r) = g.row(r).array() - lp.row(r).array().exp() * g.row(r).sum();
  return out;
}

/// Autograd node: 1x1 transducer loss of a (T' * (U+1)) x K log-prob matrix.
inline ag::Var RnntLossOp(const ag::Var& logp, int frames, const std::vector<int>& targets) {
  const auto view = LogProbLattice::Of(logp->value, frames, int(targets.size()) + 1);
  CheckTransducerInputs(view, targets);
  TransducerTrellis tr = ComputeTrellis(view, targets);
  const double loss = -tr.forward_loglik;
  return ag::detail::MakeOp(Matrix::Constant(1, 1, loss), {logp}, [frames, targets, tr = std::move(tr)](ag::Node& n) {
    auto& lp = *n.parents[0];
    const auto view = LogProbLattice::Of(lp.value, frames, int(targets.size()) + 1);
    lp.Accumulate(RnntGradLogProbs(view, targets, tr) * n.grad(0, 0));
  });
}

// ---------------------------------------------------------------------------
// Output inventory.

/// Token inventory; id 0 is blank, ids 1..V are tokens (including <cc>).
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (std::find(tokens_.begin(), tokens_.end(), kChannelChange) == tokens_.end()) tokens_.push_back(kChannelChange);
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!ids_.emplace(tokens_[i], int(i) + 1).second) throw ConfigError(StrCat("duplicate token ", tokens_[i]));
    }
  }

  int size() const { return static_cast<int>(tokens_.size()); }  // V
  int num_outputs() const { return size() + 1; }
  int Id(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) throw ConfigError(StrCat("token '", token, "' is not in the vocabulary"));
    return it->second;
  }
  const std::string& Token(int id) const { return tokens_.at(static_cast<std::size_t>(id - 1)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> Encode(const SerializedTranscript& s) const {
    std::vector<int> out;
    for (const auto& t : s.tokens) out.push_back(Id(t));
    return out;
  }
  SerializedTranscript Decode(const std::vector<int>& ids) const {
    SerializedTranscript s;
    for (int id : ids) s.tokens.push_back(Token(id));
    return s;
  }
  std::string Joined() const {
    std::string s;
    for (const auto& t : tokens_) s += (s.empty() ? "" : " ") + t;
    return s;
  }
  static Vocabulary FromJoined(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> t;
    for (std::string w; is >> w;) t.push_back(w);
    return Vocabulary(std::move(t));
  }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

// ---------------------------------------------------------------------------
// Prediction and joint networks.

struct TransducerConfig {
  int pred_embed_dim = 64;
  int pred_hidden = 128;
  int pred_layers = 2;
  int joint_dim = 128;
};

struct LstmState {
  std::vector<Matrix> h, c;  // per layer, 1 x H
};

/// Multi-layer LSTM over previously emitted non-blank tokens; blank (id 0)
/// doubles as the start symbol.
class PredictionNetwork {
 public:
  PredictionNetwork() = default;
  PredictionNetwork(const TransducerConfig& cfg, int num_outputs, ParameterSet& ps, Rng& rng) : cfg_(cfg) {
    ps.AddGaussian("pred.embed", num_outputs, cfg.pred_embed_dim, rng, std::sqrt(double(num_outputs)));
    for (int l = 0; l < cfg.pred_layers; ++l) {
      const int in = l == 0 ? cfg.pred_embed_dim : cfg.pred_hidden;
      ps.AddGaussian(StrCat("pred.lstm", l, ".wx"), in, 4 * cfg.pred_hidden, rng);
      ps.AddGaussian(StrCat("pred.lstm", l, ".wh"), cfg.pred_hidden, 4 * cfg.pred_hidden, rng);
      Matrix b = Matrix::Zero(1, 4 * cfg.pred_hidden);
      b.middleCols(cfg.pred_hidden, cfg.pred_hidden).setOnes();  // forget-gate bias
      ps.Add(StrCat("pred.lstm", l, ".b"), std::move(b));
    }
  }

  const TransducerConfig& config() const { return cfg_; }

  LstmState InitialState() const {
    LstmState s;
    for (int l = 0; l < cfg_.pred_layers; ++l) {
      s.h.push_back(Matrix::Zero(1, cfg_.pred_hidden));
      s.c.push_back(Matrix::Zero(1, cfg_.pred_hidden));
    }
    return s;
  }

  /// Teacher-forced outputs for the inputs [blank, y_1 .. y_U]: (U+1) x H.
  ag::Var Run(const ParameterSet& ps, const std::vector<int>& targets) const {
    std::vector<int> inputs{kBlankId};
    inputs.insert(inputs.end(), targets.begin(), targets.end());
    ag::Var x = ag::GatherRows(ps.Get("pred.embed"), inputs);
    for (int l = 0; l < cfg_.pred_layers; ++l) {
      const ag::Var xw = ag::MatMul(x, ps.Get(StrCat("pred.lstm", l, ".wx")));
      ag::Var h = ag::Constant(Matrix::Zero(1, cfg_.pred_hidden));
      ag::Var c = ag::Constant(Matrix::Zero(1, cfg_.pred_hidden));
      std::vector<ag::Var> outs;
      for (std::size_t u = 0; u < inputs.size(); ++u) {
        ag::Var row = ag::GatherRows(xw, {int(u)});
        std::tie(h, c) = Cell(ps, l, row, h, c);
        outs.push_back(h);
      }
      x = ag::ConcatRows(outs);
    }
    return x;
  }

  /// Advances the state by one emitted token; returns the new top-layer output.
  Matrix Step(const ParameterSet& ps, LstmState& state, int token) const {
    ag::Var x = ag::GatherRows(ps.Get("pred.embed"), {token});
    for (int l = 0; l < cfg_.pred_layers; ++l) {
      auto [h, c] = Cell(ps, l, ag::MatMul(x, ps.Get(StrCat("pred.lstm", l, ".wx"))), ag::Constant(state.h[l]),
                         ag::Constant(state.c[l]));
      state.h[l] = h->value;
      state.c[l] = c->value;
      x = h;
    }
    return x->value;
  }

 private:
  std::pair<ag::Var, ag::Var> Cell(const ParameterSet& ps, int layer, const ag::Var& xw, const ag::Var& h,
                                   const ag::Var& c) const {
    const int H = cfg_.pred_hidden;
    ag::Var gates = ag::AddRow(ag::Add(xw, ag::MatMul(h, ps.Get(StrCat("pred.lstm", layer, ".wh")))),
                               ps.Get(StrCat("pred.lstm", layer, ".b")));
    ag::Var i = ag::Sigmoid(ag::SliceCols(gates, 0, H));
    ag::Var f = ag::Sigmoid(ag::SliceCols(gates, H, H));
    ag::Var g = ag::Tanh(ag::SliceCols(gates, 2 * H, H));
    ag::Var o = ag::Sigmoid(ag::SliceCols(gates, 3 * H, H));
    ag::Var c2 = ag::Add(ag::Mul(f, c), ag::Mul(i, g));
    return {ag::Mul(o, ag::Tanh(c2)), c2};
  }

  TransducerConfig cfg_;
};

/// Encoder + prediction + joint. The encoder has no pre-training head layers.
class TransducerModel {
 public:
  TransducerModel(const EncoderConfig& enc, const TransducerConfig& tcfg, Vocabulary vocab, uint64_t seed)
      : tcfg_(tcfg), vocab_(std::move(vocab)) {
    Rng rng(seed);
    encoder_ = StreamingEncoder(enc, params_, rng, /*with_head_layers=*/false);
    pred_ = PredictionNetwork(tcfg, vocab_.num_outputs(), params_, rng);
    params_.AddGaussian("joint.enc", enc.model_dim, tcfg.joint_dim, rng);
    params_.AddGaussian("joint.pred", tcfg.pred_hidden, tcfg.joint_dim, rng);
    params_.Add("joint.bias", Matrix::Zero(1, tcfg.joint_dim));
    params_.AddGaussian("joint.out", tcfg.joint_dim, vocab_.num_outputs(), rng);
    params_.Add("joint.out_bias", Matrix::Zero(1, vocab_.num_outputs()));
  }

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const StreamingEncoder& encoder() const { return encoder_; }
  const PredictionNetwork& prediction() const { return pred_; }
  const Vocabulary& vocab() const { return vocab_; }
  const TransducerConfig& config() const { return tcfg_; }

  ag::Var Encode(const Matrix& features, const AttentionMask& mask) const {
    return encoder_.Encode(params_, features, mask);
  }

  /// (T' * (U+1)) x K log-probabilities.
  ag::Var JointLogProbs(const ag::Var& enc, const ag::Var& pred) const {
    ag::Var a = ag::MatMul(enc, params_.Get("joint.enc"));
    ag::Var b = ag::AddRow(ag::MatMul(pred, params_.Get("joint.pred")), params_.Get("joint.bias"));
    ag::Var z = ag::Tanh(ag::BroadcastPairSum(a, b));
    return ag::LogSoftmaxRows(ag::AddRow(ag::MatMul(z, params_.Get("joint.out")), params_.Get("joint.out_bias")));
  }

  ag::Var Loss(const Matrix& features, const AttentionMask& mask, const std::vector<int>& targets) const {
    for (int y : targets)
      if (y <= kBlankId || y >= vocab_.num_outputs())
        throw ConfigError(StrCat("target id ", y, " does not fit the joint network (", vocab_.num_outputs(), " outputs)"));
    ag::Var enc = Encode(features, mask);
    ag::Var lp = JointLogProbs(enc, pred_.Run(params_, targets));
    return RnntLossOp(lp, static_cast<int>(enc->rows()), targets);
  }

  /// Joint logits for one encoder frame and one prediction output.
  Vector FrameLogits(const Eigen::RowVectorXd& enc_frame, const Matrix& pred_out) const {
    Matrix z = (enc_frame * params_.Get("joint.enc")->value + pred_out * params_.Get("joint.pred")->value +
                params_.Get("joint.bias")->value)
                   .array()
                   .tanh()
                   .matrix();
    return (z * params_.Get("joint.out")->value + params_.Get("joint.out_bias")->value).transpose();
  }

  std::map<std::string, std::string> ConfigEcho() const {
    auto m = EncoderConfigEcho(encoder_.config());
    m["tt.pred_embed_dim"] = std::to_string(tcfg_.pred_embed_dim);
    m["tt.pred_hidden"] = std::to_string(tcfg_.pred_hidden);
    m["tt.pred_layers"] = std::to_string(tcfg_.pred_layers);
    m["tt.joint_dim"] = std::to_string(tcfg_.joint_dim);
    m["tt.vocab"] = vocab_.Joined();
    return m;
  }

 private:
  TransducerConfig tcfg_;
  Vocabulary vocab_;
  ParameterSet params_;
  StreamingEncoder encoder_;
  PredictionNetwork pred_;
};

inline TransducerConfig TransducerConfigFromEcho(const Checkpoint& ck) {
  TransducerConfig c;
  auto get = [&](const char* key, int& field) {
    auto it = ck.config.find(key);
    if (it != ck.config.end()) field = std::stoi(it->second);
  };
  get("tt.pred_embed_dim", c.pred_embed_dim);
  get("tt.pred_hidden", c.pred_hidden);
  get("tt.pred_layers", c.pred_layers);
  get("tt.joint_dim", c.joint_dim);
  return c;
}

// ---------------------------------------------------------------------------
// Greedy streaming decoding.

/// What the greedy search needs from a transducer: a prediction state, the
/// state after emitting a token, and output scores for (encoder frame, state).
template <typename M>
concept GreedyDecodable = requires(const M& m, typename M::State& s, const Eigen::RowVectorXd& frame) {
  { m.InitialState() } -> std::same_as<typename M::State>;
  m.Advance(s, 1);
  { m.Scores(frame, s) } -> std::convertible_to<Vector>;
};

inline constexpr int kMaxEmissionsPerFrame = 8;

struct DecodeStats {
  int frames_consumed = 0;
  std::vector<int> emissions_per_chunk;
  int cap_hits = 0;
};

/// Consumes encoder frames chunk by chunk. Per frame, emits argmax tokens
/// until blank wins (at most kMaxEmissionsPerFrame). Emitted tokens are final.
template <GreedyDecodable M>
class GreedyStreamingDecoder {
 public:
  explicit GreedyStreamingDecoder(const M& model) : model_(&model), state_(model.InitialState()) {}

  void PushChunk(const Matrix& encoder_frames) {
    int emitted = 0;
    for (Eigen::Index t = 0; t < encoder_frames.rows(); ++t) {
      ++stats_.frames_consumed;
      int n = 0;
      for (;; ++n) {
        if (n == kMaxEmissionsPerFrame) {
          ++stats_.cap_hits;
          break;
        }
        const Vector scores = model_->Scores(encoder_frames.row(t), state_);
        Eigen::Index best;
        scores.maxCoeff(&best);
        if (best == kBlankId) break;
        tokens_.push_back(static_cast<int>(best));
        model_->Advance(state_, static_cast<int>(best));
      }
      emitted += n;
    }
    stats_.emissions_per_chunk.push_back(emitted);
  }

  const std::vector<int>& tokens() const { return tokens_; }
  const DecodeStats& stats() const { return stats_; }

 private:
  const M* model_;
  typename M::State state_;
  std::vector<int> tokens_;
  DecodeStats stats_;
};

/// Adapter exposing a TransducerModel to the greedy decoder.
class TransducerDecodeView {
 public:
  struct State {
    LstmState lstm;
    Matrix pred_out;
  };
  explicit TransducerDecodeView(const TransducerModel& m) : m_(&m) {}

  State InitialState() const {
    State s{m_->prediction().InitialState(), {}};
    s.pred_out = m_->prediction().Step(m_->params(), s.lstm, kBlankId);
    return s;
  }
  void Advance(State& s, int token) const { s.pred_out = m_->prediction().Step(m_->params(), s.lstm, token); }
  Vector Scores(const Eigen::RowVectorXd& frame, const State& s) const { return m_->FrameLogits(frame, s.pred_out); }

 private:
  const TransducerModel* m_;
};

/// Encoder outputs produced the way a streaming front end would: when chunk k
/// arrives, the encoder runs on the prefix ending at that chunk and the rows
/// of chunk k are taken. Returns one matrix per chunk.
inline std::vector<Matrix> StreamEncoderChunks(const TransducerModel& model, const Matrix& features,
                                               const ChunkMaskConfig& chunk) {
  const int frames = EncoderFrames(features.rows());
  const AttentionMask full = BuildChunkMask(frames, chunk);
  const int step = chunk.offline ? frames : chunk.chunk_size;
  std::vector<Matrix> out;
  for (int start = 0; start < frames; start += step) {
    const int end = std::min(frames, start + step);
    const Eigen::Index feat_rows = std::min<Eigen::Index>(features.rows(), Eigen::Index(end) * EncoderConfig::kDownsample);
    ag::Var enc = model.Encode(features.topRows(feat_rows), full.Prefix(end));
    out.push_back(enc->value.middleRows(start, end - start));
  }
  return out;
}

struct DecodeResult {
  SerializedTranscript transcript;
  DecodeStats stats;
};

inline DecodeResult DecodeStreaming(const TransducerModel& model, const Matrix& features, const ChunkMaskConfig& chunk) {
  TransducerDecodeView view(model);
  GreedyStreamingDecoder<TransducerDecodeView> dec(view);
  for (const Matrix& c : StreamEncoderChunks(model, features, chunk)) dec.PushChunk(c);
  return {model.vocab().Decode(dec.tokens()), dec.stats()};
}

/// Decoding over the full-sequence encoder output, pushed as a single chunk.
inline DecodeResult DecodeFullSequence(const TransducerModel& model, const Matrix& features, const ChunkMaskConfig& chunk) {
  TransducerDecodeView view(model);
  GreedyStreamingDecoder<TransducerDecodeView> dec(view);
  dec.PushChunk(model.Encode(features, BuildChunkMask(EncoderFrames(features.rows()), chunk))->value);
  return {model.vocab().Decode(dec.tokens()), dec.stats()};
}

// ---------------------------------------------------------------------------
// Fine-tuning.

struct FinetuneExample {
  Matrix features;          // normalized, T x 80
  std::vector<int> target;  // serialized transcript ids
};

struct FinetuneOptions {
  ChunkMaskConfig chunk;
  AdamWOptions adam;
  int steps = 300;
  int batch_size = 8;
  bool freeze_frontend = true;
};

struct FinetuneStepLog {
  int step = 0;
  double loss = 0.0;  // per example
  double lr = 0.0;
};

/// Copies the transferable encoder tensors of a pre-training checkpoint.
inline int InitializeFromPretrained(TransducerModel& model, const Checkpoint& pretrained) {
  const EncoderConfig want = model.encoder().config();
  const EncoderConfig have = EncoderConfigFromEcho(pretrained);
  if (have.model_dim != want.model_dim || have.num_heads != want.num_heads || have.ff_dim != want.ff_dim ||
      have.input_dim != want.input_dim || have.frontend_channels != want.frontend_channels ||
      have.body_layers != want.body_layers || have.relpos_clip != want.relpos_clip)
    throw ConfigError("pre-trained checkpoint body does not match the transducer encoder config");
  return RestoreParameters(pretrained, model.params(), TransferablePrefixes());
}

inline std::vector<FinetuneStepLog> Finetune(TransducerModel& model, const std::vector<FinetuneExample>& data,
                                             const FinetuneOptions& opt, Rng& rng,
                                             const std::function<void(const FinetuneStepLog&)>& on_step = {}) {
  if (data.empty() && opt.steps > 0) throw DataError("fine-tuning set is empty");
  for (const auto& ex : data)
    for (int y : ex.target)
      if (y <= kBlankId || y >= model.vocab().num_outputs())
        throw ConfigError(StrCat("target id ", y, " does not fit the joint network"));
  model.params().SetTrainable("frontend.", !opt.freeze_frontend);
  model.params().SetTrainable("mask_embedding", false);
  AdamW adam(model.params(), opt.adam);
  std::vector<FinetuneStepLog> log;
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  for (int step = 0; step < opt.steps; ++step) {
    const int bs = std::min<int>(opt.batch_size, int(data.size()));
    FinetuneStepLog rec{step, 0.0, adam.lr()};
    for (int b = 0; b < bs; ++b) {
      if (cursor == order.size()) {
        order.resize(data.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.UniformInt(0, int64_t(i) - 1)]);
        cursor = 0;
      }
      const auto& ex = data[order[cursor++]];
      ag::Var loss = model.Loss(ex.features, BuildChunkMask(EncoderFrames(ex.features.rows()), opt.chunk), ex.target);
      const double v = ag::Scalar(loss);
      if (!std::isfinite(v)) throw NumericalError(StrCat("transducer loss is ", v, " at step ", step));
      rec.loss += v / bs;
      ag::Backward(loss, 1.0 / bs);
    }
    adam.Step();
    model.params().ZeroGrad();
    log.push_back(rec);
    if (on_step) on_step(rec);
  }
  model.params().SetTrainable("frontend.", true);
  model.params().SetTrainable("mask_embedding", true);
  return log;
}

}  // namespace mtssl
