// tests/transducer_test.cpp

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

#include "gradcheck.hpp"
#include "mtssl/pretrain.hpp"
#include "mtssl/transducer.hpp"

namespace mtssl {
namespace {

using testing::MaxGradientError;
using testing::RandomMatrix;
using testing::RelativeError;

Matrix LogSoftmax(const Matrix& logits) {
  Matrix lp(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    lp.row(r) = logits.row(r).array() - (m + std::log((logits.row(r).array() - m).exp().sum()));
  }
  return lp;
}

Matrix RandomLattice(int frames, int nodes, int outputs, Rng& rng, double scale = 1.5) {
  return LogSoftmax(RandomMatrix(Eigen::Index(frames) * nodes, outputs, rng, scale));
}

std::vector<int> RandomTargets(int u, int vocab, Rng& rng) {
  std::vector<int> y(u);
  for (int& v : y) v = int(rng.UniformInt(1, vocab));
  return y;
}

// Sum of path probabilities by walking every monotonic alignment.
double EnumeratePaths(const Matrix& lp, int frames, const std::vector<int>& y) {
  const int nodes = int(y.size()) + 1;
  auto p = [&](int t, int u, int k) { return std::exp(lp(Eigen::Index(t) * nodes + u, k)); };
  std::function<double(int, int)> walk = [&](int t, int u) -> double {
    double total = 0.0;
    if (u < int(y.size())) total += p(t, u, y[u]) * walk(t, u + 1);
    if (t < frames - 1) total += p(t, u, kBlankId) * walk(t + 1, u);
    if (t == frames - 1 && u == int(y.size())) total += p(t, u, kBlankId);
    return total;
  };
  return walk(0, 0);
}

double Loss(const Matrix& lp, int frames, const std::vector<int>& y) {
  return RnntLoss(LogProbLattice::Of(lp, frames, int(y.size()) + 1), y);
}

TEST(RnntLoss, SingleFramePathIsBlank) {
  Rng rng(1);
  const Matrix lp = RandomLattice(1, 1, 4, rng);
  EXPECT_NEAR(Loss(lp, 1, {}), -lp(0, kBlankId), 1e-12);
}

TEST(RnntLoss, UniformTwoFramesOneToken) {
  const Matrix lp = Matrix::Constant(4, 3, -std::log(3.0));
  // two alignments, each of three transitions at probability 1/3
  EXPECT_NEAR(std::exp(-Loss(lp, 2, {2})), 2.0 / 27.0, 1e-12);
  EXPECT_NEAR(std::exp(-Loss(lp, 2, {2})), EnumeratePaths(lp, 2, {2}), 1e-12);
}

TEST(RnntLoss, ExhaustiveEnumerationSweep) {
  Rng rng(2);
  for (int t = 1; t <= 4; ++t)
    for (int u = 0; u <= 3; ++u)
      for (int v = 1; v <= 3; ++v)
        for (int rep = 0; rep < 3; ++rep) {
          const std::vector<int> y = RandomTargets(u, v, rng);
          const Matrix lp = RandomLattice(t, u + 1, v + 1, rng);
          const double want = EnumeratePaths(lp, t, y);
          EXPECT_NEAR(std::exp(-Loss(lp, t, y)), want, 1e-8) << t << " " << u << " " << v;
        }
}

TEST(RnntLoss, ForwardAndBackwardAgree) {
  Rng rng(3);
  for (int rep = 0; rep < 200; ++rep) {
    const int t = int(rng.UniformInt(1, 30)), u = int(rng.UniformInt(0, 12));
    const std::vector<int> y = RandomTargets(u, 6, rng);
    const Matrix lp = RandomLattice(t, u + 1, 7, rng, 3.0);
    const TransducerTrellis tr = ComputeTrellis(LogProbLattice::Of(lp, t, u + 1), y);
    ASSERT_TRUE(std::isfinite(tr.forward_loglik));
    EXPECT_NEAR(tr.forward_loglik, tr.backward_loglik, 1e-6 * std::max(1.0, std::abs(tr.forward_loglik)));
  }
}

TEST(RnntLoss, LongSequencesStayFinite) {
  Rng rng(4);
  const std::vector<int> y = RandomTargets(60, 5, rng);
  const Matrix lp = RandomLattice(400, 61, 6, rng, 4.0);
  EXPECT_TRUE(std::isfinite(Loss(lp, 400, y)));
}

TEST(RnntLoss, PermutationSensitive) {
  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    const Matrix lp = RandomLattice(5, 4, 4, rng);
    EXPECT_NE(Loss(lp, 5, {1, 2, 3}), Loss(lp, 5, {3, 2, 1}));
  }
}

TEST(RnntLoss, RejectsBadInputs) {
  Rng rng(6);
  Matrix lp = RandomLattice(2, 2, 3, rng);
  EXPECT_THROW(Loss(lp, 2, {3}), DataError);
  EXPECT_THROW(Loss(lp, 2, {0}), DataError);
  EXPECT_THROW(Loss(lp, 2, {1, 1}), ShapeError);
  lp(1, 1) += 0.1;
  EXPECT_THROW(Loss(lp, 2, {1}), DataError);
}

TEST(RnntGrad, LogitGradientMatchesFiniteDifferences) {
  Rng rng(7);
  const double h = 1e-4;
  for (int t = 1; t <= 3; ++t)
    for (int u = 0; u <= 2; ++u) {
      const std::vector<int> y = RandomTargets(u, 3, rng);
      Matrix logits = RandomMatrix(Eigen::Index(t) * (u + 1), 4, rng);
      const Matrix g = RnntGradLogits(logits, t, y);
      double worst = 0;
      for (Eigen::Index i = 0; i < logits.size(); ++i) {
        const double orig = logits.data()[i];
        logits.data()[i] = orig + h;
        const double up = Loss(LogSoftmax(logits), t, y);
        logits.data()[i] = orig - h;
        const double down = Loss(LogSoftmax(logits), t, y);
        logits.data()[i] = orig;
        worst = std::max(worst, RelativeError(g.data()[i], (up - down) / (2 * h)));
      }
      EXPECT_LT(worst, 1e-4) << t << " " << u;
      for (Eigen::Index r = 0; r < g.rows(); ++r) EXPECT_NEAR(g.row(r).sum(), 0.0, 1e-12);
    }
}

TEST(RnntGrad, LogProbGradientIsMinusOccupancy) {
  Rng rng(8);
  const std::vector<int> y{2, 1};
  const Matrix lp = RandomLattice(3, 3, 3, rng);
  const auto view = LogProbLattice::Of(lp, 3, 3);
  const Matrix g = RnntGradLogProbs(view, y, ComputeTrellis(view, y));
  // every alignment uses T' blanks and U emissions
  EXPECT_NEAR(g.col(kBlankId).sum(), -3.0, 1e-10);
  EXPECT_NEAR(g.sum(), -5.0, 1e-10);
  for (int u = 0; u < 2; ++u) EXPECT_EQ(g(2 * 3 + u, kBlankId), 0.0);      // blank at last frame before U
  for (int t = 0; t < 3; ++t) EXPECT_EQ(g(t * 3 + 2, 1) + g(t * 3 + 2, 2), 0.0);  // no emission from u = U
}

TEST(RnntGrad, UnreachableCellsGetZero) {
  Rng rng(9);
  // block the emission at frame 0: cell (0,1) becomes unreachable
  Matrix lp2 = RandomLattice(3, 2, 3, rng);
  lp2(0, 1) = kNegInf;
  lp2.row(0) = LogSoftmax(lp2.row(0)).row(0);
  const auto view2 = LogProbLattice::Of(lp2, 3, 2);
  const TransducerTrellis tr = ComputeTrellis(view2, {1});
  EXPECT_EQ(tr.alpha(0, 1), kNegInf);
  const Matrix g = RnntGradLogProbs(view2, {1}, tr);
  EXPECT_TRUE(g.row(1).isZero(0.0));
}

TEST(RnntLossOp, BackwardScalesWithSeed) {
  Rng rng(10);
  const Matrix lp = RandomLattice(3, 3, 4, rng);
  auto v = ag::Parameter(lp);
  ag::Backward(RnntLossOp(v, 3, {1, 3}), 2.5);
  const auto view = LogProbLattice::Of(lp, 3, 3);
  const Matrix want = 2.5 * RnntGradLogProbs(view, {1, 3}, ComputeTrellis(view, {1, 3}));
  EXPECT_LT((v->grad - want).cwiseAbs().maxCoeff(), 1e-14);
}

// ---------------------------------------------------------------------------
// Vocabulary

TEST(Vocabulary, ChannelChangeIsAlwaysPresent) {
  const Vocabulary v({"A", "B", "C"});
  EXPECT_EQ(v.size(), 4);
  EXPECT_EQ(v.num_outputs(), 5);
  EXPECT_EQ(v.Id("A"), 1);
  EXPECT_EQ(v.Id(kChannelChange), 4);
  const SerializedTranscript s = SerializedTranscript::FromString("A B <cc> C");
  EXPECT_EQ(v.Encode(s), (std::vector<int>{1, 2, 4, 3}));
  EXPECT_EQ(v.Decode(v.Encode(s)).tokens, s.tokens);
  EXPECT_EQ(Vocabulary::FromJoined(v.Joined()).tokens(), v.tokens());
  EXPECT_THROW(v.Id("Z"), ConfigError);
  EXPECT_THROW(Vocabulary({"A", "A"}), ConfigError);
}

// ---------------------------------------------------------------------------
// Greedy decoding with scripted models

struct ScriptedModel {
  using State = int;  // number of tokens emitted so far
  std::function<Vector(int frame, int state)> fn;
  mutable int frame_seen = -1;
  State InitialState() const { return 0; }
  void Advance(State& s, int) const { ++s; }
  Vector Scores(const Eigen::RowVectorXd& frame, const State& s) const { return fn(int(frame[0]), s); }
};
static_assert(GreedyDecodable<ScriptedModel>);

Matrix FrameIndices(int n) {
  Matrix m(n, 1);
  for (int i = 0; i < n; ++i) m(i, 0) = i;
  return m;
}

TEST(GreedyDecoder, AlwaysBlankGivesNothing) {
  ScriptedModel m{[](int, int) { return Vector((Vector(4) << 5, 1, 2, 3).finished()); }};
  GreedyStreamingDecoder<ScriptedModel> d(m);
  d.PushChunk(FrameIndices(10));
  EXPECT_TRUE(d.tokens().empty());
  EXPECT_EQ(d.stats().frames_consumed, 10);
}

TEST(GreedyDecoder, ForcedSingleToken) {
  ScriptedModel m{[](int, int s) {
    return s == 0 ? Vector((Vector(4) << 1, 0, 0, 3).finished()) : Vector((Vector(4) << 3, 0, 0, 1).finished());
  }};
  GreedyStreamingDecoder<ScriptedModel> d(m);
  d.PushChunk(FrameIndices(1));
  EXPECT_EQ(d.tokens(), std::vector<int>{3});
}

TEST(GreedyDecoder, EmissionCapIsCounted) {
  ScriptedModel m{[](int, int) { return Vector((Vector(3) << 0, 1, 0).finished()); }};
  GreedyStreamingDecoder<ScriptedModel> d(m);
  d.PushChunk(FrameIndices(2));
  EXPECT_EQ(d.tokens().size(), 16u);
  EXPECT_EQ(d.stats().cap_hits, 2);
  EXPECT_EQ(d.stats().emissions_per_chunk, std::vector<int>{16});
}

TEST(GreedyDecoder, ChunkingDoesNotChangeScriptedOutput) {
  // token 1 at even frames, token 2 on frame 5
  auto fn = [](int frame, int s) {
    Vector v = Vector::Zero(3);
    v[0] = 1.0;
    const int want = frame / 2 + 1 + (frame >= 5);
    if (s < want) v[frame == 5 && s == want - 1 ? 2 : 1] = 2.0;
    return v;
  };
  ScriptedModel m{fn};
  GreedyStreamingDecoder<ScriptedModel> whole(m), parts(m);
  whole.PushChunk(FrameIndices(9));
  const Matrix all = FrameIndices(9);
  for (int s = 0; s < 9; s += 2) parts.PushChunk(all.middleRows(s, std::min(2, 9 - s)));
  EXPECT_EQ(parts.tokens(), whole.tokens());
  EXPECT_EQ(parts.stats().emissions_per_chunk.size(), 5u);
}

// ---------------------------------------------------------------------------
// Full transducer model

EncoderConfig TinyEncoder() {
  EncoderConfig c;
  c.input_dim = 5;
  c.frontend_channels = 6;
  c.model_dim = 8;
  c.num_heads = 2;
  c.ff_dim = 10;
  c.body_layers = 2;
  c.head_layers = 1;
  c.relpos_clip = 2;
  return c;
}

TransducerConfig TinyTransducer() { return {3, 4, 2, 5}; }

TEST(TransducerModel, LossGradientMatchesFiniteDifferences) {
  TransducerModel m(TinyEncoder(), TinyTransducer(), Vocabulary({"A", "B"}), 1);
  Rng rng(2);
  for (const auto& [_, v] : m.params().items()) v->value = RandomMatrix(v->rows(), v->cols(), rng, 0.5);
  const Matrix x = RandomMatrix(14, 5, rng);
  const AttentionMask s = BuildChunkMask(4, {2, 2, false});
  const std::vector<int> y{1, 3, 2};
  m.params().SetTrainable("mask_embedding", false);
  EXPECT_LT(MaxGradientError(m.params(), [&] { return m.Loss(x, s, y); }), 1e-4);
}

TEST(TransducerModel, PredictionStepMatchesTeacherForcing) {
  TransducerModel m(TinyEncoder(), TinyTransducer(), Vocabulary({"A", "B"}), 3);
  const std::vector<int> y{2, 1, 3, 3};
  const Matrix forced = m.prediction().Run(m.params(), y)->value;
  LstmState st = m.prediction().InitialState();
  EXPECT_LT((m.prediction().Step(m.params(), st, kBlankId) - forced.row(0)).cwiseAbs().maxCoeff(), 1e-14);
  for (std::size_t u = 0; u < y.size(); ++u)
    EXPECT_LT((m.prediction().Step(m.params(), st, y[u]) - forced.row(u + 1)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(TransducerModel, FrameLogitsMatchJoint) {
  TransducerModel m(TinyEncoder(), TinyTransducer(), Vocabulary({"A", "B"}), 4);
  Rng rng(5);
  const Matrix x = RandomMatrix(12, 5, rng);
  const ag::Var enc = m.Encode(x, BuildChunkMask(3, {}));
  const ag::Var pred = m.prediction().Run(m.params(), {1, 2});
  const Matrix lp = m.JointLogProbs(enc, pred)->value;
  for (int t = 0; t < 3; ++t)
    for (int u = 0; u < 3; ++u) {
      const Vector logits = m.FrameLogits(enc->value.row(t), pred->value.row(u));
      const Matrix want = LogSoftmax(logits.transpose());
      EXPECT_LT((lp.row(t * 3 + u) - want.row(0)).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(TransducerModel, TargetOutsideJointIsConfigError) {
  TransducerModel m(TinyEncoder(), TinyTransducer(), Vocabulary({"A", "B"}), 1);
  EXPECT_THROW(m.Loss(Matrix::Zero(8, 5), BuildChunkMask(2, {}), {4}), ConfigError);
}

TransducerModel ChattyModel(uint64_t seed) {
  TransducerModel m(TinyEncoder(), TinyTransducer(), Vocabulary({"A", "B"}), seed);
  Rng rng(seed + 1);
  for (const auto& [_, v] : m.params().items()) v->value = RandomMatrix(v->rows(), v->cols(), rng, 0.8);
  m.params().Get("joint.out_bias")->value(0, kBlankId) = -0.5;  // blank does not always win
  return m;
}

TEST(StreamingDecode, EqualsFullSequenceDecode) {
  Rng rng(6);
  int nonempty = 0;
  for (int rep = 0; rep < 10; ++rep) {
    const TransducerModel m = ChattyModel(100 + rep);
    const Matrix x = RandomMatrix(int(rng.UniformInt(20, 60)), 5, rng);
    for (const ChunkMaskConfig c : {ChunkMaskConfig{2, 2, false}, ChunkMaskConfig{3, std::nullopt, false}}) {
      const DecodeResult s = DecodeStreaming(m, x, c), f = DecodeFullSequence(m, x, c);
      EXPECT_EQ(s.transcript.tokens, f.transcript.tokens);
      EXPECT_EQ(s.stats.frames_consumed, EncoderFrames(x.rows()));
      nonempty += !s.transcript.tokens.empty();
    }
  }
  EXPECT_GT(nonempty, 0);
}

TEST(StreamingDecode, EarlierChunksNeverChange) {
  const TransducerModel m = ChattyModel(7);
  Rng rng(8);
  const Matrix x = RandomMatrix(48, 5, rng);
  const ChunkMaskConfig c{2, 2, false};
  const std::vector<Matrix> chunks = StreamEncoderChunks(m, x, c);
  const Matrix full = m.Encode(x, BuildChunkMask(12, c))->value;
  TransducerDecodeView view(m);
  GreedyStreamingDecoder<TransducerDecodeView> dec(view);
  std::vector<std::vector<int>> snapshots;
  int row = 0;
  for (const Matrix& ch : chunks) {
    EXPECT_LT((ch - full.middleRows(row, ch.rows())).cwiseAbs().maxCoeff(), 1e-10);
    row += int(ch.rows());
    dec.PushChunk(ch);
    snapshots.push_back(dec.tokens());
  }
  for (const auto& s : snapshots) EXPECT_TRUE(std::equal(s.begin(), s.end(), dec.tokens().begin()));
}

std::vector<FinetuneExample> TinyFinetuneData(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<FinetuneExample> d;
  for (int i = 0; i < n; ++i) d.push_back({RandomMatrix(int(rng.UniformInt(16, 24)), 5, rng), RandomTargets(3, 3, rng)});
  return d;
}

FinetuneOptions TinyFinetuneOptions(int steps) {
  FinetuneOptions o;
  o.chunk = {2, 2, false};
  o.steps = steps;
  o.batch_size = 2;
  o.adam.total_steps = std::max(1, steps);
  return o;
}

TEST(Finetune, ZeroStepsIsPassthrough) {
  TransducerModel m(TinyEncoder(), TinyTransducer(), Vocabulary({"A", "B"}), 9);
  const Checkpoint before = CaptureCheckpoint(m.params(), {});
  Rng rng(1);
  EXPECT_TRUE(Finetune(m, TinyFinetuneData(3, 2), TinyFinetuneOptions(0), rng).empty());
  for (const auto& [name, v] : m.params().items()) EXPECT_EQ(v->value, *before.Find(name));
}

TEST(Finetune, DeterministicAndFrontendFrozen) {
  auto run = [] {
    TransducerModel m(TinyEncoder(), TinyTransducer(), Vocabulary({"A", "B"}), 9);
    Rng rng(1);
    Finetune(m, TinyFinetuneData(4, 2), TinyFinetuneOptions(4), rng);
    return CaptureCheckpoint(m.params(), {});
  };
  const Checkpoint a = run(), b = run();
  TransducerModel init(TinyEncoder(), TinyTransducer(), Vocabulary({"A", "B"}), 9);
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    EXPECT_EQ(a.tensors[i].second, b.tensors[i].second) << a.tensors[i].first;
    const bool frozen = a.tensors[i].first.rfind("frontend.", 0) == 0 || a.tensors[i].first == "mask_embedding";
    const Matrix& start = init.params().Get(a.tensors[i].first)->value;
    if (frozen)
      EXPECT_EQ(a.tensors[i].second, start) << a.tensors[i].first;
    else
      EXPECT_NE(a.tensors[i].second, start) << a.tensors[i].first;
  }
}

TEST(Finetune, LossDecreases) {
  TransducerModel m(TinyEncoder(), TinyTransducer(), Vocabulary({"A", "B"}), 12);
  FinetuneOptions o = TinyFinetuneOptions(40);
  o.adam.peak_lr = 5e-3;
  Rng rng(3);
  const auto log = Finetune(m, TinyFinetuneData(2, 4), o, rng);
  EXPECT_LT(log.back().loss, 0.7 * log.front().loss);
}

TEST(Finetune, RejectsVocabularyMismatch) {
  TransducerModel m(TinyEncoder(), TinyTransducer(), Vocabulary({"A", "B"}), 9);
  auto data = TinyFinetuneData(2, 2);
  data[0].target.push_back(7);
  Rng rng(1);
  EXPECT_THROW(Finetune(m, data, TinyFinetuneOptions(1), rng), ConfigError);
}

TEST(Finetune, InitializesBodyFromPretraining) {
  PretrainModel pre(TinyEncoder(), {6, 4, 0.1}, 77);
  const Checkpoint ck = CaptureCheckpoint(pre.params(), pre.ConfigEcho(Objective::kBiLabel));
  TransducerModel m(TinyEncoder(), TinyTransducer(), Vocabulary({"A", "B"}), 9);
  EXPECT_GT(InitializeFromPretrained(m, ck), 0);
  for (const auto& [name, v] : m.params().items()) {
    const bool transferable = name.rfind("frontend.", 0) == 0 || name.rfind("body", 0) == 0;
    if (transferable) EXPECT_EQ(v->value, pre.params().Get(name)->value) << name;
  }
  EXPECT_FALSE(m.params().Has("head.0.ff.w1"));

  EncoderConfig other = TinyEncoder();
  other.body_layers = 3;
  TransducerModel bigger(other, TinyTransducer(), Vocabulary({"A", "B"}), 9);
  EXPECT_THROW(InitializeFromPretrained(bigger, ck), ConfigError);
}

}  // namespace
}  // namespace mtssl
