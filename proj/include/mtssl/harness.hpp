// mtssl/harness.hpp

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

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mtssl/eval.hpp"
#include "mtssl/pipeline.hpp"
#include "mtssl/synth.hpp"

namespace mtssl {

// ---------------------------------------------------------------------------
// Flat dotted-key configuration.
//
// File format: one `key = value` per line; `#` starts a comment. Values are
// kept as strings until ExperimentConfig::FromMap types and validates them.

using ConfigMap = std::map<std::string, std::string>;

namespace detail {
inline std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
}  // namespace detail

inline ConfigMap ParseConfigText(const std::string& text, const std::string& origin = "<config>") {
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(StrCat(origin, ":", lineno, ": expected key = value"));
    const std::string key = detail::Trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(StrCat(origin, ":", lineno, ": empty key"));
    out[key] = detail::Trim(line.substr(eq + 1));
  }
  return out;
}

inline ConfigMap ReadConfigFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(StrCat("cannot open config file ", path));
  std::ostringstream os;
  os << in.rdbuf();
  return ParseConfigText(os.str(), path);
}

/// Applies `key=value` overrides on top of `base`.
inline ConfigMap ApplyOverrides(ConfigMap base, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError(StrCat("override '", o, "' is not key=value"));
    base[detail::Trim(o.substr(0, eq))] = detail::Trim(o.substr(eq + 1));
  }
  return base;
}

enum class QuantizerKind { kKMeansFbank, kImport };

enum class Stage { kSynth, kFeatures, kQuantize, kPretrain, kFinetune, kDecode, kScore };

inline const std::vector<Stage>& AllStages() {
  static const std::vector<Stage> s = {Stage::kSynth,    Stage::kFeatures, Stage::kQuantize, Stage::kPretrain,
                                       Stage::kFinetune, Stage::kDecode,   Stage::kScore};
  return s;
}

inline const char* StageName(Stage s) {
  switch (s) {
    case Stage::kSynth: return "synth";
    case Stage::kFeatures: return "features";
    case Stage::kQuantize: return "quantize";
    case Stage::kPretrain: return "pretrain";
    case Stage::kFinetune: return "finetune";
    case Stage::kDecode: return "decode";
    case Stage::kScore: return "score";
  }
  return "?";
}

inline Stage ParseStage(const std::string& name) {
  for (Stage s : AllStages())
    if (name == StageName(s)) return s;
  throw UsageError(StrCat("unknown stage '", name, "'"));
}

/// Every experiment setting. Defaults are a desk-scale configuration that runs
/// the whole pipeline on the synthetic corpus in about a minute.
struct ExperimentConfig {
  std::string out_dir = "run";
  uint64_t seed = 7;

  std::string corpus_manifest;  // empty: use the corpus written by `synth`
  std::string noise_manifest;
  int synth_utterances = 48;

  AugmentConfig augment{0.5, 0.0, 0.5};

  QuantizerKind quantizer = QuantizerKind::kKMeansFbank;
  KMeansOptions kmeans{16, 20, 1e-7, 0};
  std::string import_dir;
  LabelFormat label_format = LabelFormat::kText;

  ChunkMaskConfig chunk{4, 2, false};
  MaskSpanConfig spans{2, 0.08};
  EncoderConfig encoder{kNumMelBins, 32, 32, 2, 64, 2, 1, 8};
  MspHeadConfig msp{16, 16, 0.1};

  Objective objective = Objective::kBiLabel;
  int pretrain_primaries = 32;  // 0: every utterance
  int pretrain_steps = 500;
  int pretrain_batch = 32;
  AdamWOptions pretrain_adam{1e-2, 0.9, 0.98, 1e-8, 0.01, 50, 500};

  bool finetune_from_pretrained = true;
  int finetune_examples = 16;
  FinetuneMixConfig finetune_mix;
  int finetune_steps = 300;
  int finetune_batch = 16;
  bool freeze_frontend = true;
  AdamWOptions finetune_adam{1e-2, 0.9, 0.98, 1e-8, 0.01, 30, 300};
  TransducerConfig transducer{16, 64, 1, 64};

  bool decode_heldout = false;  // false: decode the fine-tuning examples
  int decode_examples = 16;

  std::string score_hyp;  // empty: the decode stage outputs
  std::string score_ref;

  ConfigMap raw;  // resolved key/value view, used for hashing and echo

  static ExperimentConfig FromMap(const ConfigMap& map);
  void Validate() const;

  /// FNV-1a over the canonical (sorted key=value) form of every setting.
  std::string Hash() const {
    std::string canon;
    for (const auto& [k, v] : raw) canon += k + "=" + v + "\n";
    return HexU64(Fnv1a(canon));
  }

  uint64_t StageSeed(Stage s, int stream = 0) const {
    return DeriveSeed(DeriveSeed(seed, static_cast<uint64_t>(s)), static_cast<uint64_t>(stream));
  }

  std::filesystem::path Dir(Stage s) const { return std::filesystem::path(out_dir) / StageName(s); }
};

namespace detail {

class ConfigReader {
 public:
  explicit ConfigReader(const ConfigMap& m) : map_(m) {}

  std::string Str(const std::string& key, const std::string& def) {
    used_[key] = true;
    auto it = map_.find(key);
    const std::string v = it == map_.end() ? def : it->second;
    resolved_[key] = v;
    return v;
  }
  int Int(const std::string& key, int def) {
    const std::string s = Str(key, std::to_string(def));
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used != s.size() || v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
        throw std::invalid_argument(s);
      return static_cast<int>(v);
    } catch (const std::exception&) {
      throw ConfigError(StrCat("config key ", key, ": '", s, "' is not an integer"));
    }
  }
  uint64_t U64(const std::string& key, uint64_t def) {
    const std::string s = Str(key, std::to_string(def));
    try {
      std::size_t used = 0;
      if (!s.empty() && s[0] == '-') throw std::invalid_argument(s);
      const uint64_t v = std::stoull(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(StrCat("config key ", key, ": '", s, "' is not a non-negative integer"));
    }
  }
  double Real(const std::string& key, double def) {
    const std::string s = Str(key, StrCat(def));
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(StrCat("config key ", key, ": '", s, "' is not a number"));
    }
  }
  bool Bool(const std::string& key, bool def) {
    const std::string s = Str(key, def ? "true" : "false");
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(StrCat("config key ", key, ": '", s, "' is not a boolean"));
  }
  std::string Choice(const std::string& key, const std::string& def, std::initializer_list<const char*> allowed) {
    const std::string s = Str(key, def);
    for (const char* a : allowed)
      if (s == a) return s;
    std::string list;
    for (const char* a : allowed) list += (list.empty() ? "" : "|") + std::string(a);
    throw ConfigError(StrCat("config key ", key, ": '", s, "' is not one of ", list));
  }

  void CheckUnknown() const {
    for (const auto& [k, _] : map_)
      if (!used_.count(k)) throw ConfigError(StrCat("unknown config key '", k, "'"));
  }
  const ConfigMap& resolved() const { return resolved_; }

 private:
  const ConfigMap& map_;
  std::map<std::string, bool> used_;
  ConfigMap resolved_;
};

}  // namespace detail

inline ExperimentConfig ExperimentConfig::FromMap(const ConfigMap& map) {
  ExperimentConfig c;
  detail::ConfigReader r(map);
  c.out_dir = r.Str("out_dir", c.out_dir);
  c.seed = r.U64("seed", c.seed);

  c.corpus_manifest = r.Str("corpus.manifest", "");
  c.noise_manifest = r.Str("noise.manifest", "");
  c.synth_utterances = r.Int("synth.num_utterances", c.synth_utterances);

  c.augment.p_clean = r.Real("augment.p_clean", c.augment.p_clean);
  c.augment.p_noise = r.Real("augment.p_noise", c.augment.p_noise);
  c.augment.p_speech = r.Real("augment.p_speech", c.augment.p_speech);

  c.quantizer = r.Choice("quantize.method", "kmeans-fbank", {"kmeans-fbank", "import"}) == "import"
                    ? QuantizerKind::kImport
                    : QuantizerKind::kKMeansFbank;
  c.kmeans.num_clusters = r.Int("quantize.num_clusters", c.kmeans.num_clusters);
  c.kmeans.max_iterations = r.Int("quantize.max_iterations", c.kmeans.max_iterations);
  c.import_dir = r.Str("quantize.import_dir", "");
  c.label_format = r.Choice("quantize.label_format", "text", {"text", "binary"}) == "binary" ? LabelFormat::kBinary
                                                                                            : LabelFormat::kText;

  c.chunk.chunk_size = r.Int("mask.chunk_size", c.chunk.chunk_size);
  const std::string h = r.Str("mask.history_chunks", "2");
  if (h == "unbounded") {
    c.chunk.history_chunks.reset();
  } else {
    c.chunk.history_chunks = r.Int("mask.history_chunks", 2);
  }
  c.chunk.offline = r.Bool("mask.offline", c.chunk.offline);
  c.spans.span_length = r.Int("span.length", c.spans.span_length);
  c.spans.start_probability = r.Real("span.start_probability", c.spans.start_probability);

  c.encoder.frontend_channels = r.Int("encoder.frontend_channels", c.encoder.frontend_channels);
  c.encoder.model_dim = r.Int("encoder.model_dim", c.encoder.model_dim);
  c.encoder.num_heads = r.Int("encoder.num_heads", c.encoder.num_heads);
  c.encoder.ff_dim = r.Int("encoder.ff_dim", c.encoder.ff_dim);
  c.encoder.body_layers = r.Int("encoder.body_layers", c.encoder.body_layers);
  c.encoder.head_layers = r.Int("encoder.head_layers", c.encoder.head_layers);
  c.encoder.relpos_clip = r.Int("encoder.relpos_clip", c.encoder.relpos_clip);
  c.msp.num_classes = c.kmeans.num_clusters;
  c.msp.embed_dim = r.Int("msp.embed_dim", c.msp.embed_dim);
  c.msp.gamma = r.Real("msp.gamma", c.msp.gamma);

  c.objective = ParseObjective(r.Choice("pretrain.objective", "bilabel", {"msp", "bilabel"}));
  c.pretrain_primaries = r.Int("pretrain.num_primaries", c.pretrain_primaries);
  c.pretrain_steps = r.Int("pretrain.steps", c.pretrain_steps);
  c.pretrain_batch = r.Int("pretrain.batch_size", c.pretrain_batch);
  c.pretrain_adam.peak_lr = r.Real("pretrain.lr", c.pretrain_adam.peak_lr);
  c.pretrain_adam.warmup_steps = r.Int("pretrain.warmup_steps", c.pretrain_adam.warmup_steps);
  c.pretrain_adam.weight_decay = r.Real("pretrain.weight_decay", c.pretrain_adam.weight_decay);
  c.pretrain_adam.total_steps = c.pretrain_steps;

  c.finetune_from_pretrained = r.Choice("finetune.init", "pretrained", {"pretrained", "scratch"}) == "pretrained";
  c.finetune_examples = r.Int("finetune.num_examples", c.finetune_examples);
  c.finetune_mix.p_mixed = r.Real("finetune.p_mixed", c.finetune_mix.p_mixed);
  c.finetune_mix.volume_perturbation = r.Bool("finetune.volume_perturbation", c.finetune_mix.volume_perturbation);
  c.finetune_steps = r.Int("finetune.steps", c.finetune_steps);
  c.finetune_batch = r.Int("finetune.batch_size", c.finetune_batch);
  c.freeze_frontend = r.Bool("finetune.freeze_frontend", c.freeze_frontend);
  c.finetune_adam.peak_lr = r.Real("finetune.lr", c.finetune_adam.peak_lr);
  c.finetune_adam.warmup_steps = r.Int("finetune.warmup_steps", c.finetune_adam.warmup_steps);
  c.finetune_adam.weight_decay = r.Real("finetune.weight_decay", c.finetune_adam.weight_decay);
  c.finetune_adam.total_steps = c.finetune_steps;
  c.transducer.pred_embed_dim = r.Int("tt.pred_embed_dim", c.transducer.pred_embed_dim);
  c.transducer.pred_hidden = r.Int("tt.pred_hidden", c.transducer.pred_hidden);
  c.transducer.pred_layers = r.Int("tt.pred_layers", c.transducer.pred_layers);
  c.transducer.joint_dim = r.Int("tt.joint_dim", c.transducer.joint_dim);

  c.decode_heldout = r.Choice("decode.split", "train", {"train", "heldout"}) == "heldout";
  c.decode_examples = r.Int("decode.num_examples", c.decode_examples);

  c.score_hyp = r.Str("score.hyp", "");
  c.score_ref = r.Str("score.ref", "");

  r.CheckUnknown();
  c.raw = r.resolved();
  c.raw.erase("out_dir");  // where a run lives does not change what it computes
  c.Validate();
  return c;
}

inline void ExperimentConfig::Validate() const {
  augment.Validate();
  chunk.Validate();
  spans.Validate();
  if (synth_utterances < 2) throw ConfigError("synth.num_utterances must be >= 2");
  if (kmeans.num_clusters < 1) throw ConfigError("quantize.num_clusters must be >= 1");
  if (quantizer == QuantizerKind::kImport && import_dir.empty())
    throw ConfigError("quantize.method=import needs quantize.import_dir");
  if (objective == Objective::kBiLabel && augment.p_speech <= 0.0)
    throw ConfigError("pretrain.objective=bilabel needs interfering speech (augment.p_speech > 0)");
  if (encoder.model_dim < 1 || encoder.num_heads < 1 || encoder.model_dim % encoder.num_heads != 0)
    throw ConfigError("encoder.model_dim must be a positive multiple of encoder.num_heads");
  if (pretrain_steps < 0 || finetune_steps < 0) throw ConfigError("step counts must be >= 0");
  if (pretrain_batch < 1 || finetune_batch < 1) throw ConfigError("batch sizes must be >= 1");
  if (finetune_examples < 1 || decode_examples < 1) throw ConfigError("example counts must be >= 1");
  if (score_hyp.empty() != score_ref.empty()) throw ConfigError("score.hyp and score.ref must be given together");
}

// ---------------------------------------------------------------------------
// Run manifest: <out_dir>/manifest.json, rewritten atomically after each stage.

struct ArtifactRecord {
  std::string path;  // relative to out_dir
  std::string hash;  // FNV-1a of the file bytes
  uint64_t bytes = 0;
};

struct StageRecord {
  std::string config_hash;
  uint64_t seed = 0;
  double wall_seconds = 0.0;
  std::vector<ArtifactRecord> artifacts;
  nlohmann::json summary = nlohmann::json::object();
};

struct RunManifest {
  std::string version = kVersion;
  std::string config_hash;
  ConfigMap config;
  std::map<std::string, StageRecord> stages;

  const StageRecord* Find(Stage s) const {
    auto it = stages.find(StageName(s));
    return it == stages.end() ? nullptr : &it->second;
  }
};

inline std::string HashFile(const std::filesystem::path& p) { return HexU64(Fnv1a(detail::ReadFile(p.string()))); }

/// Writes via a sibling temporary and rename, so readers never see a torn file.
inline void WriteFileAtomic(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  detail::WriteFile(tmp.string(), bytes);
  std::filesystem::rename(tmp, path);
}

inline nlohmann::json ManifestToJson(const RunManifest& m) {
  nlohmann::json j;
  j["version"] = m.version;
  j["config_hash"] = m.config_hash;
  j["config"] = m.config;
  j["stages"] = nlohmann::json::object();
  for (const auto& [name, s] : m.stages) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& r : s.artifacts) a.push_back({{"path", r.path}, {"hash", r.hash}, {"bytes", r.bytes}});
    j["stages"][name] = {{"config_hash", s.config_hash}, {"seed", s.seed},  {"wall_seconds", s.wall_seconds},
                         {"artifacts", a},               {"summary", s.summary}};
  }
  return j;
}

inline RunManifest ManifestFromJson(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.version = j.at("version").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config = j.at("config").get<ConfigMap>();
    for (const auto& [name, s] : j.at("stages").items()) {
      StageRecord r;
      r.config_hash = s.at("config_hash").get<std::string>();
      r.seed = s.at("seed").get<uint64_t>();
      r.wall_seconds = s.at("wall_seconds").get<double>();
      r.summary = s.value("summary", nlohmann::json::object());
      for (const auto& a : s.at("artifacts"))
        r.artifacts.push_back({a.at("path").get<std::string>(), a.at("hash").get<std::string>(),
                               a.at("bytes").get<uint64_t>()});
      m.stages[name] = std::move(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(StrCat("malformed run manifest: ", e.what()));
  }
  return m;
}

inline std::filesystem::path ManifestPath(const std::string& out_dir) {
  return std::filesystem::path(out_dir) / "manifest.json";
}

inline RunManifest LoadManifest(const std::string& out_dir) {
  const auto p = ManifestPath(out_dir);
  if (!std::filesystem::exists(p)) return {};
  try {
    return ManifestFromJson(nlohmann::json::parse(detail::ReadFile(p.string())));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(StrCat(p.string(), ": ", e.what()));
  }
}

inline void SaveManifest(const std::string& out_dir, const RunManifest& m) {
  std::filesystem::create_directories(out_dir);
  WriteFileAtomic(ManifestPath(out_dir), ManifestToJson(m).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Scoring records.

struct ScoreRecord {
  std::string utterance_id;
  int ref_speakers = 0;
  WerReport wer;
  std::vector<int> assignment;
};

struct ScoreSummaryRow {
  std::string condition;
  int utterances = 0;
  WerReport wer;
};

/// Tab-separated `utt_id  num_speakers  serialized_tokens`; the speaker count
/// column may be omitted from hypothesis files.
inline std::map<std::string, std::pair<int, SerializedTranscript>> ReadTranscriptManifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(StrCat("cannot open transcript manifest ", path));
  std::map<std::string, std::pair<int, SerializedTranscript>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, '\t');) cols.push_back(c);
    int speakers = 0;
    std::string text;
    if (cols.size() == 2) {
      text = cols[1];
    } else if (cols.size() == 3) {
      try {
        speakers = std::stoi(cols[1]);
      } catch (const std::exception&) {
        throw DataError(StrCat(path, ":", lineno, ": bad speaker count"));
      }
      text = cols[2];
    } else if (cols.size() != 1) {
      throw DataError(StrCat(path, ":", lineno, ": expected 2 or 3 tab-separated columns"));
    }
    if (cols[0].empty()) throw DataError(StrCat(path, ":", lineno, ": empty utterance id"));
    if (!out.emplace(cols[0], std::make_pair(speakers, SerializedTranscript::FromString(text))).second)
      throw DataError(StrCat(path, ":", lineno, ": duplicate utterance ", cols[0]));
  }
  return out;
}

inline std::string FormatTranscriptLine(const std::string& id, int speakers, const SerializedTranscript& t) {
  return StrCat(id, '\t', speakers, '\t', t.ToString(), '\n');
}

/// Scores t-SOT hypotheses against references by deserializing both into
/// channels and taking the best speaker permutation. A reference missing from
/// the hypotheses counts as an empty hypothesis.
inline std::vector<ScoreRecord> ScoreTranscripts(
    const std::map<std::string, std::pair<int, SerializedTranscript>>& hyps,
    const std::map<std::string, std::pair<int, SerializedTranscript>>& refs) {
  std::vector<ScoreRecord> out;
  for (const auto& [id, ref] : refs) {
    const ChannelTranscripts r = Deserialize(ref.second);
    ChannelTranscripts h;
    if (auto it = hyps.find(id); it != hyps.end()) h = Deserialize(it->second.second);
    auto upper = [](std::vector<std::string> v) {
      TokenSeq out;
      for (const auto& w : v)
        for (auto& t : NormalizeText(w)) out.push_back(std::move(t));
      return out;
    };
    std::vector<TokenSeq> hc = {upper(h.channels[0]), upper(h.channels[1])};
    std::vector<TokenSeq> rc = {upper(r.channels[0]), upper(r.channels[1])};
    ScoreRecord rec;
    rec.utterance_id = id;
    rec.ref_speakers = ref.first > 0 ? ref.first : int(!rc[0].empty()) + int(!rc[1].empty());
    const PermutationResult p = PermutationWer(hc, rc);
    rec.wer = p.pooled;
    rec.assignment = p.assignment;
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<ScoreSummaryRow> SummarizeScores(const std::vector<ScoreRecord>& records) {
  std::vector<ScoreSummaryRow> rows = {{"1spk", 0, {}}, {"2spk", 0, {}}, {"total", 0, {}}};
  for (const auto& r : records) {
    auto& row = rows[r.ref_speakers >= 2 ? 1 : 0];
    ++row.utterances;
    row.wer += r.wer;
    ++rows[2].utterances;
    rows[2].wer += r.wer;
  }
  return rows;
}

inline std::string FormatSummaryTable(const std::vector<ScoreSummaryRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "condition" << std::right << std::setw(6) << "utts" << std::setw(8) << "words"
     << std::setw(6) << "sub" << std::setw(6) << "del" << std::setw(6) << "ins" << std::setw(9) << "WER(%)" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(10) << r.condition << std::right << std::setw(6) << r.utterances << std::setw(8)
       << r.wer.reference_length << std::setw(6) << r.wer.substitutions << std::setw(6) << r.wer.deletions
       << std::setw(6) << r.wer.insertions << std::setw(9);
    if (r.wer.reference_length > 0)
      os << std::fixed << std::setprecision(2) << 100.0 * r.wer.wer();
    else
      os << "-";
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Stage runner.

struct StageReport {
  Stage stage{};
  StageRecord record;
  std::string message;  // human-readable result line(s)
};

namespace detail {

/// Collects a stage's outputs; artifact paths are stored relative to out_dir.
class StageContext {
 public:
  StageContext(const ExperimentConfig& cfg, Stage stage, RunManifest& manifest)
      : cfg_(cfg), stage_(stage), manifest_(manifest) {
    std::filesystem::remove_all(cfg.Dir(stage));
    std::filesystem::create_directories(cfg.Dir(stage));
  }

  std::filesystem::path Path(const std::string& name) const { return cfg_.Dir(stage_) / name; }

  void Record(const std::filesystem::path& p) {
    ArtifactRecord a;
    a.path = std::filesystem::relative(p, cfg_.out_dir).generic_string();
    a.hash = HashFile(p);
    a.bytes = std::filesystem::file_size(p);
    record_.artifacts.push_back(std::move(a));
  }
  void Write(const std::string& name, const std::string& bytes) {
    WriteFileAtomic(Path(name), bytes);
    Record(Path(name));
  }

  /// Upstream artifact path after checking the producing stage completed and
  /// the file still matches its recorded hash.
  std::filesystem::path Require(Stage upstream, const std::string& name) const {
    const StageRecord* s = manifest_.Find(upstream);
    const std::string rel = StrCat(StageName(upstream), "/", name);
    if (!s)
      throw DependencyError(StrCat("stage '", StageName(stage_), "' needs ", rel, "; run stage '",
                                   StageName(upstream), "' first"));
    const std::filesystem::path p = std::filesystem::path(cfg_.out_dir) / rel;
    for (const auto& a : s->artifacts) {
      if (a.path != rel) continue;
      if (!std::filesystem::exists(p) || HashFile(p) != a.hash)
        throw DependencyError(StrCat(rel, " is missing or changed since stage '", StageName(upstream),
                                     "' ran; run stage '", StageName(upstream), "' again"));
      return p;
    }
    throw DependencyError(StrCat("stage '", StageName(upstream), "' did not record ", rel, "; run stage '",
                                 StageName(upstream), "' again"));
  }

  StageRecord& record() { return record_; }

 private:
  const ExperimentConfig& cfg_;
  Stage stage_;
  RunManifest& manifest_;
  StageRecord record_;
};

inline std::string JsonLine(const nlohmann::json& j) { return j.dump() + "\n"; }

inline Corpus LoadStageCorpus(const ExperimentConfig& cfg, const StageContext& ctx) {
  if (!cfg.corpus_manifest.empty()) return ReadCorpusManifest(cfg.corpus_manifest);
  return ReadCorpusManifest(ctx.Require(Stage::kSynth, "corpus.tsv").string());
}

inline Corpus LoadNoiseCorpus(const ExperimentConfig& cfg) {
  return cfg.noise_manifest.empty() ? Corpus{} : ReadCorpusManifest(cfg.noise_manifest);
}

inline std::vector<FinetuneItem> StageFinetuneItems(const ExperimentConfig& cfg, const Corpus& corpus,
                                                    const NormStats& stats, const Vocabulary& vocab, bool heldout,
                                                    int count) {
  FinetuneMixStream stream(corpus, cfg.finetune_mix, cfg.StageSeed(Stage::kFinetune, 0));
  // Held-out examples come from a disjoint index range of the same stream.
  return BuildFinetuneSet(stream, std::size_t(count), stats, vocab, heldout ? std::size_t(1) << 20 : 0);
}

inline std::string ReferenceManifest(const std::vector<FinetuneItem>& items) {
  std::string out;
  for (const auto& it : items) out += FormatTranscriptLine(it.id, it.mixed ? 2 : 1, it.target);
  return out;
}

inline void RunSynth(const ExperimentConfig& cfg, StageContext& ctx, StageReport& rep) {
  SynthOptions opt;
  opt.num_utterances = cfg.synth_utterances;
  Corpus corpus = MakeSyntheticCorpus(cfg.seed, opt);
  const auto dir = cfg.Dir(Stage::kSynth);
  WriteSyntheticCorpus(dir.string(), corpus);
  for (const auto& r : corpus) {
    ctx.Record(dir / r.audio_path);
    ctx.Record(dir / r.transcript_path);
  }
  ctx.Record(dir / "corpus.tsv");
  ctx.record().summary = {{"utterances", corpus.size()}};
  rep.message = StrCat("wrote ", corpus.size(), " synthetic utterances to ", dir.string());
}

inline void RunFeatures(const ExperimentConfig& cfg, StageContext& ctx, StageReport& rep) {
  const Corpus corpus = LoadStageCorpus(cfg, ctx);
  const std::vector<FeatureSequence> feats = FeaturizeCorpus(corpus);
  std::filesystem::create_directories(ctx.Path("fbank"));
  std::string index;
  long total = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::string rel = "fbank/" + corpus[i].utterance_id + ".feat";
    WriteFeatures(ctx.Path(rel).string(), feats[i]);
    ctx.Record(ctx.Path(rel));
    index += StrCat(corpus[i].utterance_id, '\t', rel, '\t', feats[i].num_frames(), '\n');
    total += feats[i].num_frames();
  }
  ctx.Write("features.tsv", index);
  WriteNormStats(ctx.Path("normstats.bin").string(), FitNormStats(feats));
  ctx.Record(ctx.Path("normstats.bin"));
  ctx.record().summary = {{"utterances", corpus.size()}, {"frames", total}};
  rep.message = StrCat("extracted ", total, " frames from ", corpus.size(), " utterances");
}

inline void RunQuantize(const ExperimentConfig& cfg, StageContext& ctx, StageReport& rep) {
  const Corpus corpus = LoadStageCorpus(cfg, ctx);
  const NormStats stats = ReadNormStats(ctx.Require(Stage::kFeatures, "normstats.bin").string());
  ctx.Require(Stage::kFeatures, "features.tsv");
  std::filesystem::create_directories(ctx.Path("labels"));
  const char* ext = cfg.label_format == LabelFormat::kText ? ".lab" : ".labbin";

  if (cfg.quantizer == QuantizerKind::kImport) {
    // Imported streams are validated against the corpus and copied in, so
    // later stages never read outside the run directory.
    for (const auto& r : corpus) {
      const auto src = std::filesystem::path(cfg.import_dir) / (r.utterance_id + ext);
      if (!std::filesystem::exists(src)) throw DataError(StrCat("missing imported labels ", src.string()));
      const LabelStream s = ImportLabels(src.string(), cfg.kmeans.num_clusters, cfg.label_format);
      const int want = EncoderFrames(NumFrames(r.audio.size()));
      if (int(s.size()) != want)
        throw ShapeError(StrCat(src.string(), ": ", s.size(), " labels, utterance has ", want, " encoder frames"));
      const std::string rel = StrCat("labels/", r.utterance_id, ext);
      ExportLabels(ctx.Path(rel).string(), s, cfg.label_format);
      ctx.Record(ctx.Path(rel));
    }
    ctx.record().summary = {{"method", "import"}, {"utterances", corpus.size()}};
    rep.message = StrCat("imported label streams for ", corpus.size(), " utterances");
    return;
  }

  // Features are recomputed from audio (cheap) rather than decoded from the
  // float32 containers, keeping k-means inputs in full precision.
  std::vector<FeatureSequence> normalized;
  for (const auto& f : FeaturizeCorpus(corpus)) normalized.push_back(Normalize(f, stats));
  KMeansOptions opt = cfg.kmeans;
  opt.seed = cfg.StageSeed(Stage::kQuantize);
  const KMeansResult km = TrainKMeans(normalized, opt);
  WriteCodebook(ctx.Path("codebook.bin").string(), km.codebook);
  ctx.Record(ctx.Path("codebook.bin"));
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::string rel = StrCat("labels/", corpus[i].utterance_id, ext);
    ExportLabels(ctx.Path(rel).string(), AssignLabels(normalized[i], km.codebook), cfg.label_format);
    ctx.Record(ctx.Path(rel));
  }
  ctx.record().summary = {{"method", "kmeans-fbank"},
                          {"clusters", cfg.kmeans.num_clusters},
                          {"iterations", km.inertia.size()},
                          {"inertia", km.inertia.empty() ? 0.0 : km.inertia.back()}};
  rep.message = StrCat("k-means: ", cfg.kmeans.num_clusters, " clusters, ", km.inertia.size(),
                       " iterations, inertia ", km.inertia.empty() ? 0.0 : km.inertia.back());
}

inline void RunPretrain(const ExperimentConfig& cfg, StageContext& ctx, StageReport& rep) {
  const Corpus corpus = LoadStageCorpus(cfg, ctx);
  const Corpus noise = LoadNoiseCorpus(cfg);
  const NormStats stats = ReadNormStats(ctx.Require(Stage::kFeatures, "normstats.bin").string());
  const std::size_t n = cfg.pretrain_primaries > 0 ? std::min<std::size_t>(cfg.pretrain_primaries, corpus.size())
                                                   : corpus.size();
  const Corpus primaries(corpus.begin(), corpus.begin() + std::ptrdiff_t(n));
  const uint64_t mix_seed = cfg.StageSeed(Stage::kPretrain, 0);

  std::vector<PretrainItem> items;
  if (cfg.quantizer == QuantizerKind::kKMeansFbank) {
    const Codebook cb = ReadCodebook(ctx.Require(Stage::kQuantize, "codebook.bin").string());
    items = BuildPretrainSet(primaries, corpus, cfg.augment, stats, cb, mix_seed, noise);
  } else {
    const char* ext = cfg.label_format == LabelFormat::kText ? ".lab" : ".labbin";
    std::map<std::string, LabelStream> labels;
    for (const auto& r : corpus)
      labels[r.utterance_id] = ImportLabels(
          ctx.Require(Stage::kQuantize, StrCat("labels/", r.utterance_id, ext)).string(), cfg.kmeans.num_clusters,
          cfg.label_format);
    items = BuildPretrainSetImported(primaries, corpus, cfg.augment, stats, labels, mix_seed, noise);
  }

  std::string mixes;
  int clipped = 0;
  for (const auto& it : items) {
    const MixSpec& s = it.spec;
    mixes += StrCat(s.primary_id, '\t', MixKindName(s.kind), '\t', s.secondary_id.empty() ? "-" : s.secondary_id,
                    '\t', s.segment_start, '\t', s.segment_length, '\t', s.insert_offset, '\t', s.snr_db, '\t',
                    it.clipped, '\n');
    clipped += it.clipped;
  }
  ctx.Write("mixes.tsv", mixes);

  const std::vector<PretrainExample> data = ExamplesOf(items);
  PretrainModel model(cfg.encoder, cfg.msp, cfg.StageSeed(Stage::kPretrain, 1));
  PretrainOptions opt;
  opt.objective = cfg.objective;
  opt.chunk = cfg.chunk;
  opt.spans = cfg.spans;
  opt.adam = cfg.pretrain_adam;
  opt.steps = cfg.pretrain_steps;
  opt.batch_size = cfg.pretrain_batch;
  Rng rng(cfg.StageSeed(Stage::kPretrain, 2));
  std::string log;
  Pretrain(model, data, opt, rng, [&](const PretrainStepLog& r) {
    log += JsonLine({{"step", r.step}, {"loss", r.loss}, {"acc_primary", r.accuracy_primary},
                     {"acc_secondary", r.accuracy_secondary}, {"lr", r.lr}});
  });
  ctx.Write("train_log.jsonl", log);

  WriteCheckpoint(ctx.Path("model.ckpt").string(), CaptureCheckpoint(model.params(), model.ConfigEcho(cfg.objective),
                                                                     rng.SaveState()));
  ctx.Record(ctx.Path("model.ckpt"));

  const MaskedAccuracy acc = EvaluateMaskedAccuracy(model, data, cfg.objective, cfg.chunk, cfg.spans,
                                                    cfg.StageSeed(Stage::kPretrain, 3));
  ctx.record().summary = {{"objective", ObjectiveName(cfg.objective)},
                          {"examples", data.size()},
                          {"clipped_samples", clipped},
                          {"masked_accuracy_primary", acc.primary},
                          {"masked_accuracy_secondary", acc.secondary}};
  ctx.Write("eval.json", ctx.record().summary.dump(2) + "\n");
  rep.message = StrCat(ObjectiveName(cfg.objective), " pre-training on ", data.size(),
                       " examples: masked accuracy primary ", acc.primary, ", secondary ", acc.secondary);
}

inline void RunFinetune(const ExperimentConfig& cfg, StageContext& ctx, StageReport& rep) {
  const Corpus corpus = LoadStageCorpus(cfg, ctx);
  const NormStats stats = ReadNormStats(ctx.Require(Stage::kFeatures, "normstats.bin").string());
  std::optional<Checkpoint> pretrained;
  if (cfg.finetune_from_pretrained) pretrained = ReadCheckpoint(ctx.Require(Stage::kPretrain, "model.ckpt").string());

  const Vocabulary vocab = VocabularyOf(corpus);
  const auto items = StageFinetuneItems(cfg, corpus, stats, vocab, false, cfg.finetune_examples);
  ctx.Write("train_ref.tsv", ReferenceManifest(items));

  TransducerModel model(cfg.encoder, cfg.transducer, vocab, cfg.StageSeed(Stage::kFinetune, 1));
  const int restored = pretrained ? InitializeFromPretrained(model, *pretrained) : 0;
  FinetuneOptions opt;
  opt.chunk = cfg.chunk;
  opt.adam = cfg.finetune_adam;
  opt.steps = cfg.finetune_steps;
  opt.batch_size = cfg.finetune_batch;
  opt.freeze_frontend = cfg.freeze_frontend;
  Rng rng(cfg.StageSeed(Stage::kFinetune, 2));
  std::string log;
  double last = 0.0;
  Finetune(model, ExamplesOf(items), opt, rng, [&](const FinetuneStepLog& r) {
    log += JsonLine({{"step", r.step}, {"loss", r.loss}, {"lr", r.lr}});
    last = r.loss;
  });
  ctx.Write("train_log.jsonl", log);
  WriteCheckpoint(ctx.Path("model.ckpt").string(), CaptureCheckpoint(model.params(), model.ConfigEcho(), rng.SaveState()));
  ctx.Record(ctx.Path("model.ckpt"));
  ctx.record().summary = {{"examples", items.size()},
                          {"restored_tensors", restored},
                          {"vocabulary", vocab.Joined()},
                          {"final_loss", last}};
  rep.message = StrCat("fine-tuned on ", items.size(), " examples (", restored,
                       " tensors from pre-training), final loss ", last);
}

inline void RunDecode(const ExperimentConfig& cfg, StageContext& ctx, StageReport& rep) {
  const Corpus corpus = LoadStageCorpus(cfg, ctx);
  const NormStats stats = ReadNormStats(ctx.Require(Stage::kFeatures, "normstats.bin").string());
  const Checkpoint ck = ReadCheckpoint(ctx.Require(Stage::kFinetune, "model.ckpt").string());
  const Vocabulary vocab = Vocabulary::FromJoined(ck.ConfigOr("tt.vocab", ""));
  TransducerModel model(EncoderConfigFromEcho(ck), TransducerConfigFromEcho(ck), vocab, 0);
  RestoreParameters(ck, model.params());

  const auto items = StageFinetuneItems(cfg, corpus, stats, vocab, cfg.decode_heldout, cfg.decode_examples);
  std::string hyp, log;
  int cap_hits = 0;
  for (const auto& it : items) {
    const DecodeResult d = DecodeStreaming(model, it.example.features, cfg.chunk);
    hyp += FormatTranscriptLine(it.id, 0, d.transcript);
    cap_hits += d.stats.cap_hits;
    log += JsonLine({{"id", it.id}, {"frames", d.stats.frames_consumed}, {"cap_hits", d.stats.cap_hits}});
  }
  ctx.Write("hyp.tsv", hyp);
  ctx.Write("ref.tsv", ReferenceManifest(items));
  ctx.Write("decode_log.jsonl", log);
  ctx.record().summary = {{"utterances", items.size()},
                          {"split", cfg.decode_heldout ? "heldout" : "train"},
                          {"latency_ms", LatencyMs(cfg.chunk, 40.0)},
                          {"emission_cap_hits", cap_hits}};
  rep.message = StrCat("decoded ", items.size(), " utterances (", cfg.decode_heldout ? "held-out" : "training",
                       " split)");
}

inline void RunScore(const ExperimentConfig& cfg, StageContext& ctx, StageReport& rep) {
  std::filesystem::path hyp_path, ref_path;
  if (cfg.score_hyp.empty()) {
    hyp_path = ctx.Require(Stage::kDecode, "hyp.tsv");
    ref_path = ctx.Require(Stage::kDecode, "ref.tsv");
  } else {
    hyp_path = cfg.score_hyp;
    ref_path = cfg.score_ref;
  }
  const auto records = ScoreTranscripts(ReadTranscriptManifest(hyp_path.string()),
                                        ReadTranscriptManifest(ref_path.string()));
  std::string per;
  per += "utt_id\tspeakers\tref_words\tsub\tdel\tins\twer\n";
  for (const auto& r : records)
    per += StrCat(r.utterance_id, '\t', r.ref_speakers, '\t', r.wer.reference_length, '\t', r.wer.substitutions, '\t',
                  r.wer.deletions, '\t', r.wer.insertions, '\t', r.wer.wer(), '\n');
  ctx.Write("per_utt.tsv", per);
  const auto rows = SummarizeScores(records);
  const std::string table = FormatSummaryTable(rows);
  ctx.Write("summary.txt", table);
  nlohmann::json s = nlohmann::json::object();
  for (const auto& r : rows)
    s[r.condition] = {{"utterances", r.utterances}, {"words", r.wer.reference_length}, {"errors", r.wer.errors()},
                      {"wer", r.wer.wer()}};
  ctx.record().summary = s;
  rep.message = table;
}

}  // namespace detail

/// Runs one stage, records its artifacts and timing, and rewrites the run
/// manifest. Throws DependencyError when an upstream stage has not run.
inline StageReport RunStage(const ExperimentConfig& cfg, Stage stage) {
  RunManifest manifest = LoadManifest(cfg.out_dir);
  StageReport rep;
  rep.stage = stage;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    detail::StageContext ctx(cfg, stage, manifest);
    switch (stage) {
      case Stage::kSynth: detail::RunSynth(cfg, ctx, rep); break;
      case Stage::kFeatures: detail::RunFeatures(cfg, ctx, rep); break;
      case Stage::kQuantize: detail::RunQuantize(cfg, ctx, rep); break;
      case Stage::kPretrain: detail::RunPretrain(cfg, ctx, rep); break;
      case Stage::kFinetune: detail::RunFinetune(cfg, ctx, rep); break;
      case Stage::kDecode: detail::RunDecode(cfg, ctx, rep); break;
      case Stage::kScore: detail::RunScore(cfg, ctx, rep); break;
    }
    rep.record = std::move(ctx.record());
  } catch (...) {
    // The stage directory was cleared on entry, so its old record is void.
    if (manifest.stages.erase(StageName(stage))) SaveManifest(cfg.out_dir, manifest);
    throw;
  }
  rep.record.config_hash = cfg.Hash();
  rep.record.seed = cfg.seed;
  rep.record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  manifest.version = kVersion;
  manifest.config_hash = cfg.Hash();
  manifest.config = cfg.raw;
  manifest.stages[StageName(stage)] = rep.record;
  SaveManifest(cfg.out_dir, manifest);
  return rep;
}

}  // namespace mtssl
