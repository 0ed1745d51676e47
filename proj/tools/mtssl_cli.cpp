// tools/mtssl_cli.cpp

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
// mtssl command-line driver. Every subcommand reads the same flat config
// (file plus --set overrides) and works inside --out-dir.
//
//   mtssl synth --out-dir run
//   mtssl features --out-dir run
//   ...
//   mtssl score --out-dir run
//   mtssl mask-dump --frames 9 --chunk 3 --history 2

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mtssl/harness.hpp"
#include "mtssl/streammask.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  std::optional<std::string> out_dir;
};

void AddCommon(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config_path, "Flat key = value configuration file");
  sub->add_option("--seed", f.seed, "Master seed (overrides the config value)");
  sub->add_option("--out-dir", f.out_dir, "Run directory (overrides the config value)");
  sub->add_option("--set", f.overrides, "Config override KEY=VALUE (repeatable)");
}

mtssl::ExperimentConfig ResolveConfig(const CommonFlags& f, std::vector<std::string> extra) {
  mtssl::ConfigMap map = f.config_path.empty() ? mtssl::ConfigMap{} : mtssl::ReadConfigFile(f.config_path);
  map = mtssl::ApplyOverrides(std::move(map), f.overrides);
  map = mtssl::ApplyOverrides(std::move(map), extra);
  if (f.seed) map["seed"] = std::to_string(*f.seed);
  if (f.out_dir) map["out_dir"] = *f.out_dir;
  return mtssl::ExperimentConfig::FromMap(map);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtssl: streaming multi-talker self-supervised pre-training toolkit"};
  app.set_version_flag("--version", std::string(mtssl::kVersion));
  app.require_subcommand(1);
  CommonFlags common;

  std::vector<std::pair<CLI::App*, mtssl::Stage>> stage_cmds;
  auto add_stage = [&](mtssl::Stage s, const std::string& help) {
    CLI::App* sub = app.add_subcommand(mtssl::StageName(s), help);
    AddCommon(sub, common);
    stage_cmds.emplace_back(sub, s);
    return sub;
  };
  CLI::App* synth = add_stage(mtssl::Stage::kSynth, "Generate the synthetic tone-word corpus");
  int synth_size = 0;
  synth->add_option("--size", synth_size, "Number of utterances")->check(CLI::PositiveNumber);
  add_stage(mtssl::Stage::kFeatures, "Extract log-mel filterbank features and normalization statistics");
  CLI::App* quantize = add_stage(mtssl::Stage::kQuantize, "Train the k-means quantizer or import label streams");
  std::string label_format;
  quantize->add_option("--label-format", label_format, "Label stream file format")
      ->check(CLI::IsMember({"text", "binary"}));
  add_stage(mtssl::Stage::kPretrain, "Masked speech prediction pre-training");
  add_stage(mtssl::Stage::kFinetune, "Transducer fine-tuning on serialized transcripts");
  add_stage(mtssl::Stage::kDecode, "Greedy streaming decoding");
  CLI::App* score = add_stage(mtssl::Stage::kScore, "Permutation-invariant WER scoring");
  std::string hyp, ref;
  score->add_option("--hyp", hyp, "Hypothesis manifest (default: decode outputs)");
  score->add_option("--ref", ref, "Reference manifest (default: decode outputs)");

  CLI::App* mask = app.add_subcommand("mask-dump", "Print a chunk attention mask as 0/1 rows");
  AddCommon(mask, common);
  int frames = 0;
  std::optional<int> chunk, history;
  bool offline = false;
  mask->add_option("--frames", frames, "Sequence length T in encoder frames")->required()->check(CLI::PositiveNumber);
  mask->add_option("--chunk", chunk, "Chunk size (default: mask.chunk_size)");
  mask->add_option("--history", history, "History chunks h (default: mask.history_chunks)");
  mask->add_flag("--offline", offline, "Full-context mask");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (mask->parsed()) {
      std::vector<std::string> extra;
      if (chunk) extra.push_back("mask.chunk_size=" + std::to_string(*chunk));
      if (history) extra.push_back("mask.history_chunks=" + std::to_string(*history));
      if (offline) extra.push_back("mask.offline=true");
      const mtssl::ExperimentConfig cfg = ResolveConfig(common, extra);
      mtssl::DumpMask(std::cout, mtssl::BuildChunkMask(frames, cfg.chunk));
      return 0;
    }
    for (const auto& [sub, stage] : stage_cmds) {
      if (!sub->parsed()) continue;
      std::vector<std::string> extra;
      if (synth_size > 0) extra.push_back("synth.num_utterances=" + std::to_string(synth_size));
      if (!label_format.empty()) extra.push_back("quantize.label_format=" + label_format);
      if (!hyp.empty()) extra.push_back("score.hyp=" + hyp);
      if (!ref.empty()) extra.push_back("score.ref=" + ref);
      const mtssl::ExperimentConfig cfg = ResolveConfig(common, extra);
      const mtssl::StageReport rep = mtssl::RunStage(cfg, stage);
      std::cout << rep.message;
      if (rep.message.empty() || rep.message.back() != '\n') std::cout << '\n';
      std::cerr << mtssl::StageName(stage) << ": " << rep.record.artifacts.size() << " artifacts in "
                << rep.record.wall_seconds << " s\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "mtssl: " << e.what() << '\n';
    return mtssl::ExitCodeFor(e);
  }
  return 1;
}
