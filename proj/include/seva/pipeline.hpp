// Copyright 2026 The SEVA Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Experiment configuration and the end-to-end pipeline stages shared by the
// command-line driver and the tests: corpus generation, feature extraction,
// embedder training and severity assessment, acoustic model training,
// test-time adaptation, decoding, rescoring and scoring, plus the
// aux / target / LHUC ablation grid.

#pragma once

#include "seva/adaptation.hpp"
#include "seva/corpus.hpp"
#include "seva/decoder.hpp"
#include "seva/embedder.hpp"
#include "seva/evaluate.hpp"
#include "seva/features.hpp"
#include "seva/hybrid_am.hpp"
#include "seva/seqmodel.hpp"

#include <functional>
#include <map>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace seva {

// ---------------------------------------------------------------- logging

enum class LogLevel { kError = 0, kWarn, kInfo, kDebug };

/// Reads SEVA_LOG (error|warn|info|debug); defaults to warn.
LogLevel log_level_from_env();
void set_log_level(LogLevel level);
LogLevel log_level();
void log_message(LogLevel level, const std::string& msg);

// ----------------------------------------------------------------- config

struct CorpusSection {
  std::uint64_t seed = 1;
  std::size_t speakers_per_severity = 4;
  std::size_t num_words = 30;
  double phone_duration = 0.07;
  bool augment = false;
  std::size_t heldout_speakers_per_severity = 2;
};

struct EmbedderSection {
  TrainConfig train{0.05, 40, 32, 1, {}};
  std::vector<std::size_t> hidden = {64, 64};
};

struct AmSection {
  HybridOptions options;
  bool lhuc_sat = false;
  TrainConfig train{0.2, 12, 128, 1, {}};
  HybridArch arch;
  bool assessed_severity = true;  // test-time r_seve from assessment (else oracle)
};

struct AdaptSection {
  bool enabled = true;
  AdaptConfig cfg;
  bool assessed_severity = true;
};

struct SeqSection {
  bool use_severity = true;
  TrainConfig train{0.05, 30, 16, 1, {}};
  SeqArch arch;
};

struct DecodeSection {
  std::size_t nbest = kDefaultNBest;
  RescoreWeights weights;  // empty: uniform over first_pass and ctc
  bool rescore = false;
};

struct EvalSection {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  bool missing_is_error = false;
};

struct ExperimentConfig {
  CorpusSection corpus;
  FrontendConfig features;
  EmbedderSection embedder;
  AmSection am;
  AdaptSection adaptation;
  SeqSection seq;
  DecodeSection decode;
  EvalSection eval;

  /// Throws DataError on unknown keys or invalid values.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  /// Applies a seed override to every seeded section.
  void set_seed(std::uint64_t seed);
  void validate() const;
};

// --------------------------------------------------------------- parallel

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index must
/// write only its own output slot; the first exception is rethrown.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

// ----------------------------------------------------------------- stages

struct UtteranceFeatures {
  std::string id;
  FeatureMatrix fbank;  // T x 160
  Vector bases;         // flattened spectral bases
};

std::vector<UtteranceFeatures> extract_features(const Corpus& corpus, const FrontendConfig& cfg, std::size_t workers);

Corpus make_corpus(const CorpusSection& cfg);
/// Speakers unseen in training, with ids prefixed "X".
Corpus make_heldout_corpus(const CorpusSection& cfg);

EmbedderNet train_embedder_stage(const Corpus& corpus, const std::vector<UtteranceFeatures>& feats,
                                 const EmbedderSection& cfg);
std::vector<Vector> aux_vectors(const EmbedderNet& net, const std::vector<UtteranceFeatures>& feats,
                                std::size_t workers);

/// Speaker -> assessed severity over the utterances `indices`.
std::map<std::string, SeverityAssessment> assess_speakers(const EmbedderNet& net, const Corpus& corpus,
                                                          const std::vector<UtteranceFeatures>& feats,
                                                          const std::vector<std::size_t>& indices);

std::vector<AmUtterance> am_data(const Corpus& corpus, const std::vector<UtteranceFeatures>& feats,
                                 const std::vector<Vector>* aux, const std::vector<std::size_t>& indices,
                                 const FrontendConfig& frontend);

struct TrainedAm {
  HybridDNN model;
  LhucParams lhuc;
};

TrainedAm train_am_stage(const std::vector<AmUtterance>& data, const AmSection& cfg);

/// Per-speaker test-time LHUC keys.
struct DecodePolicy {
  std::map<std::string, SeverityLevel> severity;  // applied when non-empty entry exists
  bool use_speaker = false;                        // apply r_spkr[speaker] when present
};

std::vector<NBestList> decode_stage(const TrainedAm& am, const Corpus& corpus,
                                    const std::vector<UtteranceFeatures>& feats, const std::vector<Vector>* aux,
                                    const std::vector<std::size_t>& indices, const DecodePolicy& policy,
                                    std::size_t nbest, std::size_t workers);

/// Adapts r_spkr for every speaker of `indices`; returns a copy of `am` with
/// the new vectors. Log lines go to `log` in speaker order.
TrainedAm adapt_stage(const TrainedAm& am, const Corpus& corpus, const std::vector<UtteranceFeatures>& feats,
                      const std::vector<Vector>* aux, const std::vector<std::size_t>& indices,
                      const std::map<std::string, SeverityLevel>& severity, const AdaptConfig& cfg,
                      std::size_t workers, std::ostream* log = nullptr);

std::vector<SeqUtterance> seq_data(const Corpus& corpus, const std::vector<UtteranceFeatures>& feats,
                                   const GraphemeVocab& vocab, const std::vector<std::size_t>& indices);

/// Adds "ctc" scores to every hypothesis.
void ctc_rescore_stage(std::vector<NBestList>& lists, const CtcModel& model, const Corpus& corpus,
                       const std::vector<UtteranceFeatures>& feats, std::size_t workers);

std::vector<Reference> references(const Corpus& corpus, const std::vector<std::size_t>& indices);
std::map<std::string, std::string> first_pass_hyps(const std::vector<NBestList>& lists);
std::map<std::string, std::string> rescored_hyps(const std::vector<NBestList>& lists, const RescoreWeights& weights);

/// `id<TAB>word` lines.
void write_hyps(std::ostream& os, const std::map<std::string, std::string>& hyps);
std::map<std::string, std::string> read_hyps(std::istream& is);
/// `id<TAB>tag<TAB>text` lines.
void write_refs(std::ostream& os, const std::vector<Reference>& refs);
std::vector<Reference> read_refs(std::istream& is);

// --------------------------------------------------------------- ablation

struct AblationCell {
  bool aux = false;
  bool seve_head = false;
  bool lhuc_seve = false;

  std::string label() const;
};

/// The 2^3 grid, all-off first.
std::vector<AblationCell> ablation_grid();

struct SeedData {
  std::uint64_t seed = 0;
  Corpus corpus;
  std::vector<UtteranceFeatures> feats;
  EmbedderNet embedder;
  std::vector<Vector> aux;
  std::map<std::string, SeverityLevel> assessed;
};

/// Corpus, features, embedder and assessments for one seed.
SeedData prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t workers);

ScoredResult run_ablation_cell(const ExperimentConfig& cfg, const SeedData& data, const AblationCell& cell,
                               std::size_t workers);

/// Trains the grapheme CTC model on the training blocks and recognises each
/// test utterance as the lexicon word with the highest CTC score.
ScoredResult run_seq_system(const ExperimentConfig& cfg, const SeedData& data, bool use_severity, std::size_t workers);

struct AblationResult {
  std::vector<AblationCell> cells;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<ScoredResult>> results;  // [cell][seed]

  double mean_wer(std::size_t cell, const std::string& group = kAllGroup) const;
  /// Per-utterance errors of a cell pooled over seeds.
  std::vector<double> pooled_errors(std::size_t cell) const;
};

AblationResult run_ablation(const ExperimentConfig& cfg, std::size_t workers,
                            const std::function<void(const std::string&)>& progress = {});

/// Mean-over-seeds table with "*" marks where MAPSSWE against the all-off
/// baseline is significant.
void write_ablation_table(std::ostream& os, const AblationResult& r);

// ------------------------------------------------------------ artifacts

/// Stage names and the subcommand that produces each.
struct StageInfo {
  std::string name;
  std::string producer;
};

/// Content hash of the configuration sections a stage depends on.
std::string stage_hash(const ExperimentConfig& cfg, const std::string& stage);
void write_stamp(const std::filesystem::path& dir, const ExperimentConfig& cfg, const std::string& stage);
/// Throws DataError naming the producing subcommand when `dir` lacks a
/// stamp or its hash differs from the current configuration.
void require_stamp(const std::filesystem::path& dir, const ExperimentConfig& cfg, const std::string& stage,
                   const std::string& producer);

}  // namespace seva
