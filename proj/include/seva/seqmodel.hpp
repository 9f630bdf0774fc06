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

// Grapheme CTC model with an utterance-level severity head.
//
// The encoder is a feed-forward ReLU stack applied per frame to +-3 frames
// of spliced context. A CTC head (blank = 0) reads every encoder frame; the
// severity head reads the time-averaged encoder output. Training minimises
//
//   b_ctc * L_CTC + b_seve * L_Seve        (1/2 each)
//
// or pure CTC. A three-way form with an externally computed attention
// decoder loss is accepted by mtl_loss_seq.

#pragma once

#include "seva/features.hpp"
#include "seva/netcore.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace seva {

/// Grapheme indices in [1, V]; 0 is the CTC blank and never appears here.
using LabelSeq = std::vector<int>;

constexpr int kBlank = 0;

/// Symbol i (0-based) of the file maps to index i + 1.
class GraphemeVocab {
 public:
  GraphemeVocab() = default;
  explicit GraphemeVocab(std::vector<std::string> symbols);

  /// Sorted distinct characters of `words`.
  static GraphemeVocab from_words(const std::vector<std::string>& words);

  std::size_t size() const { return symbols_.size(); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  int index_of(const std::string& symbol) const;
  LabelSeq encode(const std::string& word) const;
  std::string decode(const LabelSeq& labels) const;

  void write(const std::filesystem::path& path) const;
  static GraphemeVocab read(const std::filesystem::path& path);

 private:
  std::vector<std::string> symbols_;
};

/// Minimum frames for a CTC path: |labels| plus one per adjacent repeat.
std::size_t ctc_min_frames(std::span<const int> labels);

struct CtcResult {
  double loss = 0.0;
  Matrix grad;  // w.r.t. logits
};

/// Negative log probability of `labels` under per-frame softmax(logits),
/// with its gradient. Throws DataError("sequence too short") when infeasible.
CtcResult ctc_loss(const Matrix& logits, std::span<const int> labels);

/// log p(labels | logits); -inf when infeasible.
double ctc_logprob(const Matrix& logits, std::span<const int> labels);

LossWeights seq_beta_weights();   // {ctc: 1/2, seve: 1/2}
LossWeights seq_alpha_weights();  // {ctc: 1/3, aed: 1/3, seve: 1/3}

/// Interpolates the sequence losses; a weighted component that is absent
/// (e.g. no attention-decoder loss in the three-way form) is an error.
LossValue mtl_loss_seq(double ctc, double seve, std::optional<double> aed, const LossWeights& weights);

struct SeqArch {
  std::vector<std::size_t> hidden = {256, 256};
  std::size_t context = 3;
};

struct CtcModel {
  std::size_t context = 3;
  Vector input_mean;   // per base feature
  Vector input_scale;
  NetParams encoder;
  NetParams ctc_head;
  NetParams seve_head;
  GraphemeVocab vocab;
};

/// Frames [t - c, t + c] stacked per row, edges replicated.
Matrix splice_frames(const Matrix& feats, std::size_t context);

CtcModel init_seq(const GraphemeVocab& vocab, std::size_t feat_dim, const SeqArch& arch, Rng& rng);

/// Normalised, spliced encoder input for one utterance.
Matrix seq_input(const CtcModel& model, const FeatureMatrix& feats);
Matrix ctc_logits(const CtcModel& model, const FeatureMatrix& feats);
Matrix ctc_posteriors(const CtcModel& model, const FeatureMatrix& feats);
Vector seq_severity_posterior(const CtcModel& model, const FeatureMatrix& feats);

/// log p(hypothesis | features); -inf when the hypothesis is too long.
double ctc_score(const CtcModel& model, const FeatureMatrix& feats, std::span<const int> hypothesis);

struct SeqUtterance {
  std::string id;
  std::string speaker;
  std::optional<SeverityLevel> severity;
  FeatureMatrix feats;
  LabelSeq labels;
};

/// Loss on a batch of normalised (unspliced) utterances; parameter
/// gradients accumulate into the model's buffers. Severities < 0 are only
/// allowed when the "seve" weight is zero.
double seq_batch_loss(CtcModel& model, std::span<const Matrix> inputs, std::span<const LabelSeq> labels,
                      std::span<const int> severities, const LossWeights& weights);

/// Minibatches of utterances; the batch loss is the mean over utterances of
/// the per-utterance CTC loss (and severity CE when enabled).
CtcModel train_seq(std::span<const SeqUtterance> data, const GraphemeVocab& vocab, const TrainConfig& cfg,
                   bool use_severity, const SeqArch& arch = {}, std::vector<double>* epoch_losses = nullptr);

/// Highest-scoring word of `words` (ties to the earlier entry).
std::size_t recognize_word(const CtcModel& model, const FeatureMatrix& feats, const std::vector<LabelSeq>& words);

void write_seq(std::ostream& os, const CtcModel& model);
CtcModel read_seq(std::istream& is);

}  // namespace seva
