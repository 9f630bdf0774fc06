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

// Speaker-severity adaptive training, unsupervised test-time LHUC
// adaptation, and KL-regularised fine-tuning of a speaker-independent model.
//
// Fine-tuning minimises, per frame,
//
//   (1 - lambda) * CE(onehot) + lambda * CE(p_SI)
//
// i.e. cross entropy against the interpolated target
// (1 - lambda) * onehot + lambda * p_SI. The regulariser pulls the adapted
// output toward the frozen model's distribution.

#pragma once

#include "seva/hybrid_am.hpp"

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace seva {

struct AdaptConfig {
  double lambda = 0.5;
  std::size_t adapt_epochs = 10;
  double adapt_lr = 1.0;
  // true: pseudo targets come from a decoding pass (the supplied labeler);
  // false: from the frame-wise argmax of the unadapted posteriors.
  bool pseudo_label_pass = true;

  void validate() const;
};

struct SatResult {
  HybridDNN model;
  LhucParams lhuc;
  std::vector<double> epoch_losses;
};

/// Each epoch runs a trunk/head pass with speaker LHUC applied, then a pass
/// over the speaker (and severity, when enabled) vectors with the network
/// frozen. With `freeze_lhuc` the second pass is skipped, which reduces to
/// train_am. Throws DataError for a listed speaker without utterances.
SatResult sat_train(std::span<const AmUtterance> data, const TrainConfig& cfg, const HybridOptions& options,
                    const HybridArch& arch = {}, bool freeze_lhuc = false,
                    const std::vector<std::string>& required_speakers = {});

/// Maps unadapted tri-state posteriors (T x S) to per-frame pseudo targets.
using PseudoLabeler = std::function<std::vector<int>(const Matrix& tri_posteriors)>;

std::vector<int> argmax_labels(const Matrix& posteriors);

struct AdaptResult {
  Vector r_spkr;
  std::vector<double> epoch_losses;  // loss before each epoch's step, then final
};

/// Test-time adaptation of one new speaker's r_spkr by full-batch gradient
/// descent on tri-state CE to pseudo targets, with r_seve fixed to the
/// assessed level. The model and `lhuc` are not modified. Steps that would
/// increase the loss are retried at half the step size. Writes
/// `epoch<TAB>speaker<TAB>loss` lines to `log` when non-null.
AdaptResult adapt_speaker(const HybridDNN& model, const LhucParams& lhuc, std::span<const AmUtterance> utterances,
                          const std::string& speaker, SeverityLevel assessed, const AdaptConfig& cfg,
                          const PseudoLabeler* labeler = nullptr, std::ostream* log = nullptr);

/// Interpolated-target cross entropy, mean over frames, and its gradient
/// w.r.t. the logits.
BatchCeResult kld_loss(const Matrix& logits, std::span<const int> hard, const Matrix& p_si, double lambda);

struct KldResult {
  HybridDNN model;
  std::vector<double> epoch_losses;
};

/// Fine-tunes trunk and tri-state head of a copy of `si` on `subset`. The
/// speaker-independent posteriors come from `si` itself, kept frozen.
KldResult kld_finetune(const HybridDNN& si, std::span<const AmUtterance> subset, const AdaptConfig& acfg,
                       const TrainConfig& cfg);

/// Mean over frames of KL(p_SI || p_model) on tri-state posteriors.
double kl_to_reference(const HybridDNN& model, const HybridDNN& reference, std::span<const AmUtterance> data);

}  // namespace seva
