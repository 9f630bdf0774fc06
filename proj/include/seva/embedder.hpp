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

// Spectral-basis embedding network. A three-layer ReLU trunk reads the
// flattened top spectral bases of an utterance and ends in a 25-dim
// bottleneck; a severity head and a speaker head both read the bottleneck.
// The bottleneck activation is the utterance's auxiliary feature, and the
// severity head gives unsupervised severity assessment of test speakers.

#pragma once

#include "seva/features.hpp"
#include "seva/netcore.hpp"

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace seva {

struct EmbedderNet {
  Vector input_mean;
  Vector input_scale;  // multiplies (x - mean)
  NetParams trunk;
  NetParams severity_head;
  NetParams speaker_head;
  std::vector<std::string> speakers;  // speaker-head class labels

  std::size_t input_dim() const { return trunk.input_dim(); }
  std::size_t bottleneck_dim() const { return trunk.output_dim(); }
};

struct EmbedderSample {
  std::string utterance_id;
  Vector input;  // flattened spectral bases
  std::size_t speaker = 0;
  SeverityLevel severity = SeverityLevel::kHigh;
};

struct EmbedderOptions {
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t bottleneck = kAuxDim;
};

struct AuxFeature {
  std::string utterance_id;
  Vector vector;
};

/// Glorot-initialised network with identity input normalisation.
EmbedderNet init_embedder(std::size_t input_dim, std::size_t num_speakers, const EmbedderOptions& options, Rng& rng);

/// Minimises w_sev * CE(severity) + w_spk * CE(speaker); the weights come
/// from cfg.loss_weights ("severity", "speaker"), equal by default. Throws
/// DataError when the samples cover a single severity class. Per-epoch mean
/// losses are appended to `epoch_losses` when non-null.
EmbedderNet train_embedder(std::span<const EmbedderSample> samples, std::vector<std::string> speakers,
                           const TrainConfig& cfg, const EmbedderOptions& options = {},
                           std::vector<double>* epoch_losses = nullptr);

/// Bottleneck activation (post-ReLU) for one utterance's bases.
AuxFeature extract_aux(const EmbedderNet& net, const SpectralBases& bases, std::string utterance_id = {});
Vector extract_aux(const EmbedderNet& net, const Vector& flat_bases);

/// Severity-head posterior for one utterance.
Vector severity_posterior(const EmbedderNet& net, const Vector& flat_bases);
Vector speaker_posterior(const EmbedderNet& net, const Vector& flat_bases);

struct SeverityAssessment {
  SeverityLevel level = SeverityLevel::kHigh;
  Vector mean_posterior;  // 4 entries
};

/// Averages per-utterance severity posteriors, then takes the argmax; ties go
/// to the more severe (lower) level.
SeverityAssessment assess_severity(const EmbedderNet& net, std::span<const Vector> utterance_bases);
SeverityAssessment assess_from_posteriors(std::span<const Vector> posteriors);

void write_embedder(std::ostream& os, const EmbedderNet& net);
EmbedderNet read_embedder(std::istream& is);

struct SpeakerAssessment {
  std::string speaker_id;
  SeverityAssessment assessment;
};

/// `speaker_id<TAB>level<TAB>p_VL<TAB>p_L<TAB>p_M<TAB>p_H` per line.
void write_assessments(std::ostream& os, const std::vector<SpeakerAssessment>& rows);
std::vector<SpeakerAssessment> read_assessments(std::istream& is);

}  // namespace seva
