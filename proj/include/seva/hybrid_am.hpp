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

// Hybrid DNN frame classifier. A stack of ReLU layers reads per-frame
// filter-bank features (optionally with the utterance's auxiliary embedding
// appended to every frame). The output of the first hidden layer is scaled
// by structured speaker/severity LHUC factors
//
//   h' = xi(r_spkr) .* xi(r_seve) .* h,   xi(x) = 2 * sigmoid(x),
//
// and three softmax heads (tri-state, monophone, severity) read the last
// hidden layer. Training minimises
//
//   w_tri * CE_tri + w_mono * CE_mono + w_seve * CE_seve
//
// with each CE averaged over frames.

#pragma once

#include "seva/corpus.hpp"
#include "seva/features.hpp"
#include "seva/netcore.hpp"

#include <array>
#include <cmath>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace seva {

struct HybridArch {
  std::size_t hidden_layers = 7;
  std::size_t hidden_width = 256;
};

struct HybridOptions {
  bool use_aux = false;
  bool use_seve_head = false;
  bool use_lhuc_seve = false;
};

struct HybridDNN {
  std::size_t input_dim = kBaseFeatureDim;
  Vector input_mean;
  Vector input_scale;
  NetParams trunk;
  NetParams tri_head;
  NetParams mono_head;
  NetParams seve_head;
  Vector tri_priors;  // training-target frequencies, floored at 1e-6

  bool uses_aux() const { return input_dim > kBaseFeatureDim; }
  std::size_t lhuc_dim() const { return trunk.layer(0).out_dim(); }
  std::size_t num_tristates() const { return tri_head.output_dim(); }
  std::size_t num_monophones() const { return mono_head.output_dim(); }
};

struct LhucParams {
  std::map<std::string, Vector> r_spkr;
  std::array<Vector, kNumSeverities> r_seve;

  /// All-zero vectors (identity transform) for `speakers` and every severity.
  static LhucParams zeros(std::size_t dim, const std::vector<std::string>& speakers = {});
};

/// Which LHUC vectors to apply in a forward pass.
struct LhucKey {
  std::optional<std::string> speaker;
  std::optional<SeverityLevel> severity;
};

inline double lhuc_xi(double x) { return 2.0 / (1.0 + std::exp(-x)); }

/// xi(r_spkr) .* xi(r_seve) .* h.
Vector lhuc_scale(const Vector& h, const Vector& r_spkr, const Vector& r_seve);

struct AmPosteriors {
  Matrix tri;
  Matrix mono;
  Matrix seve;
};

HybridDNN init_hybrid(std::size_t input_dim, std::size_t num_tristates, std::size_t num_monophones,
                      const HybridArch& arch, Rng& rng);

/// Throws DataError if the model expects aux features and none is given, or
/// if an LHUC key is missing from `lhuc`.
AmPosteriors forward_am(const HybridDNN& model, const FeatureMatrix& feats, const Vector* aux = nullptr,
                        const LhucParams* lhuc = nullptr, const LhucKey& key = {});

/// Default Eq.-style weights (1/3 each) with disabled heads redistributed
/// equally among the enabled ones.
LossWeights am_loss_weights(bool use_seve_head, const LossWeights& configured = {});

LossValue mtl_loss_dnn(const AmPosteriors& posteriors, const FrameTargets& targets,
                       const LossWeights& weights = {{"tri", 1.0 / 3}, {"mono", 1.0 / 3}, {"seve", 1.0 / 3}});

/// Training utterance: base features, optional aux vector (size 0 if none)
/// and frame targets aligned with the features.
struct AmUtterance {
  std::string id;
  std::string speaker;
  std::optional<SeverityLevel> severity;
  FeatureMatrix feats;
  Vector aux;
  FrameTargets targets;
};

/// Network input for one utterance: features with aux broadcast, then the
/// model's input normalisation.
Matrix am_input(const HybridDNN& model, const FeatureMatrix& feats, const Vector* aux);

// Lower-level pieces shared with the adaptation routines.

struct AmForwardState {
  Matrix h1;     // first hidden layer output before LHUC
  Matrix scale;  // per-row LHUC factors (empty: none)
  ForwardCache upper;
  ForwardCache tri;
  ForwardCache mono;
  ForwardCache seve;
  Matrix input;
};

AmForwardState am_forward(const HybridDNN& model, const Matrix& x_norm, const Matrix& scale, bool all_heads = true);

/// Back-propagates head-logit gradients (empty matrix: head unused). When
/// `accumulate` is set the model's gradient buffers receive the parameter
/// gradients. Returns dL/dh' where h' is the LHUC-scaled first layer output.
Matrix am_backward(HybridDNN& model, const AmForwardState& st, const Matrix& g_tri, const Matrix& g_mono,
                   const Matrix& g_seve, bool accumulate = true);

void zero_grads(HybridDNN& model);
void sgd_step(HybridDNN& model, double lr);

/// Frames of several utterances flattened for minibatch training.
struct FrameSet {
  Matrix inputs;  // normalised
  std::vector<int> tri;
  std::vector<int> mono;
  std::vector<int> seve;
  std::vector<int> speaker;  // index into `speakers`
  std::vector<std::string> speakers;
};

FrameSet build_frame_set(const HybridDNN& model, std::span<const AmUtterance> data);

/// Per-row scale factors for the rows `rows` of `fs`.
struct LhucTable {
  std::vector<Vector> spkr;  // aligned with FrameSet::speakers; empty: unused
  std::array<Vector, kNumSeverities> seve;
  bool use_spkr = false;
  bool use_seve = false;
};

Matrix lhuc_row_scales(const LhucTable& table, std::span<const int> speakers, std::span<const int> severities,
                       std::size_t dim);

/// Loss and gradients on a batch of frames; model gradients accumulate when
/// `accumulate_model`, LHUC gradients land in `lhuc_grad` when non-null
/// (same layout as `table`).
double am_batch_loss(HybridDNN& model, const LhucTable& table, const FrameSet& fs, std::span<const std::size_t> rows,
                     const LossWeights& weights, bool accumulate_model, LhucTable* lhuc_grad);

/// Minibatch SGD driver over a frame set. Owns the model under training.
class AmTrainer {
 public:
  AmTrainer(std::span<const AmUtterance> data, const HybridOptions& options, const TrainConfig& cfg,
            const HybridArch& arch);

  /// One pass updating trunk and heads (and r_seve jointly when enabled).
  double trunk_epoch(bool apply_spkr);
  /// One pass updating only LHUC vectors with the network frozen.
  double lhuc_epoch(bool update_spkr, bool update_seve);

  const HybridDNN& model() const { return model_; }
  LhucParams lhuc() const;
  const LossWeights& weights() const { return weights_; }

 private:
  HybridOptions options_;
  TrainConfig cfg_;
  HybridDNN model_;
  FrameSet frames_;
  LhucTable table_;
  LossWeights weights_;
  Rng rng_;
  Rng lhuc_rng_;
};

struct AmTrainResult {
  HybridDNN model;
  LhucParams lhuc;
  std::vector<double> epoch_losses;
};

/// Throws DataError when use_lhuc_seve is requested but severity labels are
/// absent, or when use_aux is requested but utterances lack aux vectors.
AmTrainResult train_am(std::span<const AmUtterance> data, const TrainConfig& cfg, const HybridOptions& options,
                       const HybridArch& arch = {});

/// Model checkpoint: "SEVH" header and normalisation, netcore blocks for
/// trunk and heads, then an "LHUC" section with speaker and severity tables.
void write_hybrid(std::ostream& os, const HybridDNN& model, const LhucParams& lhuc);
std::pair<HybridDNN, LhucParams> read_hybrid(std::istream& is);

/// Posterior dumps for SEVF archives.
std::vector<ArchiveEntry> posterior_entries(const std::vector<std::string>& ids, const std::vector<Matrix>& tri);

}  // namespace seva
