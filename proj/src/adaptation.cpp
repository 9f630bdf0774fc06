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

#include "seva/adaptation.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <set>

namespace seva {

void AdaptConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw DataError("lambda must lie in [0, 1]");
  if (!(adapt_lr > 0.0)) throw DataError("adapt_lr must be positive");
}

SatResult sat_train(std::span<const AmUtterance> data, const TrainConfig& cfg, const HybridOptions& options,
                    const HybridArch& arch, bool freeze_lhuc, const std::vector<std::string>& required_speakers) {
  std::set<std::string> present;
  for (const auto& u : data) present.insert(u.speaker);
  for (const auto& s : required_speakers) {
    if (!present.count(s)) throw DataError("speaker '" + s + "' has no training utterances");
  }
  AmTrainer trainer(data, options, cfg, arch);
  SatResult result;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    double loss = trainer.trunk_epoch(true);
    if (!freeze_lhuc) loss = trainer.lhuc_epoch(true, options.use_lhuc_seve);
    result.epoch_losses.push_back(loss);
  }
  result.model = trainer.model();
  result.lhuc = trainer.lhuc();
  return result;
}

std::vector<int> argmax_labels(const Matrix& posteriors) {
  std::vector<int> out(static_cast<std::size_t>(posteriors.rows()));
  for (Eigen::Index t = 0; t < posteriors.rows(); ++t) {
    Eigen::Index best = 0;
    posteriors.row(t).maxCoeff(&best);
    out[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return out;
}

AdaptResult adapt_speaker(const HybridDNN& model, const LhucParams& lhuc, std::span<const AmUtterance> utterances,
                          const std::string& speaker, SeverityLevel assessed, const AdaptConfig& cfg,
                          const PseudoLabeler* labeler, std::ostream* log) {
  cfg.validate();
  if (utterances.empty()) throw DataError("adapt_speaker: no utterances for speaker '" + speaker + "'");
  const auto dim = static_cast<Eigen::Index>(model.lhuc_dim());

  LhucTable table;
  table.spkr = {Vector::Zero(dim)};
  for (std::size_t i = 0; i < kNumSeverities; ++i) {
    table.seve[i] = lhuc.r_seve[i].size() == dim ? lhuc.r_seve[i] : Vector::Zero(dim);
  }
  table.use_spkr = true;
  table.use_seve = true;
  LhucParams first_pass;
  first_pass.r_seve = table.seve;

  // Pseudo targets from the unadapted model under the assessed severity.
  std::vector<AmUtterance> labelled(utterances.begin(), utterances.end());
  for (auto& u : labelled) {
    const Vector* aux = u.aux.size() > 0 ? &u.aux : nullptr;
    const AmPosteriors post = forward_am(model, u.feats, aux, &first_pass, LhucKey{std::nullopt, assessed});
    u.targets.tri_state = (cfg.pseudo_label_pass && labeler != nullptr) ? (*labeler)(post.tri) : argmax_labels(post.tri);
    if (u.targets.tri_state.size() != u.feats.num_frames()) throw DimensionError("pseudo labeler: wrong length");
    u.targets.monophone.resize(u.targets.tri_state.size());
    for (std::size_t t = 0; t < u.targets.tri_state.size(); ++t) {
      u.targets.monophone[t] = u.targets.tri_state[t] / static_cast<int>(kStatesPerPhone);
    }
    u.speaker = speaker;
    u.severity = assessed;
  }
  FrameSet fs = build_frame_set(model, labelled);
  std::vector<std::size_t> rows(fs.tri.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});

  HybridDNN scratch = model;
  const LossWeights weights = {{"tri", 1.0}};
  auto evaluate = [&](LhucTable* grad) {
    if (grad != nullptr) {
      grad->spkr = {Vector::Zero(dim)};
      for (auto& v : grad->seve) v = Vector::Zero(dim);
    }
    return am_batch_loss(scratch, table, fs, rows, weights, false, grad);
  };

  AdaptResult result;
  LhucTable grad = table;
  double loss = evaluate(&grad);
  result.epoch_losses.push_back(loss);
  if (log != nullptr) *log << 0 << '\t' << speaker << '\t' << loss << '\n';
  double lr = cfg.adapt_lr;
  for (std::size_t e = 1; e <= cfg.adapt_epochs; ++e) {
    const Vector r0 = table.spkr[0];
    const Vector g = grad.spkr[0];
    LhucTable trial_grad = table;
    double trial = loss;
    bool accepted = false;
    for (int attempt = 0; attempt < 12; ++attempt) {
      table.spkr[0] = r0 - lr * g;
      trial = evaluate(&trial_grad);
      if (trial <= loss) {
        accepted = true;
        break;
      }
      lr *= 0.5;
    }
    if (!accepted) {
      table.spkr[0] = r0;
    } else {
      loss = trial;
      grad = trial_grad;
    }
    result.epoch_losses.push_back(loss);
    if (log != nullptr) *log << e << '\t' << speaker << '\t' << loss << '\n';
  }
  result.r_spkr = table.spkr[0];
  return result;
}

BatchCeResult kld_loss(const Matrix& logits, std::span<const int> hard, const Matrix& p_si, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw DataError("lambda must lie in [0, 1]");
  if (p_si.rows() != logits.rows() || p_si.cols() != logits.cols() ||
      hard.size() != static_cast<std::size_t>(logits.rows())) {
    throw DimensionError("kld_loss: shape mismatch");
  }
  Matrix target = lambda * p_si;
  for (std::size_t t = 0; t < hard.size(); ++t) {
    if (hard[t] < 0 || hard[t] >= logits.cols()) throw DimensionError("kld_loss: target index out of range");
    target(static_cast<Eigen::Index>(t), hard[t]) += 1.0 - lambda;
  }
  return softmax_ce_mean(logits, target);
}

namespace {

Matrix si_posteriors(const HybridDNN& si, const FrameSet& fs) {
  return softmax_rows(am_forward(si, fs.inputs, Matrix(), false).tri.output());
}

}  // namespace

KldResult kld_finetune(const HybridDNN& si, std::span<const AmUtterance> subset, const AdaptConfig& acfg,
                       const TrainConfig& cfg) {
  acfg.validate();
  cfg.validate();
  if (subset.empty()) throw DataError("kld_finetune: empty adaptation subset");
  const FrameSet fs = build_frame_set(si, subset);
  const Matrix p_si = si_posteriors(si, fs);

  KldResult result;
  result.model = si;
  HybridDNN& m = result.model;
  Rng rng(cfg.seed);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto order = shuffled_indices(fs.tri.size(), rng);
    double total = 0.0;
    for (const auto& batch : make_batches(order, cfg.batch_size)) {
      const Matrix x = gather_rows(fs.inputs, batch);
      const Matrix p = gather_rows(p_si, batch);
      std::vector<int> hard(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) hard[i] = fs.tri[batch[i]];
      zero_grads(m);
      const AmForwardState st = am_forward(m, x, Matrix(), false);
      const BatchCeResult ce = kld_loss(st.tri.output(), hard, p, acfg.lambda);
      if (!std::isfinite(ce.loss)) throw NumericError("kld_finetune: non-finite loss");
      total += ce.loss * static_cast<double>(batch.size());
      am_backward(m, st, ce.grad, Matrix(), Matrix(), true);
      sgd_step(m.trunk, cfg.learning_rate);
      sgd_step(m.tri_head, cfg.learning_rate);
    }
    result.epoch_losses.push_back(total / static_cast<double>(order.size()));
  }
  return result;
}

double kl_to_reference(const HybridDNN& model, const HybridDNN& reference, std::span<const AmUtterance> data) {
  const FrameSet fs = build_frame_set(reference, data);
  const Matrix p_ref = si_posteriors(reference, fs);
  const FrameSet fm = build_frame_set(model, data);
  const Matrix log_p = log_softmax_rows(am_forward(model, fm.inputs, Matrix(), false).tri.output());
  double kl = 0.0;
  for (Eigen::Index t = 0; t < p_ref.rows(); ++t) {
    for (Eigen::Index j = 0; j < p_ref.cols(); ++j) {
      const double p = p_ref(t, j);
      if (p > 0.0) kl += p * (std::log(p) - log_p(t, j));
    }
  }
  return p_ref.rows() > 0 ? kl / static_cast<double>(p_ref.rows()) : 0.0;
}

}  // namespace seva
