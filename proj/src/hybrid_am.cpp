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

#include "seva/hybrid_am.hpp"

#include <algorithm>
#include <istream>
#include <ostream>

namespace seva {

namespace {

constexpr std::uint32_t kHybridVersion = 1;

NetParams linear_head(std::size_t in, std::size_t out, Rng& rng) {
  const std::size_t dims[] = {in, out};
  const Activation acts[] = {Activation::kLinear};
  return NetParams::glorot(dims, acts, rng);
}

double xi_prime(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return 2.0 * s * (1.0 - s);
}

Vector xi(const Vector& r) { return r.unaryExpr([](double v) { return lhuc_xi(v); }); }

// Backward through a cached forward pass, optionally without touching the
// gradient buffers.
Matrix backward_through(NetParams& net, const ForwardCache& cache, const Matrix& g_out, std::size_t first,
                        bool accumulate) {
  Matrix g = g_out;
  const std::size_t n = cache.outputs.size() - 1;
  for (std::size_t i = n; i-- > 0;) {
    const std::size_t k = first + i;
    g = backprop_layer(net.layer(k), cache.outputs[i], cache.outputs[i + 1], g, accumulate ? &net.grad(k) : nullptr);
  }
  return g;
}

void write_vec(std::ostream& os, const Vector& v) {
  binio::write_u32(os, static_cast<std::uint32_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) binio::write_f64(os, v[i]);
}

Vector read_vec(std::istream& is) {
  Vector v(static_cast<Eigen::Index>(binio::read_u32(is)));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = binio::read_f64(is);
  return v;
}

Matrix raw_input(std::size_t input_dim, const FeatureMatrix& feats, const Vector* aux) {
  const std::size_t base = feats.dim();
  const std::size_t aux_dim = input_dim - std::min(input_dim, base);
  if (aux_dim > 0 && (aux == nullptr || static_cast<std::size_t>(aux->size()) != aux_dim)) {
    throw DataError("model expects " + std::to_string(aux_dim) + "-dim auxiliary features");
  }
  Matrix x(feats.frames.rows(), static_cast<Eigen::Index>(input_dim));
  x.leftCols(static_cast<Eigen::Index>(base)) = feats.frames;
  if (aux_dim > 0) x.rightCols(static_cast<Eigen::Index>(aux_dim)).rowwise() = aux->transpose();
  return x;
}

}  // namespace

LhucParams LhucParams::zeros(std::size_t dim, const std::vector<std::string>& speakers) {
  LhucParams p;
  for (const auto& s : speakers) p.r_spkr[s] = Vector::Zero(static_cast<Eigen::Index>(dim));
  for (auto& v : p.r_seve) v = Vector::Zero(static_cast<Eigen::Index>(dim));
  return p;
}

Vector lhuc_scale(const Vector& h, const Vector& r_spkr, const Vector& r_seve) {
  if (h.size() != r_spkr.size() || h.size() != r_seve.size()) throw DimensionError("lhuc_scale: dimension mismatch");
  return xi(r_spkr).cwiseProduct(xi(r_seve)).cwiseProduct(h);
}

HybridDNN init_hybrid(std::size_t input_dim, std::size_t num_tristates, std::size_t num_monophones,
                      const HybridArch& arch, Rng& rng) {
  if (arch.hidden_layers < 2) throw DataError("hybrid model needs at least two hidden layers");
  HybridDNN m;
  m.input_dim = input_dim;
  std::vector<std::size_t> dims(arch.hidden_layers + 1, arch.hidden_width);
  dims[0] = input_dim;
  const std::vector<Activation> acts(arch.hidden_layers, Activation::kRelu);
  m.trunk = NetParams::glorot(dims, acts, rng);
  m.tri_head = linear_head(arch.hidden_width, num_tristates, rng);
  m.mono_head = linear_head(arch.hidden_width, num_monophones, rng);
  m.seve_head = linear_head(arch.hidden_width, kNumSeverities, rng);
  m.input_mean = Vector::Zero(static_cast<Eigen::Index>(input_dim));
  m.input_scale = Vector::Ones(static_cast<Eigen::Index>(input_dim));
  m.tri_priors = Vector::Constant(static_cast<Eigen::Index>(num_tristates), 1.0 / static_cast<double>(num_tristates));
  return m;
}

Matrix am_input(const HybridDNN& model, const FeatureMatrix& feats, const Vector* aux) {
  Matrix x = raw_input(model.input_dim, feats, aux);
  x.rowwise() -= model.input_mean.transpose();
  x.array().rowwise() *= model.input_scale.transpose().array();
  return x;
}

AmForwardState am_forward(const HybridDNN& model, const Matrix& x_norm, const Matrix& scale, bool all_heads) {
  AmForwardState st;
  st.input = x_norm;
  st.h1 = apply_layer(model.trunk.layer(0), x_norm, 0);
  st.scale = scale;
  if (scale.size() > 0) {
    st.upper = forward(model.trunk, st.h1.cwiseProduct(scale), 1);
  } else {
    st.upper = forward(model.trunk, st.h1, 1);
  }
  st.tri = forward(model.tri_head, st.upper.output());
  if (all_heads) {
    st.mono = forward(model.mono_head, st.upper.output());
    st.seve = forward(model.seve_head, st.upper.output());
  }
  return st;
}

Matrix am_backward(HybridDNN& model, const AmForwardState& st, const Matrix& g_tri, const Matrix& g_mono,
                   const Matrix& g_seve, bool accumulate) {
  Matrix g_top = Matrix::Zero(st.upper.output().rows(), st.upper.output().cols());
  if (g_tri.size() > 0) g_top += backward_through(model.tri_head, st.tri, g_tri, 0, accumulate);
  if (g_mono.size() > 0) g_top += backward_through(model.mono_head, st.mono, g_mono, 0, accumulate);
  if (g_seve.size() > 0) g_top += backward_through(model.seve_head, st.seve, g_seve, 0, accumulate);
  Matrix g_scaled = backward_through(model.trunk, st.upper, g_top, 1, accumulate);
  if (accumulate) {
    const Matrix g_h1 = st.scale.size() > 0 ? Matrix(g_scaled.cwiseProduct(st.scale)) : g_scaled;
    backprop_layer(model.trunk.layer(0), st.input, st.h1, g_h1, &model.trunk.grad(0));
  }
  return g_scaled;
}

void zero_grads(HybridDNN& model) {
  model.trunk.zero_grad();
  model.tri_head.zero_grad();
  model.mono_head.zero_grad();
  model.seve_head.zero_grad();
}

void sgd_step(HybridDNN& model, double lr) {
  sgd_step(model.trunk, lr);
  sgd_step(model.tri_head, lr);
  sgd_step(model.mono_head, lr);
  sgd_step(model.seve_head, lr);
}

AmPosteriors forward_am(const HybridDNN& model, const FeatureMatrix& feats, const Vector* aux, const LhucParams* lhuc,
                        const LhucKey& key) {
  if (model.uses_aux() && aux == nullptr) throw DataError("forward_am: model expects auxiliary features");
  const Matrix x = am_input(model, feats, aux);
  Matrix scale;
  if (key.speaker || key.severity) {
    if (lhuc == nullptr) throw DataError("forward_am: LHUC key given without LHUC parameters");
    Vector s = Vector::Ones(static_cast<Eigen::Index>(model.lhuc_dim()));
    if (key.speaker) {
      auto it = lhuc->r_spkr.find(*key.speaker);
      if (it == lhuc->r_spkr.end()) throw DataError("forward_am: unknown LHUC speaker '" + *key.speaker + "'");
      if (it->second.size() != s.size()) throw DimensionError("forward_am: LHUC speaker vector size");
      s = s.cwiseProduct(xi(it->second));
    }
    if (key.severity) {
      const Vector& r = lhuc->r_seve[to_index(*key.severity)];
      if (r.size() != s.size()) throw DataError("forward_am: missing LHUC severity vector");
      s = s.cwiseProduct(xi(r));
    }
    scale.resize(x.rows(), s.size());
    scale.rowwise() = s.transpose();
  }
  const AmForwardState st = am_forward(model, x, scale, true);
  return {softmax_rows(st.tri.output()), softmax_rows(st.mono.output()), softmax_rows(st.seve.output())};
}

LossWeights am_loss_weights(bool use_seve_head, const LossWeights& configured) {
  LossWeights w = configured.empty() ? LossWeights{{"tri", 1.0 / 3}, {"mono", 1.0 / 3}, {"seve", 1.0 / 3}} : configured;
  for (const char* k : {"tri", "mono", "seve"}) w.try_emplace(k, 0.0);
  if (!use_seve_head) {
    const double moved = w["seve"];
    w["seve"] = 0.0;
    w["tri"] += moved / 2.0;
    w["mono"] += moved / 2.0;
  }
  return w;
}

LossValue mtl_loss_dnn(const AmPosteriors& posteriors, const FrameTargets& targets, const LossWeights& weights) {
  const auto t_count = static_cast<Eigen::Index>(targets.size());
  auto mean_ce = [&](const Matrix& post, auto target_of) {
    if (post.rows() != t_count) throw DimensionError("mtl_loss_dnn: posterior/target length mismatch");
    double acc = 0.0;
    for (Eigen::Index t = 0; t < t_count; ++t) {
      const int y = target_of(t);
      if (y < 0 || y >= post.cols()) throw DimensionError("mtl_loss_dnn: target index out of range");
      acc -= std::log(post(t, y));
    }
    return t_count > 0 ? acc / static_cast<double>(t_count) : 0.0;
  };
  std::map<std::string, double> comps;
  comps["tri"] = mean_ce(posteriors.tri, [&](Eigen::Index t) { return targets.tri_state[static_cast<std::size_t>(t)]; });
  comps["mono"] = mean_ce(posteriors.mono, [&](Eigen::Index t) { return targets.monophone[static_cast<std::size_t>(t)]; });
  if (posteriors.seve.size() > 0) {
    const int sev = static_cast<int>(to_index(targets.severity));
    comps["seve"] = mean_ce(posteriors.seve, [&](Eigen::Index) { return sev; });
  }
  return interpolate_losses(weights, comps);
}

FrameSet build_frame_set(const HybridDNN& model, std::span<const AmUtterance> data) {
  FrameSet fs;
  std::size_t total = 0;
  for (const auto& u : data) {
    if (u.targets.size() != u.feats.num_frames()) {
      throw DataError("utterance '" + u.id + "': target length " + std::to_string(u.targets.size()) +
                      " != feature length " + std::to_string(u.feats.num_frames()));
    }
    total += u.feats.num_frames();
  }
  fs.inputs.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(model.input_dim));
  std::map<std::string, int> spk_index;
  Eigen::Index row = 0;
  for (const auto& u : data) {
    auto [it, inserted] = spk_index.try_emplace(u.speaker, static_cast<int>(fs.speakers.size()));
    if (inserted) fs.speakers.push_back(u.speaker);
    const Vector* aux = u.aux.size() > 0 ? &u.aux : nullptr;
    const Matrix x = am_input(model, u.feats, aux);
    fs.inputs.middleRows(row, x.rows()) = x;
    row += x.rows();
    const int sev = u.severity ? static_cast<int>(to_index(*u.severity)) : -1;
    for (std::size_t t = 0; t < u.targets.size(); ++t) {
      fs.tri.push_back(u.targets.tri_state[t]);
      fs.mono.push_back(u.targets.monophone[t]);
      fs.seve.push_back(sev);
      fs.speaker.push_back(it->second);
    }
  }
  return fs;
}

Matrix lhuc_row_scales(const LhucTable& table, std::span<const int> speakers, std::span<const int> severities,
                       std::size_t dim) {
  Matrix s = Matrix::Ones(static_cast<Eigen::Index>(speakers.size()), static_cast<Eigen::Index>(dim));
  std::vector<Vector> spk_xi;
  std::array<Vector, kNumSeverities> sev_xi;
  if (table.use_spkr) {
    for (const auto& r : table.spkr) spk_xi.push_back(xi(r));
  }
  if (table.use_seve) {
    for (std::size_t i = 0; i < kNumSeverities; ++i) sev_xi[i] = xi(table.seve[i]);
  }
  for (std::size_t r = 0; r < speakers.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    if (table.use_spkr && speakers[r] >= 0) {
      s.row(row).array() *= spk_xi[static_cast<std::size_t>(speakers[r])].transpose().array();
    }
    if (table.use_seve && severities[r] >= 0) {
      s.row(row).array() *= sev_xi[static_cast<std::size_t>(severities[r])].transpose().array();
    }
  }
  return s;
}

double am_batch_loss(HybridDNN& model, const LhucTable& table, const FrameSet& fs, std::span<const std::size_t> rows,
                     const LossWeights& weights, bool accumulate_model, LhucTable* lhuc_grad) {
  const Matrix x = gather_rows(fs.inputs, rows);
  std::vector<int> tri(rows.size()), mono(rows.size()), seve(rows.size()), spk(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    tri[i] = fs.tri[rows[i]];
    mono[i] = fs.mono[rows[i]];
    seve[i] = fs.seve[rows[i]];
    spk[i] = fs.speaker[rows[i]];
  }
  const bool use_lhuc = table.use_spkr || table.use_seve;
  const Matrix scale = use_lhuc ? lhuc_row_scales(table, spk, seve, model.lhuc_dim()) : Matrix();
  const auto weight = [&](const char* k) {
    auto it = weights.find(k);
    return it == weights.end() ? 0.0 : it->second;
  };
  const double w_tri = weight("tri");
  const double w_mono = weight("mono");
  const double w_seve = weight("seve");
  const AmForwardState st = am_forward(model, x, scale, true);

  std::map<std::string, double> comps;
  Matrix g_tri, g_mono, g_seve;
  BatchCeResult ce = softmax_ce_mean(st.tri.output(), tri);
  comps["tri"] = ce.loss;
  g_tri = ce.grad * w_tri;
  if (w_mono != 0.0) {
    ce = softmax_ce_mean(st.mono.output(), mono);
    comps["mono"] = ce.loss;
    g_mono = ce.grad * w_mono;
  }
  if (w_seve != 0.0) {
    if (std::any_of(seve.begin(), seve.end(), [](int s) { return s < 0; })) {
      throw DataError("severity head enabled but some frames lack severity labels");
    }
    ce = softmax_ce_mean(st.seve.output(), seve);
    comps["seve"] = ce.loss;
    g_seve = ce.grad * w_seve;
  }
  const LossValue loss = interpolate_losses(weights, comps);
  if (!std::isfinite(loss.scalar)) throw NumericError("non-finite acoustic model loss");

  const Matrix g_scaled = am_backward(model, st, g_tri, g_mono, g_seve, accumulate_model);
  if (lhuc_grad != nullptr && use_lhuc) {
    // dL/dS elementwise, then chain through xi of each factor.
    const Matrix ds = g_scaled.cwiseProduct(st.h1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const RowVector total = ds.row(row).cwiseProduct(scale.row(row));
      if (table.use_spkr && spk[i] >= 0) {
        const Vector& r = table.spkr[static_cast<std::size_t>(spk[i])];
        const Vector dxi = r.unaryExpr([](double v) { return xi_prime(v) / lhuc_xi(v); });
        lhuc_grad->spkr[static_cast<std::size_t>(spk[i])] += total.transpose().cwiseProduct(dxi);
      }
      if (table.use_seve && seve[i] >= 0) {
        const Vector& r = table.seve[static_cast<std::size_t>(seve[i])];
        const Vector dxi = r.unaryExpr([](double v) { return xi_prime(v) / lhuc_xi(v); });
        lhuc_grad->seve[static_cast<std::size_t>(seve[i])] += total.transpose().cwiseProduct(dxi);
      }
    }
  }
  return loss.scalar;
}

namespace {

LhucTable zero_like(const LhucTable& t) {
  LhucTable z = t;
  for (auto& v : z.spkr) v.setZero();
  for (auto& v : z.seve) v.setZero();
  return z;
}

}  // namespace

AmTrainer::AmTrainer(std::span<const AmUtterance> data, const HybridOptions& options, const TrainConfig& cfg,
                     const HybridArch& arch)
    : options_(options), cfg_(cfg), rng_(cfg.seed), lhuc_rng_(derive_seed(cfg.seed, 0x4C48))  {
  cfg.validate();
  if (data.empty()) throw DataError("train_am: no training utterances");
  const bool need_sev = options.use_seve_head || options.use_lhuc_seve;
  std::size_t aux_dim = 0;
  std::size_t tri_max = 0;
  std::size_t mono_max = 0;
  for (const auto& u : data) {
    if (need_sev && !u.severity) {
      throw DataError("utterance '" + u.id + "' has no severity label but severity modelling is enabled");
    }
    if (options.use_aux) {
      if (u.aux.size() == 0) throw DataError("utterance '" + u.id + "' has no auxiliary features");
      if (aux_dim == 0) aux_dim = static_cast<std::size_t>(u.aux.size());
      if (static_cast<std::size_t>(u.aux.size()) != aux_dim) throw DimensionError("inconsistent auxiliary feature dims");
    }
    for (int t : u.targets.tri_state) tri_max = std::max(tri_max, static_cast<std::size_t>(t));
    for (int m : u.targets.monophone) mono_max = std::max(mono_max, static_cast<std::size_t>(m));
  }
  const std::size_t base_dim = data.front().feats.dim();
  const std::size_t n_mono = std::max(mono_max + 1, (tri_max + 1 + kStatesPerPhone - 1) / kStatesPerPhone);
  model_ = init_hybrid(base_dim + (options.use_aux ? aux_dim : 0), kStatesPerPhone * n_mono, n_mono, arch, rng_);

  // Global input normalisation from the raw training frames.
  FrameSet raw = build_frame_set(model_, data);
  model_.input_mean = raw.inputs.colwise().mean().transpose();
  const Vector var =
      (raw.inputs.rowwise() - model_.input_mean.transpose()).array().square().colwise().mean().transpose();
  model_.input_scale = var.unaryExpr([](double v) { return 1.0 / std::sqrt(v + 1e-8); });
  raw.inputs.rowwise() -= model_.input_mean.transpose();
  raw.inputs.array().rowwise() *= model_.input_scale.transpose().array();
  frames_ = std::move(raw);

  Vector counts = Vector::Zero(static_cast<Eigen::Index>(model_.num_tristates()));
  for (int t : frames_.tri) counts[t] += 1.0;
  model_.tri_priors = (counts / counts.sum()).cwiseMax(1e-6);

  weights_ = am_loss_weights(options.use_seve_head, cfg.loss_weights);
  const auto dim = static_cast<Eigen::Index>(model_.lhuc_dim());
  table_.spkr.assign(frames_.speakers.size(), Vector::Zero(dim));
  for (auto& v : table_.seve) v = Vector::Zero(dim);
}

double AmTrainer::trunk_epoch(bool apply_spkr) {
  table_.use_spkr = apply_spkr;
  table_.use_seve = options_.use_lhuc_seve;
  const auto order = shuffled_indices(frames_.tri.size(), rng_);
  double total = 0.0;
  for (const auto& batch : make_batches(order, cfg_.batch_size)) {
    zero_grads(model_);
    LhucTable grad = zero_like(table_);
    const double loss =
        am_batch_loss(model_, table_, frames_, batch, weights_, true, options_.use_lhuc_seve ? &grad : nullptr);
    total += loss * static_cast<double>(batch.size());
    sgd_step(model_, cfg_.learning_rate);
    if (options_.use_lhuc_seve) {
      for (std::size_t i = 0; i < kNumSeverities; ++i) table_.seve[i] -= cfg_.learning_rate * grad.seve[i];
    }
  }
  return total / static_cast<double>(order.size());
}

double AmTrainer::lhuc_epoch(bool update_spkr, bool update_seve) {
  table_.use_spkr = true;
  table_.use_seve = options_.use_lhuc_seve;
  const auto order = shuffled_indices(frames_.tri.size(), lhuc_rng_);
  double total = 0.0;
  for (const auto& batch : make_batches(order, cfg_.batch_size)) {
    LhucTable grad = zero_like(table_);
    const double loss = am_batch_loss(model_, table_, frames_, batch, weights_, false, &grad);
    total += loss * static_cast<double>(batch.size());
    if (update_spkr) {
      for (std::size_t s = 0; s < table_.spkr.size(); ++s) table_.spkr[s] -= cfg_.learning_rate * grad.spkr[s];
    }
    if (update_seve && options_.use_lhuc_seve) {
      for (std::size_t i = 0; i < kNumSeverities; ++i) table_.seve[i] -= cfg_.learning_rate * grad.seve[i];
    }
  }
  return total / static_cast<double>(order.size());
}

LhucParams AmTrainer::lhuc() const {
  LhucParams p;
  for (std::size_t s = 0; s < frames_.speakers.size(); ++s) p.r_spkr[frames_.speakers[s]] = table_.spkr[s];
  p.r_seve = table_.seve;
  return p;
}

AmTrainResult train_am(std::span<const AmUtterance> data, const TrainConfig& cfg, const HybridOptions& options,
                       const HybridArch& arch) {
  AmTrainer trainer(data, options, cfg, arch);
  AmTrainResult result;
  for (std::size_t e = 0; e < cfg.epochs; ++e) result.epoch_losses.push_back(trainer.trunk_epoch(false));
  result.model = trainer.model();
  result.lhuc = trainer.lhuc();
  return result;
}

void write_hybrid(std::ostream& os, const HybridDNN& model, const LhucParams& lhuc) {
  binio::write_magic(os, "SEVH");
  binio::write_u32(os, kHybridVersion);
  binio::write_u32(os, static_cast<std::uint32_t>(model.input_dim));
  write_vec(os, model.input_mean);
  write_vec(os, model.input_scale);
  write_vec(os, model.tri_priors);
  write_net(os, model.trunk);
  write_net(os, model.tri_head);
  write_net(os, model.mono_head);
  write_net(os, model.seve_head);
  binio::write_magic(os, "LHUC");
  binio::write_u32(os, static_cast<std::uint32_t>(lhuc.r_spkr.size()));
  for (const auto& [spk, r] : lhuc.r_spkr) {
    binio::write_string(os, spk);
    write_vec(os, r);
  }
  binio::write_u32(os, static_cast<std::uint32_t>(kNumSeverities));
  for (const auto& r : lhuc.r_seve) write_vec(os, r);
}

std::pair<HybridDNN, LhucParams> read_hybrid(std::istream& is) {
  binio::expect_magic(is, "SEVH");
  if (binio::read_u32(is) != kHybridVersion) throw DataError("unsupported hybrid checkpoint version");
  HybridDNN m;
  m.input_dim = binio::read_u32(is);
  m.input_mean = read_vec(is);
  m.input_scale = read_vec(is);
  m.tri_priors = read_vec(is);
  m.trunk = read_net(is);
  m.tri_head = read_net(is);
  m.mono_head = read_net(is);
  m.seve_head = read_net(is);
  binio::expect_magic(is, "LHUC");
  LhucParams lhuc;
  const std::uint32_t n = binio::read_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string spk = binio::read_string(is);
    lhuc.r_spkr[spk] = read_vec(is);
  }
  if (binio::read_u32(is) != kNumSeverities) throw DataError("checkpoint: bad severity table size");
  for (auto& r : lhuc.r_seve) r = read_vec(is);
  return {std::move(m), std::move(lhuc)};
}

std::vector<ArchiveEntry> posterior_entries(const std::vector<std::string>& ids, const std::vector<Matrix>& tri) {
  if (ids.size() != tri.size()) throw DimensionError("posterior_entries: id/matrix count mismatch");
  std::vector<ArchiveEntry> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.push_back({ids[i], tri[i]});
  return out;
}

}  // namespace seva
