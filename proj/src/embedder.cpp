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

#include "seva/embedder.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace seva {

namespace {

constexpr std::uint32_t kEmbedderVersion = 1;

Matrix normalize_inputs(const EmbedderNet& net, const Matrix& x) {
  if (static_cast<std::size_t>(x.cols()) != net.input_dim()) {
    throw DimensionError("embedder: expected input dim " + std::to_string(net.input_dim()) + ", got " +
                         std::to_string(x.cols()));
  }
  Matrix out = x;
  out.rowwise() -= net.input_mean.transpose();
  out.array().rowwise() *= net.input_scale.transpose().array();
  return out;
}

NetParams linear_head(std::size_t in, std::size_t out, Rng& rng) {
  const std::size_t dims[] = {in, out};
  const Activation acts[] = {Activation::kLinear};
  return NetParams::glorot(dims, acts, rng);
}

}  // namespace

EmbedderNet init_embedder(std::size_t input_dim, std::size_t num_speakers, const EmbedderOptions& options, Rng& rng) {
  EmbedderNet net;
  std::vector<std::size_t> dims = {input_dim};
  dims.insert(dims.end(), options.hidden.begin(), options.hidden.end());
  dims.push_back(options.bottleneck);
  const std::vector<Activation> acts(dims.size() - 1, Activation::kRelu);
  net.trunk = NetParams::glorot(dims, acts, rng);
  net.severity_head = linear_head(options.bottleneck, kNumSeverities, rng);
  net.speaker_head = linear_head(options.bottleneck, std::max<std::size_t>(1, num_speakers), rng);
  net.input_mean = Vector::Zero(static_cast<Eigen::Index>(input_dim));
  net.input_scale = Vector::Ones(static_cast<Eigen::Index>(input_dim));
  return net;
}

EmbedderNet train_embedder(std::span<const EmbedderSample> samples, std::vector<std::string> speakers,
                           const TrainConfig& cfg, const EmbedderOptions& options, std::vector<double>* epoch_losses) {
  cfg.validate();
  if (samples.empty()) throw DataError("train_embedder: no training samples");
  std::set<SeverityLevel> classes;
  for (const auto& s : samples) classes.insert(s.severity);
  if (classes.size() < 2) throw DataError("degenerate targets");

  const std::size_t in_dim = static_cast<std::size_t>(samples.front().input.size());
  Matrix x(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(in_dim));
  std::vector<int> sev(samples.size());
  std::vector<int> spk(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (static_cast<std::size_t>(samples[i].input.size()) != in_dim) throw DimensionError("train_embedder: ragged inputs");
    if (samples[i].speaker >= speakers.size()) throw DataError("train_embedder: speaker index out of range");
    x.row(static_cast<Eigen::Index>(i)) = samples[i].input.transpose();
    sev[i] = static_cast<int>(to_index(samples[i].severity));
    spk[i] = static_cast<int>(samples[i].speaker);
  }

  Rng rng(cfg.seed);
  EmbedderNet net = init_embedder(in_dim, speakers.size(), options, rng);
  net.speakers = std::move(speakers);
  if (cfg.epochs == 0) return net;

  net.input_mean = x.colwise().mean().transpose();
  const Vector var = (x.rowwise() - net.input_mean.transpose()).array().square().colwise().mean().transpose();
  net.input_scale = var.unaryExpr([](double v) { return 1.0 / std::sqrt(v + 1e-8); });
  const Matrix xn = normalize_inputs(net, x);

  LossWeights weights = cfg.loss_weights;
  if (weights.empty()) weights = {{"severity", 0.5}, {"speaker", 0.5}};

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(samples.size(), rng);
    double total = 0.0;
    for (const auto& batch : make_batches(order, cfg.batch_size)) {
      const Matrix xb = gather_rows(xn, batch);
      std::vector<int> sb(batch.size());
      std::vector<int> kb(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        sb[i] = sev[batch[i]];
        kb[i] = spk[batch[i]];
      }
      net.trunk.zero_grad();
      net.severity_head.zero_grad();
      net.speaker_head.zero_grad();
      const ForwardCache trunk = forward(net.trunk, xb);
      const ForwardCache sev_out = forward(net.severity_head, trunk.output());
      const ForwardCache spk_out = forward(net.speaker_head, trunk.output());
      BatchCeResult ce_sev = softmax_ce_mean(sev_out.output(), sb);
      BatchCeResult ce_spk = softmax_ce_mean(spk_out.output(), kb);
      const LossValue loss = interpolate_losses(weights, {{"severity", ce_sev.loss}, {"speaker", ce_spk.loss}});
      if (!std::isfinite(loss.scalar)) throw NumericError("train_embedder: non-finite loss");
      total += loss.scalar * static_cast<double>(batch.size());
      Matrix g = backward(net.severity_head, sev_out, ce_sev.grad * weights.at("severity"));
      g += backward(net.speaker_head, spk_out, ce_spk.grad * weights.at("speaker"));
      backward(net.trunk, trunk, g);
      sgd_step(net.trunk, cfg.learning_rate);
      sgd_step(net.severity_head, cfg.learning_rate);
      sgd_step(net.speaker_head, cfg.learning_rate);
    }
    if (epoch_losses != nullptr) epoch_losses->push_back(total / static_cast<double>(samples.size()));
  }
  return net;
}

Vector extract_aux(const EmbedderNet& net, const Vector& flat_bases) {
  const Matrix row = flat_bases.transpose();
  return forward(net.trunk, normalize_inputs(net, row)).output().row(0).transpose();
}

AuxFeature extract_aux(const EmbedderNet& net, const SpectralBases& bases, std::string utterance_id) {
  return {std::move(utterance_id), extract_aux(net, bases.flattened())};
}

Vector severity_posterior(const EmbedderNet& net, const Vector& flat_bases) {
  return softmax(forward(net.severity_head, extract_aux(net, flat_bases)));
}

Vector speaker_posterior(const EmbedderNet& net, const Vector& flat_bases) {
  return softmax(forward(net.speaker_head, extract_aux(net, flat_bases)));
}

SeverityAssessment assess_from_posteriors(std::span<const Vector> posteriors) {
  if (posteriors.empty()) throw DataError("assess_severity: no utterances");
  Vector mean = Vector::Zero(kNumSeverities);
  for (const auto& p : posteriors) {
    if (p.size() != static_cast<Eigen::Index>(kNumSeverities)) throw DimensionError("assess_severity: posterior size");
    mean += p;
  }
  mean /= static_cast<double>(posteriors.size());
  // Strict comparison keeps the lowest index on ties.
  std::size_t best = 0;
  for (std::size_t i = 1; i < kNumSeverities; ++i) {
    if (mean[static_cast<Eigen::Index>(i)] > mean[static_cast<Eigen::Index>(best)]) best = i;
  }
  return {severity_from_index(best), mean};
}

SeverityAssessment assess_severity(const EmbedderNet& net, std::span<const Vector> utterance_bases) {
  std::vector<Vector> posts;
  posts.reserve(utterance_bases.size());
  for (const auto& b : utterance_bases) posts.push_back(severity_posterior(net, b));
  return assess_from_posteriors(posts);
}

namespace {

void write_vec(std::ostream& os, const Vector& v) {
  binio::write_u32(os, static_cast<std::uint32_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) binio::write_f64(os, v[i]);
}

Vector read_vec(std::istream& is) {
  Vector v(static_cast<Eigen::Index>(binio::read_u32(is)));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = binio::read_f64(is);
  return v;
}

}  // namespace

void write_embedder(std::ostream& os, const EmbedderNet& net) {
  binio::write_magic(os, "SEVE");
  binio::write_u32(os, kEmbedderVersion);
  write_vec(os, net.input_mean);
  write_vec(os, net.input_scale);
  write_net(os, net.trunk);
  write_net(os, net.severity_head);
  write_net(os, net.speaker_head);
  binio::write_u32(os, static_cast<std::uint32_t>(net.speakers.size()));
  for (const auto& s : net.speakers) binio::write_string(os, s);
}

EmbedderNet read_embedder(std::istream& is) {
  binio::expect_magic(is, "SEVE");
  if (binio::read_u32(is) != kEmbedderVersion) throw DataError("unsupported embedder checkpoint version");
  EmbedderNet net;
  net.input_mean = read_vec(is);
  net.input_scale = read_vec(is);
  net.trunk = read_net(is);
  net.severity_head = read_net(is);
  net.speaker_head = read_net(is);
  const std::uint32_t n = binio::read_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) net.speakers.push_back(binio::read_string(is));
  return net;
}

void write_assessments(std::ostream& os, const std::vector<SpeakerAssessment>& rows) {
  for (const auto& r : rows) {
    os << r.speaker_id << '\t' << severity_name(r.assessment.level);
    std::ostringstream nums;
    nums << std::fixed << std::setprecision(6);
    for (Eigen::Index i = 0; i < r.assessment.mean_posterior.size(); ++i) nums << '\t' << r.assessment.mean_posterior[i];
    os << nums.str() << '\n';
  }
}

std::vector<SpeakerAssessment> read_assessments(std::istream& is) {
  std::vector<SpeakerAssessment> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    SpeakerAssessment r;
    std::string level;
    if (!std::getline(ls, r.speaker_id, '\t') || !std::getline(ls, level, '\t')) {
      throw DataError("malformed assessment line: " + line);
    }
    r.assessment.level = parse_severity(level);
    r.assessment.mean_posterior = Vector::Zero(kNumSeverities);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(kNumSeverities); ++i) {
      if (!(ls >> r.assessment.mean_posterior[i])) throw DataError("malformed assessment line: " + line);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace seva
