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

#include "seva/seqmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

namespace seva {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::uint32_t kSeqVersion = 1;

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

NetParams linear_head(std::size_t in, std::size_t out, Rng& rng) {
  const std::size_t dims[] = {in, out};
  const Activation acts[] = {Activation::kLinear};
  return NetParams::glorot(dims, acts, rng);
}

struct Lattice {
  std::vector<int> ext;  // blank-augmented labels
  Matrix log_y;          // T x (V+1)
  Matrix alpha;          // T x S
  double log_p = kNegInf;
};

bool can_skip(const std::vector<int>& ext, std::size_t s) {
  return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2];
}

Lattice ctc_forward(const Matrix& logits, std::span<const int> labels) {
  for (int l : labels) {
    if (l <= kBlank || l >= logits.cols()) throw DimensionError("ctc: label index out of range");
  }
  Lattice lat;
  lat.ext.assign(2 * labels.size() + 1, kBlank);
  for (std::size_t i = 0; i < labels.size(); ++i) lat.ext[2 * i + 1] = labels[i];
  lat.log_y = log_softmax_rows(logits);
  const Eigen::Index T = logits.rows();
  const auto S = static_cast<Eigen::Index>(lat.ext.size());
  lat.alpha = Matrix::Constant(T, S, kNegInf);
  if (T == 0) return lat;
  lat.alpha(0, 0) = lat.log_y(0, kBlank);
  if (S > 1) lat.alpha(0, 1) = lat.log_y(0, lat.ext[1]);
  for (Eigen::Index t = 1; t < T; ++t) {
    for (Eigen::Index s = 0; s < S; ++s) {
      double a = lat.alpha(t - 1, s);
      if (s >= 1) a = log_add(a, lat.alpha(t - 1, s - 1));
      if (can_skip(lat.ext, static_cast<std::size_t>(s))) a = log_add(a, lat.alpha(t - 1, s - 2));
      if (a != kNegInf) lat.alpha(t, s) = a + lat.log_y(t, lat.ext[static_cast<std::size_t>(s)]);
    }
  }
  lat.log_p = lat.alpha(T - 1, S - 1);
  if (S > 1) lat.log_p = log_add(lat.log_p, lat.alpha(T - 1, S - 2));
  return lat;
}

}  // namespace

GraphemeVocab::GraphemeVocab(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  std::set<std::string> seen;
  for (const auto& s : symbols_) {
    if (s.empty()) throw DataError("grapheme vocabulary: empty symbol");
    if (!seen.insert(s).second) throw DataError("grapheme vocabulary: duplicate symbol '" + s + "'");
  }
}

GraphemeVocab GraphemeVocab::from_words(const std::vector<std::string>& words) {
  std::set<char> chars;
  for (const auto& w : words) chars.insert(w.begin(), w.end());
  std::vector<std::string> symbols;
  for (char c : chars) symbols.emplace_back(1, c);
  return GraphemeVocab(std::move(symbols));
}

int GraphemeVocab::index_of(const std::string& symbol) const {
  auto it = std::find(symbols_.begin(), symbols_.end(), symbol);
  if (it == symbols_.end()) throw DataError("grapheme '" + symbol + "' not in vocabulary");
  return static_cast<int>(it - symbols_.begin()) + 1;
}

LabelSeq GraphemeVocab::encode(const std::string& word) const {
  LabelSeq out;
  for (char c : word) out.push_back(index_of(std::string(1, c)));
  return out;
}

std::string GraphemeVocab::decode(const LabelSeq& labels) const {
  std::string out;
  for (int l : labels) {
    if (l < 1 || static_cast<std::size_t>(l) > symbols_.size()) throw DimensionError("grapheme index out of range");
    out += symbols_[static_cast<std::size_t>(l - 1)];
  }
  return out;
}

void GraphemeVocab::write(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  for (const auto& s : symbols_) os << s << '\n';
}

GraphemeVocab GraphemeVocab::read(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read grapheme vocabulary " + path.string());
  std::vector<std::string> symbols;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) symbols.push_back(line);
  }
  return GraphemeVocab(std::move(symbols));
}

std::size_t ctc_min_frames(std::span<const int> labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1]) ++n;
  }
  return n;
}

CtcResult ctc_loss(const Matrix& logits, std::span<const int> labels) {
  const Eigen::Index T = logits.rows();
  if (static_cast<std::size_t>(T) < ctc_min_frames(labels) || T == 0) throw DataError("sequence too short");
  if (!all_finite(logits)) throw NumericError("ctc_loss: non-finite logits");
  const Lattice lat = ctc_forward(logits, labels);
  const auto S = static_cast<Eigen::Index>(lat.ext.size());

  // beta(t, s): log probability of completing the path from state s at t,
  // excluding the emission at t.
  Matrix beta = Matrix::Constant(T, S, kNegInf);
  beta(T - 1, S - 1) = 0.0;
  if (S > 1) beta(T - 1, S - 2) = 0.0;
  for (Eigen::Index t = T - 1; t-- > 0;) {
    for (Eigen::Index s = 0; s < S; ++s) {
      double b = beta(t + 1, s) + lat.log_y(t + 1, lat.ext[static_cast<std::size_t>(s)]);
      if (s + 1 < S) b = log_add(b, beta(t + 1, s + 1) + lat.log_y(t + 1, lat.ext[static_cast<std::size_t>(s + 1)]));
      if (s + 2 < S && can_skip(lat.ext, static_cast<std::size_t>(s + 2))) {
        b = log_add(b, beta(t + 1, s + 2) + lat.log_y(t + 1, lat.ext[static_cast<std::size_t>(s + 2)]));
      }
      beta(t, s) = b;
    }
  }

  CtcResult r;
  r.loss = -lat.log_p;
  r.grad = lat.log_y.array().exp();
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index s = 0; s < S; ++s) {
      const double lo = lat.alpha(t, s) + beta(t, s);
      if (lo == kNegInf) continue;
      r.grad(t, lat.ext[static_cast<std::size_t>(s)]) -= std::exp(lo - lat.log_p);
    }
  }
  return r;
}

double ctc_logprob(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows() == 0 || static_cast<std::size_t>(logits.rows()) < ctc_min_frames(labels)) return kNegInf;
  return ctc_forward(logits, labels).log_p;
}

LossWeights seq_beta_weights() { return {{"ctc", 0.5}, {"seve", 0.5}}; }
LossWeights seq_alpha_weights() { return {{"ctc", 1.0 / 3}, {"aed", 1.0 / 3}, {"seve", 1.0 / 3}}; }

LossValue mtl_loss_seq(double ctc, double seve, std::optional<double> aed, const LossWeights& weights) {
  std::map<std::string, double> comps = {{"ctc", ctc}, {"seve", seve}};
  if (aed) comps["aed"] = *aed;
  return interpolate_losses(weights, comps);
}

Matrix splice_frames(const Matrix& feats, std::size_t context) {
  const Eigen::Index T = feats.rows();
  const Eigen::Index D = feats.cols();
  const auto c = static_cast<Eigen::Index>(context);
  Matrix out(T, D * (2 * c + 1));
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index k = -c; k <= c; ++k) {
      const Eigen::Index src = std::clamp<Eigen::Index>(t + k, 0, T - 1);
      out.block(t, (k + c) * D, 1, D) = feats.row(src);
    }
  }
  return out;
}

CtcModel init_seq(const GraphemeVocab& vocab, std::size_t feat_dim, const SeqArch& arch, Rng& rng) {
  if (arch.hidden.empty()) throw DataError("sequence model needs at least one hidden layer");
  CtcModel m;
  m.context = arch.context;
  m.vocab = vocab;
  std::vector<std::size_t> dims = {feat_dim * (2 * arch.context + 1)};
  dims.insert(dims.end(), arch.hidden.begin(), arch.hidden.end());
  const std::vector<Activation> acts(arch.hidden.size(), Activation::kRelu);
  m.encoder = NetParams::glorot(dims, acts, rng);
  m.ctc_head = linear_head(arch.hidden.back(), vocab.size() + 1, rng);
  m.seve_head = linear_head(arch.hidden.back(), kNumSeverities, rng);
  m.input_mean = Vector::Zero(static_cast<Eigen::Index>(feat_dim));
  m.input_scale = Vector::Ones(static_cast<Eigen::Index>(feat_dim));
  return m;
}

namespace {

Matrix normalized(const CtcModel& model, const Matrix& feats) {
  if (feats.cols() != model.input_mean.size()) throw DimensionError("sequence model: feature dimension mismatch");
  Matrix x = feats;
  x.rowwise() -= model.input_mean.transpose();
  x.array().rowwise() *= model.input_scale.transpose().array();
  return x;
}

}  // namespace

Matrix seq_input(const CtcModel& model, const FeatureMatrix& feats) {
  return splice_frames(normalized(model, feats.frames), model.context);
}

Matrix ctc_logits(const CtcModel& model, const FeatureMatrix& feats) {
  const ForwardCache enc = forward(model.encoder, seq_input(model, feats));
  return forward(model.ctc_head, enc.output()).output();
}

Matrix ctc_posteriors(const CtcModel& model, const FeatureMatrix& feats) {
  return softmax_rows(ctc_logits(model, feats));
}

Vector seq_severity_posterior(const CtcModel& model, const FeatureMatrix& feats) {
  const ForwardCache enc = forward(model.encoder, seq_input(model, feats));
  const Vector pooled = enc.output().colwise().mean().transpose();
  return softmax(forward(model.seve_head, pooled));
}

double ctc_score(const CtcModel& model, const FeatureMatrix& feats, std::span<const int> hypothesis) {
  if (feats.num_frames() < ctc_min_frames(hypothesis)) return kNegInf;
  return ctc_logprob(ctc_logits(model, feats), hypothesis);
}

double seq_batch_loss(CtcModel& model, std::span<const Matrix> inputs, std::span<const LabelSeq> labels,
                      std::span<const int> severities, const LossWeights& weights) {
  if (inputs.empty() || labels.size() != inputs.size() || severities.size() != inputs.size()) {
    throw DimensionError("seq_batch_loss: batch size mismatch");
  }
  const auto weight = [&](const char* k) {
    auto it = weights.find(k);
    return it == weights.end() ? 0.0 : it->second;
  };
  const double w_ctc = weight("ctc");
  const double w_seve = weight("seve");
  const std::size_t n = inputs.size();
  const double inv_b = 1.0 / static_cast<double>(n);
  std::vector<Eigen::Index> offsets = {0};
  for (const auto& x : inputs) offsets.push_back(offsets.back() + x.rows());
  Matrix x(offsets.back(), static_cast<Eigen::Index>(model.encoder.layer(0).in_dim()));
  for (std::size_t b = 0; b < n; ++b) x.middleRows(offsets[b], inputs[b].rows()) = splice_frames(inputs[b], model.context);

  const ForwardCache enc = forward(model.encoder, x);
  const ForwardCache head = forward(model.ctc_head, enc.output());
  Matrix g_logits(head.output().rows(), head.output().cols());
  double l_ctc = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const Eigen::Index len = offsets[b + 1] - offsets[b];
    CtcResult r = ctc_loss(head.output().middleRows(offsets[b], len), labels[b]);
    l_ctc += r.loss * inv_b;
    g_logits.middleRows(offsets[b], len) = r.grad * (w_ctc * inv_b);
  }
  Matrix g_enc = backward(model.ctc_head, head, g_logits);
  std::map<std::string, double> comps = {{"ctc", l_ctc}};
  if (w_seve != 0.0) {
    Matrix pooled(static_cast<Eigen::Index>(n), enc.output().cols());
    for (std::size_t b = 0; b < n; ++b) {
      if (severities[b] < 0) throw DataError("seq_batch_loss: missing severity label");
      pooled.row(static_cast<Eigen::Index>(b)) =
          enc.output().middleRows(offsets[b], offsets[b + 1] - offsets[b]).colwise().mean();
    }
    const ForwardCache sh = forward(model.seve_head, pooled);
    const BatchCeResult ce = softmax_ce_mean(sh.output(), severities);
    comps["seve"] = ce.loss;
    const Matrix g_pooled = backward(model.seve_head, sh, ce.grad * w_seve);
    for (std::size_t b = 0; b < n; ++b) {
      const Eigen::Index len = offsets[b + 1] - offsets[b];
      g_enc.middleRows(offsets[b], len).rowwise() +=
          g_pooled.row(static_cast<Eigen::Index>(b)) / static_cast<double>(len);
    }
  }
  const LossValue loss = interpolate_losses(weights, comps);
  if (!std::isfinite(loss.scalar)) throw NumericError("sequence model: non-finite loss");
  backward(model.encoder, enc, g_enc);
  return loss.scalar;
}

CtcModel train_seq(std::span<const SeqUtterance> data, const GraphemeVocab& vocab, const TrainConfig& cfg,
                   bool use_severity, const SeqArch& arch, std::vector<double>* epoch_losses) {
  cfg.validate();
  if (data.empty()) throw DataError("train_seq: empty corpus");
  const std::size_t feat_dim = data.front().feats.dim();
  std::size_t total_frames = 0;
  for (const auto& u : data) {
    if (u.feats.dim() != feat_dim) throw DimensionError("train_seq: ragged feature dims");
    if (use_severity && !u.severity) throw DataError("utterance '" + u.id + "' has no severity label");
    if (u.feats.num_frames() < ctc_min_frames(u.labels) || u.feats.num_frames() == 0) {
      throw DataError("utterance '" + u.id + "': sequence too short");
    }
    total_frames += u.feats.num_frames();
  }

  Rng rng(cfg.seed);
  CtcModel model = init_seq(vocab, feat_dim, arch, rng);
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(feat_dim));
  Vector sq = Vector::Zero(static_cast<Eigen::Index>(feat_dim));
  for (const auto& u : data) {
    sum += u.feats.frames.colwise().sum().transpose();
    sq += u.feats.frames.array().square().colwise().sum().matrix().transpose();
  }
  const double n = static_cast<double>(total_frames);
  model.input_mean = sum / n;
  const Vector var = (sq / n - model.input_mean.cwiseAbs2()).cwiseMax(0.0);
  model.input_scale = var.unaryExpr([](double v) { return 1.0 / std::sqrt(v + 1e-8); });

  std::vector<Matrix> inputs;
  inputs.reserve(data.size());
  for (const auto& u : data) inputs.push_back(normalized(model, u.feats.frames));

  const LossWeights weights = use_severity ? (cfg.loss_weights.empty() ? seq_beta_weights() : cfg.loss_weights)
                                           : LossWeights{{"ctc", 1.0}};

  std::vector<int> severities(data.size(), -1);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].severity) severities[i] = static_cast<int>(to_index(*data[i].severity));
  }

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(data.size(), rng);
    double total = 0.0;
    for (const auto& batch : make_batches(order, cfg.batch_size)) {
      std::vector<Matrix> xb;
      std::vector<LabelSeq> lb;
      std::vector<int> sb;
      for (std::size_t i : batch) {
        xb.push_back(inputs[i]);
        lb.push_back(data[i].labels);
        sb.push_back(severities[i]);
      }
      model.encoder.zero_grad();
      model.ctc_head.zero_grad();
      model.seve_head.zero_grad();
      const double loss = seq_batch_loss(model, xb, lb, sb, weights);
      total += loss * static_cast<double>(batch.size());
      sgd_step(model.encoder, cfg.learning_rate);
      sgd_step(model.ctc_head, cfg.learning_rate);
      if (use_severity) sgd_step(model.seve_head, cfg.learning_rate);
    }
    if (epoch_losses != nullptr) epoch_losses->push_back(total / static_cast<double>(data.size()));
  }
  return model;
}

std::size_t recognize_word(const CtcModel& model, const FeatureMatrix& feats, const std::vector<LabelSeq>& words) {
  if (words.empty()) throw DataError("recognize_word: empty word list");
  const Matrix logits = ctc_logits(model, feats);
  std::size_t best = 0;
  double best_score = kNegInf;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const double s = ctc_logprob(logits, words[i]);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
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

void write_seq(std::ostream& os, const CtcModel& model) {
  binio::write_magic(os, "SEVC");
  binio::write_u32(os, kSeqVersion);
  binio::write_u32(os, static_cast<std::uint32_t>(model.context));
  write_vec(os, model.input_mean);
  write_vec(os, model.input_scale);
  write_net(os, model.encoder);
  write_net(os, model.ctc_head);
  write_net(os, model.seve_head);
  binio::write_u32(os, static_cast<std::uint32_t>(model.vocab.size()));
  for (const auto& s : model.vocab.symbols()) binio::write_string(os, s);
}

CtcModel read_seq(std::istream& is) {
  binio::expect_magic(is, "SEVC");
  if (binio::read_u32(is) != kSeqVersion) throw DataError("unsupported sequence model checkpoint version");
  CtcModel m;
  m.context = binio::read_u32(is);
  m.input_mean = read_vec(is);
  m.input_scale = read_vec(is);
  m.encoder = read_net(is);
  m.ctc_head = read_net(is);
  m.seve_head = read_net(is);
  std::vector<std::string> symbols(binio::read_u32(is));
  for (auto& s : symbols) s = binio::read_string(is);
  m.vocab = GraphemeVocab(std::move(symbols));
  return m;
}

}  // namespace seva
