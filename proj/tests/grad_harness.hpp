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

// Finite-difference checks for every trainable loss, shared by the unit
// tests and the acceptance binary. Each builder sets up a small random model,
// computes analytic gradients once and hands the parameter pointers to
// check_gradients.

#pragma once

#include "seva/adaptation.hpp"
#include "seva/hybrid_am.hpp"
#include "seva/netcore.hpp"
#include "seva/seqmodel.hpp"

#include <string>
#include <vector>

namespace gradcheck {

using namespace seva;

struct Named {
  std::string name;
  GradCheckReport report;
};

inline constexpr std::size_t kCoords = 120;

inline GradCheckOptions options(std::uint64_t seed = 7) {
  GradCheckOptions o;
  o.max_coords = kCoords;
  o.seed = seed;
  return o;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * gaussian(rng);
  return m;
}

inline Vector random_vector(Eigen::Index n, Rng& rng, double scale = 1.0) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * gaussian(rng);
  return v;
}

// Collects (param*, grad) pairs of a network in for_each_param order.
inline void collect(NetParams& net, std::vector<double*>& coords, std::vector<double>& grads) {
  net.for_each_param([&](double& p, double& g) {
    coords.push_back(&p);
    grads.push_back(g);
  });
}

/// Two-layer net, softmax cross entropy (mean over rows).
inline GradCheckReport softmax_ce_net(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t dims[] = {6, 10, 5};
  const Activation acts[] = {Activation::kSigmoid, Activation::kLinear};
  NetParams net = NetParams::glorot(dims, acts, rng);
  const Matrix x = random_matrix(12, 6, rng);
  std::vector<int> y(12);
  for (auto& v : y) v = static_cast<int>(rng() % 5);
  auto loss = [&] { return softmax_ce_mean(forward(net, x).output(), y).loss; };
  net.zero_grad();
  const ForwardCache c = forward(net, x);
  backward(net, c, softmax_ce_mean(c.output(), y).grad);
  std::vector<double*> coords;
  std::vector<double> g;
  collect(net, coords, g);
  return check_gradients(loss, coords, g, options(seed));
}

struct AmFixture {
  HybridDNN model;
  FrameSet fs;
  LhucTable table;
  std::vector<std::size_t> rows;
};

inline AmFixture am_fixture(std::uint64_t seed, std::size_t width = 16) {
  Rng rng(seed);
  AmFixture f;
  HybridArch arch;
  arch.hidden_layers = 3;
  arch.hidden_width = width;
  const std::size_t input_dim = 7;
  f.model = init_hybrid(input_dim, 9, 3, arch, rng);
  // ReLU trunk; positive biases keep most units active so the finite
  // differences rarely straddle a kink.
  for (std::size_t k = 0; k < f.model.trunk.num_layers(); ++k) f.model.trunk.layer(k).bias.setConstant(0.3);
  const std::size_t n = 24;
  f.fs.inputs = random_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(input_dim), rng);
  f.fs.speakers = {"a", "b", "c"};
  for (std::size_t i = 0; i < n; ++i) {
    f.fs.tri.push_back(static_cast<int>(rng() % 9));
    f.fs.mono.push_back(f.fs.tri.back() / 3);
    f.fs.seve.push_back(static_cast<int>(i % kNumSeverities));
    f.fs.speaker.push_back(static_cast<int>(i % 3));
    f.rows.push_back(i);
  }
  f.table.use_spkr = true;
  f.table.use_seve = true;
  for (int s = 0; s < 3; ++s) f.table.spkr.push_back(random_vector(static_cast<Eigen::Index>(width), rng, 0.5));
  for (auto& v : f.table.seve) v = random_vector(static_cast<Eigen::Index>(width), rng, 0.5);
  return f;
}

inline LhucTable zeros_like(const LhucTable& t) {
  LhucTable z = t;
  for (auto& v : z.spkr) v.setZero();
  for (auto& v : z.seve) v.setZero();
  return z;
}

/// Three-head interpolated CE w.r.t. trunk and head parameters.
inline GradCheckReport am_mtl_params(std::uint64_t seed) {
  AmFixture f = am_fixture(seed);
  const LossWeights w = {{"tri", 1.0 / 3}, {"mono", 1.0 / 3}, {"seve", 1.0 / 3}};
  auto loss = [&] { return am_batch_loss(f.model, f.table, f.fs, f.rows, w, false, nullptr); };
  zero_grads(f.model);
  am_batch_loss(f.model, f.table, f.fs, f.rows, w, true, nullptr);
  std::vector<double*> coords;
  std::vector<double> g;
  collect(f.model.trunk, coords, g);
  collect(f.model.tri_head, coords, g);
  collect(f.model.mono_head, coords, g);
  collect(f.model.seve_head, coords, g);
  return check_gradients(loss, coords, g, options(seed));
}

/// Same loss w.r.t. the speaker and severity LHUC vectors.
inline GradCheckReport am_lhuc_vectors(std::uint64_t seed) {
  AmFixture f = am_fixture(seed);
  const LossWeights w = {{"tri", 1.0 / 3}, {"mono", 1.0 / 3}, {"seve", 1.0 / 3}};
  auto loss = [&] { return am_batch_loss(f.model, f.table, f.fs, f.rows, w, false, nullptr); };
  LhucTable grad = zeros_like(f.table);
  am_batch_loss(f.model, f.table, f.fs, f.rows, w, false, &grad);
  std::vector<double*> coords;
  std::vector<double> g;
  for (std::size_t s = 0; s < f.table.spkr.size(); ++s) {
    for (Eigen::Index i = 0; i < f.table.spkr[s].size(); ++i) {
      coords.push_back(&f.table.spkr[s][i]);
      g.push_back(grad.spkr[s][i]);
    }
  }
  for (std::size_t s = 0; s < kNumSeverities; ++s) {
    for (Eigen::Index i = 0; i < f.table.seve[s].size(); ++i) {
      coords.push_back(&f.table.seve[s][i]);
      g.push_back(grad.seve[s][i]);
    }
  }
  return check_gradients(loss, coords, g, options(seed));
}

/// Interpolated-target (KL regularised) CE through a small network.
inline GradCheckReport kld(std::uint64_t seed, double lambda) {
  Rng rng(seed);
  const std::size_t dims[] = {5, 9, 6};
  const Activation acts[] = {Activation::kSigmoid, Activation::kLinear};
  NetParams net = NetParams::glorot(dims, acts, rng);
  const Matrix x = random_matrix(10, 5, rng);
  std::vector<int> hard(10);
  for (auto& v : hard) v = static_cast<int>(rng() % 6);
  const Matrix p_si = softmax_rows(random_matrix(10, 6, rng, 2.0));
  auto loss = [&] { return kld_loss(forward(net, x).output(), hard, p_si, lambda).loss; };
  net.zero_grad();
  const ForwardCache c = forward(net, x);
  backward(net, c, kld_loss(c.output(), hard, p_si, lambda).grad);
  std::vector<double*> coords;
  std::vector<double> g;
  collect(net, coords, g);
  return check_gradients(loss, coords, g, options(seed));
}

/// CTC loss w.r.t. the logits.
inline GradCheckReport ctc_logits(std::uint64_t seed) {
  Rng rng(seed);
  Matrix logits = random_matrix(15, 9, rng);
  const std::vector<int> labels = {3, 1, 1, 8, 2};
  auto loss = [&] { return ctc_loss(logits, labels).loss; };
  const CtcResult r = ctc_loss(logits, labels);
  std::vector<double*> coords;
  std::vector<double> g;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    for (Eigen::Index k = 0; k < logits.cols(); ++k) {
      coords.push_back(&logits(t, k));
      g.push_back(r.grad(t, k));
    }
  }
  return check_gradients(loss, coords, g, options(seed));
}

/// Sequence multitask loss (CTC + pooled severity CE, 1/2 each) w.r.t. the
/// encoder and both heads.
inline GradCheckReport seq_mtl(std::uint64_t seed) {
  Rng rng(seed);
  const GraphemeVocab vocab({"a", "b", "c", "d"});
  SeqArch arch;
  arch.hidden = {10};
  arch.context = 1;
  CtcModel m = init_seq(vocab, 4, arch, rng);
  m.encoder.layer(0).bias.setConstant(0.3);
  std::vector<Matrix> inputs = {random_matrix(7, 4, rng), random_matrix(9, 4, rng), random_matrix(6, 4, rng)};
  const std::vector<LabelSeq> labels = {{1, 2}, {3, 3, 4}, {2}};
  const std::vector<int> sev = {0, 3, 1};
  const LossWeights w = seq_beta_weights();
  auto loss = [&] { return seq_batch_loss(m, inputs, labels, sev, w); };
  m.encoder.zero_grad();
  m.ctc_head.zero_grad();
  m.seve_head.zero_grad();
  seq_batch_loss(m, inputs, labels, sev, w);
  std::vector<double*> coords;
  std::vector<double> g;
  collect(m.encoder, coords, g);
  collect(m.ctc_head, coords, g);
  collect(m.seve_head, coords, g);
  return check_gradients(loss, coords, g, options(seed));
}

/// Every check, in a fixed order.
inline std::vector<Named> all(std::uint64_t seed = 11) {
  return {
      {"softmax_ce", softmax_ce_net(seed)},
      {"am_mtl_params", am_mtl_params(seed)},
      {"am_lhuc_vectors", am_lhuc_vectors(seed)},
      {"kld_lambda_0", kld(seed, 0.0)},
      {"kld_lambda_0.5", kld(seed, 0.5)},
      {"kld_lambda_1", kld(seed, 1.0)},
      {"ctc_logits", ctc_logits(seed)},
      {"seq_mtl", seq_mtl(seed)},
  };
}

}  // namespace gradcheck
