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

#include "am_fixtures.hpp"
#include "grad_harness.hpp"
#include "oracles.hpp"
#include "seva/hybrid_am.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace seva;

TEST(Lhuc, XiValues) {
  EXPECT_EQ(lhuc_xi(0.0), 1.0);
  EXPECT_NEAR(lhuc_xi(std::log(3.0)), 1.5, 1e-15);
  EXPECT_NEAR(lhuc_xi(-std::log(3.0)), 0.5, 1e-15);
}

TEST(Lhuc, ScaleExample) {
  Vector h(3), rs(3), rv(3);
  h << 1.0, 2.0, -4.0;
  rs << 0.0, std::log(3.0), 0.0;
  rv << 0.0, 0.0, -std::log(3.0);
  const Vector out = lhuc_scale(h, rs, rv);
  EXPECT_NEAR(out[0], 1.0, 1e-15);
  EXPECT_NEAR(out[1], 3.0, 1e-14);
  EXPECT_NEAR(out[2], -2.0, 1e-14);
  EXPECT_THROW(lhuc_scale(h, Vector::Zero(2), rv), DimensionError);
}

TEST(LhucProperty, ProductOfFactorsInOpenZeroFour) {
  oracle::Gen gen(1);
  for (int trial = 0; trial < 1000; ++trial) {
    // Beyond |r| ~ 37 the logistic rounds to exactly 0 or 1 in doubles.
    const double a = gen.uniform(-30.0, 30.0), b = gen.uniform(-30.0, 30.0);
    const double p = lhuc_xi(a) * lhuc_xi(b);
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 4.0);
  }
}

TEST(LhucProperty, ZeroVectorsReproduceUnadaptedPosteriors) {
  oracle::Gen gen(2);
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(static_cast<std::uint64_t>(trial));
    HybridArch arch;
    arch.hidden_layers = static_cast<std::size_t>(gen.integer(2, 4));
    arch.hidden_width = static_cast<std::size_t>(gen.integer(4, 32));
    const HybridDNN m = init_hybrid(kBaseFeatureDim, 9, 3, arch, rng);
    FeatureMatrix f;
    f.frames = gradcheck::random_matrix(gen.integer(1, 20), kBaseFeatureDim, rng);
    const LhucParams zeros = LhucParams::zeros(m.lhuc_dim(), {"x"});
    const AmPosteriors plain = forward_am(m, f);
    const AmPosteriors adapted = forward_am(m, f, nullptr, &zeros, {"x", SeverityLevel::kMid});
    EXPECT_LT((plain.tri - adapted.tri).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((plain.mono - adapted.mono).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ForwardAm, ErrorsForBadKeysAndAux) {
  Rng rng(3);
  HybridArch arch;
  arch.hidden_layers = 2;
  arch.hidden_width = 8;
  EXPECT_THROW(init_hybrid(kBaseFeatureDim, 9, 3, {1, 8}, rng), DataError);
  const HybridDNN m = init_hybrid(kBaseFeatureDim + 4, 9, 3, arch, rng);
  FeatureMatrix f;
  f.frames = Matrix::Zero(3, kBaseFeatureDim);
  EXPECT_THROW(forward_am(m, f), DataError);
  const Vector aux = Vector::Zero(4);
  EXPECT_NO_THROW(forward_am(m, f, &aux));
  const Vector short_aux = Vector::Zero(3);
  EXPECT_THROW(forward_am(m, f, &short_aux), DataError);
  const LhucParams p = LhucParams::zeros(8, {"a"});
  EXPECT_THROW(forward_am(m, f, &aux, nullptr, {"a", std::nullopt}), DataError);
  EXPECT_THROW(forward_am(m, f, &aux, &p, {"b", std::nullopt}), DataError);
}

TEST(ForwardAm, PosteriorRowsSumToOne) {
  Rng rng(4);
  const HybridDNN m = init_hybrid(kBaseFeatureDim, 9, 3, amfix::small_arch(), rng);
  FeatureMatrix f;
  f.frames = gradcheck::random_matrix(6, kBaseFeatureDim, rng);
  const AmPosteriors p = forward_am(m, f);
  ASSERT_EQ(p.tri.cols(), 9);
  ASSERT_EQ(p.mono.cols(), 3);
  ASSERT_EQ(p.seve.cols(), 4);
  for (Eigen::Index t = 0; t < 6; ++t) {
    EXPECT_NEAR(p.tri.row(t).sum(), 1.0, 1e-12);
    EXPECT_NEAR(p.seve.row(t).sum(), 1.0, 1e-12);
  }
}

TEST(LossWeights, DefaultsAndRedistribution) {
  const LossWeights on = am_loss_weights(true);
  EXPECT_NEAR(on.at("tri"), 1.0 / 3, 1e-15);
  EXPECT_NEAR(on.at("seve"), 1.0 / 3, 1e-15);
  const LossWeights off = am_loss_weights(false);
  EXPECT_NEAR(off.at("tri"), 0.5, 1e-15);
  EXPECT_NEAR(off.at("mono"), 0.5, 1e-15);
  EXPECT_EQ(off.at("seve"), 0.0);
  const LossWeights custom = am_loss_weights(false, {{"tri", 0.6}, {"mono", 0.2}, {"seve", 0.2}});
  EXPECT_NEAR(custom.at("tri"), 0.7, 1e-15);
  EXPECT_NEAR(custom.at("mono"), 0.3, 1e-15);
}

TEST(MtlLoss, MatchesHandComputedCrossEntropy) {
  AmPosteriors p;
  p.tri = Matrix(2, 3);
  p.tri << 0.5, 0.25, 0.25, 0.1, 0.8, 0.1;
  p.mono = Matrix(2, 1);
  p.mono << 1.0, 1.0;
  p.seve = Matrix(2, 4);
  p.seve << 0.25, 0.25, 0.25, 0.25, 0.1, 0.2, 0.3, 0.4;
  FrameTargets t;
  t.tri_state = {0, 1};
  t.monophone = {0, 0};
  t.severity = SeverityLevel::kHigh;
  const double tri = -(std::log(0.5) + std::log(0.8)) / 2;
  const double seve = -(std::log(0.25) + std::log(0.4)) / 2;
  const LossValue l = mtl_loss_dnn(p, t);
  EXPECT_NEAR(l.scalar, (tri + 0.0 + seve) / 3.0, 1e-14);
  EXPECT_NEAR(l.per_head.at("tri"), tri, 1e-14);
  t.tri_state = {0, 3};
  EXPECT_THROW(mtl_loss_dnn(p, t), DimensionError);
  t.tri_state = {0};
  EXPECT_THROW(mtl_loss_dnn(p, t), DimensionError);
}

TEST(AmGradients, MultitaskParametersMatchFiniteDifferences) {
  const GradCheckReport r = gradcheck::am_mtl_params(21);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  EXPECT_GE(r.coords_checked, 100u);
}

TEST(AmGradients, LhucVectorsMatchFiniteDifferences) {
  const GradCheckReport r = gradcheck::am_lhuc_vectors(22);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  EXPECT_GE(r.coords_checked, 100u);
}

TEST(TrainAm, LossFallsAndFramesAreRecognised) {
  const amfix::Data d = amfix::make(4, 6, 1);
  const AmTrainResult r = train_am(d.utts, amfix::config(), {}, amfix::small_arch());
  ASSERT_EQ(r.epoch_losses.size(), 6u);
  EXPECT_LT(r.epoch_losses.back(), 0.5 * r.epoch_losses.front());
  const amfix::Data test = amfix::make(4, 3, 2);
  EXPECT_GT(amfix::frame_accuracy(r.model, test.utts), 0.9);
  EXPECT_NEAR(r.model.tri_priors.sum(), 1.0, 1e-4);
  EXPECT_GE(r.model.tri_priors.minCoeff(), 1e-6);
  EXPECT_EQ(r.model.num_tristates(), 9u);
  EXPECT_EQ(r.model.num_monophones(), 3u);
}

TEST(TrainAm, DeterministicForSeed) {
  const amfix::Data d = amfix::make(2, 3, 1);
  const AmTrainResult a = train_am(d.utts, amfix::config(2), {}, amfix::small_arch());
  const AmTrainResult b = train_am(d.utts, amfix::config(2), {}, amfix::small_arch());
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  EXPECT_EQ(forward_am(a.model, d.utts[0].feats).tri, forward_am(b.model, d.utts[0].feats).tri);
  const AmTrainResult c = train_am(d.utts, amfix::config(2, 99), {}, amfix::small_arch());
  EXPECT_NE(a.epoch_losses, c.epoch_losses);
}

TEST(TrainAm, OptionsShapeTheModel) {
  const amfix::Data d = amfix::make(4, 2, 1, 0.6, 5);
  HybridOptions o;
  o.use_aux = true;
  o.use_seve_head = true;
  o.use_lhuc_seve = true;
  const AmTrainResult r = train_am(d.utts, amfix::config(2), o, amfix::small_arch());
  EXPECT_EQ(r.model.input_dim, kBaseFeatureDim + 5);
  EXPECT_TRUE(r.model.uses_aux());
  // Severity LHUC vectors are trained jointly with the network.
  for (std::size_t s = 0; s < kNumSeverities; ++s) EXPECT_GT(r.lhuc.r_seve[s].norm(), 0.0);
  EXPECT_EQ(r.lhuc.r_spkr.size(), 4u);
  EXPECT_EQ(r.lhuc.r_spkr.at("spk0").norm(), 0.0);
}

TEST(TrainAm, RejectsMissingLabels) {
  amfix::Data d = amfix::make(2, 2, 1);
  HybridOptions o;
  o.use_aux = true;
  EXPECT_THROW(train_am(d.utts, amfix::config(1), o, amfix::small_arch()), DataError);
  d.utts[1].severity.reset();
  o = {};
  o.use_seve_head = true;
  EXPECT_THROW(train_am(d.utts, amfix::config(1), o, amfix::small_arch()), DataError);
  EXPECT_NO_THROW(train_am(d.utts, amfix::config(1), {}, amfix::small_arch()));
  d.utts[0].targets.tri_state.pop_back();
  d.utts[0].targets.monophone.pop_back();
  EXPECT_THROW(train_am(d.utts, amfix::config(1), {}, amfix::small_arch()), DataError);
  EXPECT_THROW(train_am({}, amfix::config(1), {}, amfix::small_arch()), DataError);
}

TEST(AmTrainer, LhucEpochLeavesNetworkFrozen) {
  const amfix::Data d = amfix::make(2, 3, 1);
  AmTrainer trainer(d.utts, {}, amfix::config(), amfix::small_arch());
  trainer.trunk_epoch(false);
  const Matrix before = forward_am(trainer.model(), d.utts[0].feats).tri;
  const double first = trainer.lhuc_epoch(true, false);
  double last = first;
  for (int e = 0; e < 4; ++e) last = trainer.lhuc_epoch(true, false);
  EXPECT_EQ(forward_am(trainer.model(), d.utts[0].feats).tri, before);
  EXPECT_LT(last, first);
  EXPECT_GT(trainer.lhuc().r_spkr.at("spk1").norm(), 0.0);
}

TEST(HybridIo, CheckpointRoundTrip) {
  const amfix::Data d = amfix::make(2, 2, 1);
  HybridOptions o;
  o.use_lhuc_seve = true;
  const AmTrainResult r = train_am(d.utts, amfix::config(1), o, amfix::small_arch());
  std::stringstream ss;
  write_hybrid(ss, r.model, r.lhuc);
  const auto [m, l] = read_hybrid(ss);
  EXPECT_EQ(m.tri_priors, r.model.tri_priors);
  EXPECT_EQ(l.r_seve[2], r.lhuc.r_seve[2]);
  const LhucKey key{"spk1", SeverityLevel::kLow};
  EXPECT_EQ(forward_am(m, d.utts[0].feats, nullptr, &l, key).tri,
            forward_am(r.model, d.utts[0].feats, nullptr, &r.lhuc, key).tri);
  std::stringstream bad("nope");
  EXPECT_THROW(read_hybrid(bad), Error);
}

TEST(HybridIo, PosteriorEntriesCheckCounts) {
  EXPECT_THROW(posterior_entries({"a", "b"}, {Matrix::Zero(1, 1)}), DimensionError);
  const auto e = posterior_entries({"a"}, {Matrix::Ones(2, 3)});
  ASSERT_EQ(e.size(), 1u);
  EXPECT_EQ(e[0].id, "a");
}
