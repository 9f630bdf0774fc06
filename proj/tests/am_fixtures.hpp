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

// Tiny synthetic acoustic data: each tri-state has its own mean in the
// 160-dim feature space, speakers add an offset. Cheap enough to train a
// small hybrid model inside a unit test.

#pragma once

#include "seva/hybrid_am.hpp"

#include <random>
#include <string>
#include <vector>

namespace amfix {

using namespace seva;

inline constexpr std::size_t kPhones = 3;
inline constexpr std::size_t kFramesPerState = 3;

struct Data {
  std::vector<AmUtterance> utts;
  Matrix state_means;  // 9 x 160
};

inline Data make(std::size_t speakers, std::size_t utts_per_speaker, std::uint64_t seed, double noise = 0.6,
                 std::size_t aux_dim = 0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Data d;
  d.state_means.resize(kPhones * 3, kBaseFeatureDim);
  std::mt19937_64 mean_rng(12345);
  for (Eigen::Index i = 0; i < d.state_means.size(); ++i) d.state_means.data()[i] = n01(mean_rng);
  for (std::size_t s = 0; s < speakers; ++s) {
    RowVector offset(kBaseFeatureDim);
    for (Eigen::Index i = 0; i < offset.size(); ++i) offset[i] = 0.5 * n01(rng);
    const SeverityLevel sev = severity_from_index(s % kNumSeverities);
    for (std::size_t u = 0; u < utts_per_speaker; ++u) {
      AmUtterance utt;
      utt.speaker = "spk" + std::to_string(s);
      utt.id = utt.speaker + "_u" + std::to_string(u);
      utt.severity = sev;
      std::vector<int> phones;
      for (std::size_t k = 0; k < 3; ++k) phones.push_back(static_cast<int>(rng() % kPhones));
      const std::size_t t_count = phones.size() * 3 * kFramesPerState;
      utt.feats.frames.resize(static_cast<Eigen::Index>(t_count), kBaseFeatureDim);
      utt.targets.severity = sev;
      std::size_t t = 0;
      for (int p : phones) {
        for (int st = 0; st < 3; ++st) {
          for (std::size_t f = 0; f < kFramesPerState; ++f, ++t) {
            const int tri = 3 * p + st;
            RowVector x = d.state_means.row(tri) + offset;
            for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += noise * n01(rng);
            utt.feats.frames.row(static_cast<Eigen::Index>(t)) = x;
            utt.targets.tri_state.push_back(tri);
            utt.targets.monophone.push_back(p);
          }
        }
      }
      if (aux_dim > 0) {
        utt.aux = Vector::Constant(static_cast<Eigen::Index>(aux_dim), static_cast<double>(to_index(sev)));
      }
      d.utts.push_back(std::move(utt));
    }
  }
  return d;
}

inline TrainConfig config(std::size_t epochs = 6, std::uint64_t seed = 3) {
  TrainConfig c;
  c.learning_rate = 0.1;
  c.epochs = epochs;
  c.batch_size = 64;
  c.seed = seed;
  return c;
}

inline HybridArch small_arch() {
  HybridArch a;
  a.hidden_layers = 2;
  a.hidden_width = 24;
  return a;
}

inline double frame_accuracy(const HybridDNN& model, const std::vector<AmUtterance>& utts,
                             const LhucParams* lhuc = nullptr, bool keyed = false) {
  std::size_t hit = 0, total = 0;
  for (const auto& u : utts) {
    LhucKey key;
    if (keyed) {
      key.speaker = u.speaker;
      key.severity = u.severity;
    }
    const AmPosteriors p = forward_am(model, u.feats, u.aux.size() > 0 ? &u.aux : nullptr, lhuc, key);
    for (Eigen::Index t = 0; t < p.tri.rows(); ++t) {
      Eigen::Index arg = 0;
      p.tri.row(t).maxCoeff(&arg);
      hit += arg == u.targets.tri_state[static_cast<std::size_t>(t)];
      ++total;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace amfix
