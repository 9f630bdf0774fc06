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

// Isolated-word decoding and N-best rescoring.
//
// Each word is a left-to-right chain of 3 states per phone; every frame
// either stays (p = 0.5) or advances one state (p = 0.5), and a path must
// start in the first state and end in the last. Frame scores are hybrid
// scaled likelihoods log p(s|x) - log prior(s).

#pragma once

#include "seva/lexicon.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace seva {

inline constexpr std::size_t kDefaultNBest = 50;
inline constexpr double kPriorFloor = 1e-6;
inline constexpr const char* kFirstPass = "first_pass";

struct Hypothesis {
  std::string word;
  double first_pass_logprob = 0.0;
  std::map<std::string, double> second_pass_logprobs;
};

/// Sorted by first-pass score, best first; unique words.
struct NBestList {
  std::string utterance_id;
  std::vector<Hypothesis> hypotheses;
};

/// log p(s|x) - log max(prior(s), 1e-6), frame by frame.
Matrix scaled_log_likelihoods(const Matrix& posteriors, const Vector& priors);

/// Best path score of the state chain `states` over `frame_scores`
/// (T x S), transitions included; -inf when T < |states|. The per-frame
/// state path is written to `path` when non-null.
double viterbi_score(const Matrix& frame_scores, const std::vector<std::size_t>& states,
                     std::vector<int>* path = nullptr);

/// Throws DataError when posterior rows do not sum to 1 (+-1e-6) or when no
/// word fits in the utterance.
NBestList decode_nbest(const Matrix& posteriors, const Lexicon& lexicon, const Vector& priors,
                       std::size_t n = kDefaultNBest, const std::string& utterance_id = {});

/// Tri-state path of the first-pass best word (pseudo labels).
std::vector<int> best_word_alignment(const Matrix& posteriors, const Lexicon& lexicon, const Vector& priors);

using RescoreWeights = std::map<std::string, double>;

/// Score of `h` under scorer `name` ("first_pass" or a second-pass name).
double hypothesis_score(const Hypothesis& h, const std::string& name);

/// Index of the hypothesis maximising sum_i w_i * score_i. Hypotheses with
/// -inf in a nonzero-weighted component are dropped; if all are dropped the
/// first-pass best is returned. Ties go to the better first-pass rank.
std::size_t rescore_index(const NBestList& nbest, const RescoreWeights& weights);
Hypothesis rescore(const NBestList& nbest, const RescoreWeights& weights);

/// Equal weight for first_pass and each named scorer.
RescoreWeights uniform_weights(const std::vector<std::string>& scorer_names);

struct NamedScorer {
  std::string name;
  std::function<double(const std::string& word)> score;
};

/// Fills each hypothesis' second-pass scores from `scorers` (a throwing
/// scorer yields -inf and a log line) and delegates to rescore.
Hypothesis combine_systems(NBestList& nbest, const std::vector<NamedScorer>& scorers, const RescoreWeights& weights,
                           std::ostream* log = nullptr);

/// `utt<TAB>rank<TAB>word<TAB>first_pass<TAB>name=value;...`, rank from 1.
void write_nbest(std::ostream& os, const std::vector<NBestList>& lists);
std::vector<NBestList> read_nbest(std::istream& is);

}  // namespace seva
