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

#include "oracles.hpp"
#include "seva/decoder.hpp"
#include "seva/netcore.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace seva;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Lexicon tiny_lexicon() {
  // Three phones, so nine tri-states.
  return Lexicon({"a", "b", "c"}, {{"ab", {0, 1}}, {"ba", {1, 0}}, {"c", {2}}, {"abc", {0, 1, 2}}});
}

Matrix random_posteriors(oracle::Gen& gen, int T, int K) {
  Matrix z(T, K);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = 2.0 * gen.normal();
  return softmax_rows(z);
}

// Posteriors peaked on a given tri-state sequence, `per` frames each.
Matrix peaked(const std::vector<std::size_t>& states, int per, int K) {
  Matrix p = Matrix::Constant(static_cast<Eigen::Index>(states.size()) * per, K, 0.02 / (K - 1));
  for (std::size_t s = 0; s < states.size(); ++s) {
    for (int f = 0; f < per; ++f) {
      const auto t = static_cast<Eigen::Index>(s) * per + f;
      p(t, static_cast<Eigen::Index>(states[s])) = 0.98;
    }
  }
  return p;
}

Hypothesis hyp(std::string word, double first, std::map<std::string, double> second = {}) {
  return {std::move(word), first, std::move(second)};
}

}  // namespace

TEST(ScaledLikelihoods, SubtractLogPriorWithFloor) {
  Matrix p(1, 3);
  p << 0.5, 0.25, 0.25;
  Vector prior(3);
  prior << 0.5, 0.0, 0.25;
  const Matrix s = scaled_log_likelihoods(p, prior);
  EXPECT_NEAR(s(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(s(0, 1), std::log(0.25) - std::log(1e-6), 1e-12);
  EXPECT_NEAR(s(0, 2), 0.0, 1e-15);
  EXPECT_THROW(scaled_log_likelihoods(p, Vector::Ones(2)), DimensionError);
}

TEST(Viterbi, HandExample) {
  // Two states over three frames: paths (0,0,1) and (0,1,1).
  Matrix f(3, 2);
  f << -1.0, -5.0, -2.0, -1.0, -4.0, -0.5;
  const double expected = std::max(-1.0 - 2.0 - 0.5, -1.0 - 1.0 - 0.5) + 2 * std::log(0.5);
  std::vector<int> path;
  EXPECT_NEAR(viterbi_score(f, {0, 1}, &path), expected, 1e-14);
  EXPECT_EQ(path, (std::vector<int>{0, 1, 1}));
  EXPECT_EQ(viterbi_score(f, {0, 1, 0, 1}), -kInf);
  EXPECT_EQ(viterbi_score(f, {}), -kInf);
  EXPECT_THROW(viterbi_score(f, {0, 2}), DimensionError);
}

TEST(ViterbiProperty, MatchesExhaustiveAlignment) {
  oracle::Gen gen(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int T = gen.integer(1, 10), K = gen.integer(1, 5);
    Matrix f(T, 6);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = gen.normal();
    std::vector<std::size_t> states;
    for (int k = 0; k < K; ++k) states.push_back(static_cast<std::size_t>(gen.integer(0, 5)));
    oracle::Grid g(static_cast<std::size_t>(T), std::vector<double>(6));
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < 6; ++j) g[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] = f(t, j);
    const double truth = oracle::best_alignment(g, states);
    std::vector<int> path;
    const double got = viterbi_score(f, states, &path);
    if (truth == -kInf) {
      EXPECT_EQ(got, -kInf);
      continue;
    }
    EXPECT_NEAR(got, truth, 1e-10);
    // The returned path scores what it claims.
    double replay = f(0, path[0]);
    for (int t = 1; t < T; ++t) replay += std::log(0.5) + f(t, path[static_cast<std::size_t>(t)]);
    EXPECT_NEAR(replay, got, 1e-10);
  }
}

TEST(DecodeNbest, PeakedPosteriorsRecoverWord) {
  const Lexicon lex = tiny_lexicon();
  const Vector prior = Vector::Constant(9, 1.0 / 9);
  for (std::size_t w = 0; w < lex.size(); ++w) {
    const Matrix p = peaked(lex.tristate_sequence(w), 3, 9);
    const NBestList nb = decode_nbest(p, lex, prior, 50, "u");
    EXPECT_EQ(nb.utterance_id, "u");
    EXPECT_EQ(nb.hypotheses.front().word, lex.entry(w).word);
    EXPECT_EQ(nb.hypotheses.size(), lex.size());
    for (std::size_t i = 1; i < nb.hypotheses.size(); ++i) {
      EXPECT_GE(nb.hypotheses[i - 1].first_pass_logprob, nb.hypotheses[i].first_pass_logprob);
    }
    const auto align = best_word_alignment(p, lex, prior);
    ASSERT_EQ(align.size(), static_cast<std::size_t>(p.rows()));
    for (Eigen::Index t = 0; t < p.rows(); ++t) {
      EXPECT_EQ(align[static_cast<std::size_t>(t)], static_cast<int>(lex.tristate_sequence(w)[static_cast<std::size_t>(t / 3)]));
    }
  }
}

TEST(DecodeNbest, TruncatesAndDropsInfeasibleWords) {
  const Lexicon lex = tiny_lexicon();
  const Vector prior = Vector::Constant(9, 1.0 / 9);
  oracle::Gen gen(2);
  // Four frames: only "c" (3 states) is feasible.
  const NBestList nb = decode_nbest(random_posteriors(gen, 4, 9), lex, prior);
  ASSERT_EQ(nb.hypotheses.size(), 1u);
  EXPECT_EQ(nb.hypotheses[0].word, "c");
  EXPECT_EQ(decode_nbest(random_posteriors(gen, 12, 9), lex, prior, 2).hypotheses.size(), 2u);
  EXPECT_THROW(decode_nbest(random_posteriors(gen, 2, 9), lex, prior), DataError);
  EXPECT_THROW(decode_nbest(random_posteriors(gen, 12, 9), lex, prior, 0), DataError);
  EXPECT_THROW(decode_nbest(random_posteriors(gen, 12, 8), lex, Vector::Ones(8)), DimensionError);
  EXPECT_THROW(decode_nbest(Matrix::Constant(12, 9, 0.5), lex, prior), DataError);
}

TEST(Rescore, FirstPassOnlyIsIdentity) {
  oracle::Gen gen(3);
  for (int trial = 0; trial < 100; ++trial) {
    NBestList nb;
    double score = 0.0;
    for (int i = 0; i < gen.integer(1, 8); ++i) {
      score -= gen.uniform(0.0, 3.0);
      nb.hypotheses.push_back(hyp("w" + std::to_string(i), score, {{"ctc", gen.uniform(-20, 0)}}));
    }
    EXPECT_EQ(rescore_index(nb, {{kFirstPass, 1.0}}), 0u);
  }
}

TEST(Rescore, TwoHypothesisCrossover) {
  NBestList nb;
  nb.hypotheses = {hyp("x", -10.0, {{"ctc", -8.0}}), hyp("y", -12.0, {{"ctc", -3.0}})};
  // Crossover where the interpolated scores are equal:
  // (1-w) f1 + w c1 = (1-w) f2 + w c2  =>  w* = (f1 - f2) / ((f1 - f2) + (c2 - c1)).
  const double w_star = (-10.0 + 12.0) / ((-10.0 + 12.0) + (-3.0 + 8.0));
  EXPECT_EQ(rescore(nb, {{kFirstPass, 1.0 - (w_star - 0.01)}, {"ctc", w_star - 0.01}}).word, "x");
  EXPECT_EQ(rescore(nb, {{kFirstPass, 1.0 - (w_star + 0.01)}, {"ctc", w_star + 0.01}}).word, "y");
}

TEST(Rescore, DropsFailedScoresAndRequiresKnownScorers) {
  NBestList nb;
  nb.utterance_id = "u";
  nb.hypotheses = {hyp("x", -1.0, {{"ctc", -kInf}}), hyp("y", -5.0, {{"ctc", -2.0}})};
  EXPECT_EQ(rescore(nb, {{kFirstPass, 0.5}, {"ctc", 0.5}}).word, "y");
  EXPECT_THROW(rescore(nb, {{"lm", 1.0}}), DataError);
  // A zero weight never consults the scorer.
  EXPECT_EQ(rescore(nb, {{kFirstPass, 1.0}, {"lm", 0.0}}).word, "x");
  NBestList all_bad = nb;
  all_bad.hypotheses[1].second_pass_logprobs["ctc"] = -kInf;
  EXPECT_EQ(rescore_index(all_bad, {{"ctc", 1.0}}), 0u);
  EXPECT_THROW(rescore(NBestList{}, {{kFirstPass, 1.0}}), DataError);
}

TEST(Rescore, TiesKeepFirstPassOrder) {
  NBestList nb;
  nb.hypotheses = {hyp("x", -1.0, {{"ctc", -3.0}}), hyp("y", -3.0, {{"ctc", -1.0}})};
  EXPECT_EQ(rescore(nb, uniform_weights({"ctc"})).word, "x");
}

TEST(Rescore, UniformWeights) {
  const RescoreWeights w = uniform_weights({"ctc", "lm"});
  ASSERT_EQ(w.size(), 3u);
  for (const auto& [k, v] : w) EXPECT_NEAR(v, 1.0 / 3, 1e-15) << k;
}

TEST(Combine, FillsScoresAndLogsFailures) {
  NBestList nb;
  nb.utterance_id = "u7";
  nb.hypotheses = {hyp("ab", -4.0), hyp("cd", -5.0)};
  std::vector<NamedScorer> scorers = {
      {"len", [](const std::string& w) { return w == "cd" ? 0.0 : -10.0; }},
      {"boom", [](const std::string& w) -> double {
         if (w == "ab") throw DataError("too short");
         return -1.0;
       }},
  };
  std::ostringstream log;
  const Hypothesis best = combine_systems(nb, scorers, {{kFirstPass, 0.5}, {"len", 0.5}}, &log);
  EXPECT_EQ(best.word, "cd");
  EXPECT_EQ(nb.hypotheses[0].second_pass_logprobs.at("boom"), -kInf);
  EXPECT_EQ(nb.hypotheses[1].second_pass_logprobs.at("boom"), -1.0);
  EXPECT_NE(log.str().find("'boom' failed on 'u7' / 'ab'"), std::string::npos);
}

TEST(NbestIo, RoundTripIncludingInfinities) {
  std::vector<NBestList> lists(2);
  lists[0].utterance_id = "a";
  lists[0].hypotheses = {hyp("ab", -1.25, {{"ctc", -3.5}, {"lm", -kInf}}), hyp("c", -2.0 / 3.0)};
  lists[1].utterance_id = "b";
  lists[1].hypotheses = {hyp("ba", -0.1, {{"ctc", 1e-300}})};
  std::stringstream ss;
  write_nbest(ss, lists);
  const auto back = read_nbest(ss);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].utterance_id, lists[i].utterance_id);
    ASSERT_EQ(back[i].hypotheses.size(), lists[i].hypotheses.size());
    for (std::size_t r = 0; r < lists[i].hypotheses.size(); ++r) {
      EXPECT_EQ(back[i].hypotheses[r].word, lists[i].hypotheses[r].word);
      EXPECT_EQ(back[i].hypotheses[r].first_pass_logprob, lists[i].hypotheses[r].first_pass_logprob);
      EXPECT_EQ(back[i].hypotheses[r].second_pass_logprobs, lists[i].hypotheses[r].second_pass_logprobs);
    }
  }
}

TEST(NbestIo, RejectsMalformedLines) {
  std::stringstream few("a\t1\tab\n");
  EXPECT_THROW(read_nbest(few), DataError);
  std::stringstream order("a\t2\tab\t-1\t\n");
  EXPECT_THROW(read_nbest(order), DataError);
  std::stringstream num("a\t1\tab\tx1\t\n");
  EXPECT_THROW(read_nbest(num), DataError);
  std::stringstream kv("a\t1\tab\t-1\tctc\n");
  EXPECT_THROW(read_nbest(kv), DataError);
}
