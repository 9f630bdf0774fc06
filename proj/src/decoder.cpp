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

#include "seva/decoder.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace seva {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLogHalf = std::log(0.5);

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError("malformed number '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

Matrix scaled_log_likelihoods(const Matrix& posteriors, const Vector& priors) {
  if (priors.size() != posteriors.cols()) throw DimensionError("decoder: prior size does not match posterior columns");
  const Vector log_prior = priors.unaryExpr([](double p) { return std::log(std::max(p, kPriorFloor)); });
  Matrix out = posteriors.array().log().matrix();
  out.rowwise() -= log_prior.transpose();
  return out;
}

double viterbi_score(const Matrix& frame_scores, const std::vector<std::size_t>& states, std::vector<int>* path) {
  const Eigen::Index T = frame_scores.rows();
  const std::size_t K = states.size();
  if (K == 0 || static_cast<std::size_t>(T) < K) return kNegInf;
  for (std::size_t s : states) {
    if (static_cast<Eigen::Index>(s) >= frame_scores.cols()) throw DimensionError("viterbi: state out of range");
  }
  std::vector<double> delta(K, kNegInf), next(K);
  std::vector<std::vector<char>> advanced(static_cast<std::size_t>(T), std::vector<char>(K, 0));
  delta[0] = frame_scores(0, static_cast<Eigen::Index>(states[0]));
  for (Eigen::Index t = 1; t < T; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      double best = delta[k];
      if (k > 0 && delta[k - 1] > best) {
        best = delta[k - 1];
        advanced[static_cast<std::size_t>(t)][k] = 1;
      }
      next[k] = best == kNegInf ? kNegInf : best + kLogHalf + frame_scores(t, static_cast<Eigen::Index>(states[k]));
    }
    std::swap(delta, next);
  }
  const double score = delta[K - 1];
  if (path != nullptr && score != kNegInf) {
    path->assign(static_cast<std::size_t>(T), 0);
    std::size_t k = K - 1;
    for (Eigen::Index t = T - 1; t >= 0; --t) {
      (*path)[static_cast<std::size_t>(t)] = static_cast<int>(states[k]);
      if (t > 0 && advanced[static_cast<std::size_t>(t)][k]) --k;
    }
  }
  return score;
}

namespace {

void check_posteriors(const Matrix& posteriors) {
  for (Eigen::Index t = 0; t < posteriors.rows(); ++t) {
    const double s = posteriors.row(t).sum();
    if (!(std::abs(s - 1.0) <= 1e-6)) {
      throw DataError("decoder: posterior row " + std::to_string(t) + " sums to " + format_double(s));
    }
  }
}

std::vector<std::pair<double, std::size_t>> word_scores(const Matrix& posteriors, const Lexicon& lexicon,
                                                        const Vector& priors) {
  check_posteriors(posteriors);
  if (static_cast<std::size_t>(posteriors.cols()) != lexicon.num_tristates()) {
    throw DimensionError("decoder: posterior columns do not match the lexicon's tri-states");
  }
  const Matrix frame_scores = scaled_log_likelihoods(posteriors, priors);
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < lexicon.size(); ++i) {
    const double s = viterbi_score(frame_scores, lexicon.tristate_sequence(i));
    if (s != kNegInf) scored.emplace_back(s, i);
  }
  if (scored.empty()) {
    throw DataError("decoder: utterance of " + std::to_string(posteriors.rows()) +
                    " frames is shorter than every word; no feasible hypothesis");
  }
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return lexicon.entry(a.second).word < lexicon.entry(b.second).word;
  });
  return scored;
}

}  // namespace

NBestList decode_nbest(const Matrix& posteriors, const Lexicon& lexicon, const Vector& priors, std::size_t n,
                       const std::string& utterance_id) {
  if (n == 0) throw DataError("decode_nbest: N must be positive");
  const auto scored = word_scores(posteriors, lexicon, priors);
  NBestList list;
  list.utterance_id = utterance_id;
  for (std::size_t i = 0; i < std::min(n, scored.size()); ++i) {
    list.hypotheses.push_back({lexicon.entry(scored[i].second).word, scored[i].first, {}});
  }
  return list;
}

std::vector<int> best_word_alignment(const Matrix& posteriors, const Lexicon& lexicon, const Vector& priors) {
  const auto scored = word_scores(posteriors, lexicon, priors);
  std::vector<int> path;
  viterbi_score(scaled_log_likelihoods(posteriors, priors), lexicon.tristate_sequence(scored.front().second), &path);
  return path;
}

double hypothesis_score(const Hypothesis& h, const std::string& name) {
  if (name == kFirstPass) return h.first_pass_logprob;
  auto it = h.second_pass_logprobs.find(name);
  if (it == h.second_pass_logprobs.end()) {
    throw DataError("hypothesis '" + h.word + "' has no score from scorer '" + name + "'");
  }
  return it->second;
}

std::size_t rescore_index(const NBestList& nbest, const RescoreWeights& weights) {
  if (nbest.hypotheses.empty()) throw DataError("rescore: empty N-best list for '" + nbest.utterance_id + "'");
  std::size_t best = 0;
  double best_score = kNegInf;
  bool any = false;
  for (std::size_t i = 0; i < nbest.hypotheses.size(); ++i) {
    double total = 0.0;
    bool dropped = false;
    for (const auto& [name, w] : weights) {
      if (w == 0.0) continue;
      const double s = hypothesis_score(nbest.hypotheses[i], name);
      if (s == kNegInf || std::isnan(s)) {
        dropped = true;
        break;
      }
      total += w * s;
    }
    if (dropped) continue;
    // Strict comparison keeps the better first-pass rank on ties.
    if (!any || total > best_score) {
      best = i;
      best_score = total;
      any = true;
    }
  }
  return any ? best : 0;
}

Hypothesis rescore(const NBestList& nbest, const RescoreWeights& weights) {
  return nbest.hypotheses[rescore_index(nbest, weights)];
}

RescoreWeights uniform_weights(const std::vector<std::string>& scorer_names) {
  RescoreWeights w;
  const double v = 1.0 / static_cast<double>(scorer_names.size() + 1);
  w[kFirstPass] = v;
  for (const auto& n : scorer_names) w[n] = v;
  return w;
}

Hypothesis combine_systems(NBestList& nbest, const std::vector<NamedScorer>& scorers, const RescoreWeights& weights,
                           std::ostream* log) {
  for (auto& h : nbest.hypotheses) {
    for (const auto& sc : scorers) {
      double v = kNegInf;
      try {
        v = sc.score(h.word);
      } catch (const std::exception& e) {
        if (log != nullptr) {
          *log << "scorer '" << sc.name << "' failed on '" << nbest.utterance_id << "' / '" << h.word
               << "': " << e.what() << '\n';
        }
      }
      h.second_pass_logprobs[sc.name] = v;
    }
  }
  return rescore(nbest, weights);
}

void write_nbest(std::ostream& os, const std::vector<NBestList>& lists) {
  for (const auto& list : lists) {
    for (std::size_t r = 0; r < list.hypotheses.size(); ++r) {
      const auto& h = list.hypotheses[r];
      os << list.utterance_id << '\t' << (r + 1) << '\t' << h.word << '\t' << format_double(h.first_pass_logprob)
         << '\t';
      bool first = true;
      for (const auto& [name, v] : h.second_pass_logprobs) {
        if (!first) os << ';';
        os << name << '=' << format_double(v);
        first = false;
      }
      os << '\n';
    }
  }
}

std::vector<NBestList> read_nbest(std::istream& is) {
  std::vector<NBestList> lists;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    if (line.back() == '\t') fields.emplace_back();
    if (fields.size() != 5) throw DataError("N-best line " + std::to_string(line_no) + ": expected 5 fields");
    if (lists.empty() || lists.back().utterance_id != fields[0]) lists.push_back({fields[0], {}});
    NBestList& list = lists.back();
    const std::size_t rank = static_cast<std::size_t>(std::stoul(fields[1]));
    if (rank != list.hypotheses.size() + 1) {
      throw DataError("N-best line " + std::to_string(line_no) + ": ranks out of order");
    }
    Hypothesis h{fields[2], parse_double(fields[3]), {}};
    std::istringstream scores(fields[4]);
    std::string kv;
    while (std::getline(scores, kv, ';')) {
      if (kv.empty()) continue;
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw DataError("N-best line " + std::to_string(line_no) + ": bad score '" + kv + "'");
      h.second_pass_logprobs[kv.substr(0, eq)] = parse_double(std::string_view(kv).substr(eq + 1));
    }
    list.hypotheses.push_back(std::move(h));
  }
  return lists;
}

}  // namespace seva
