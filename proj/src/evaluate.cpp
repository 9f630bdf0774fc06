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

#include "seva/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

namespace seva {

double EditCounts::wer() const {
  return ref_words == 0 ? 0.0 : 100.0 * static_cast<double>(errors()) / static_cast<double>(ref_words);
}

EditCounts& EditCounts::operator+=(const EditCounts& o) {
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  ref_words += o.ref_words;
  return *this;
}

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> out;
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

EditCounts align_words(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  std::vector<std::vector<std::size_t>> d(n + 1, std::vector<std::size_t>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      d[i][j] = std::min({sub, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  }
  EditCounts c;
  c.ref_words = n;
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++c.substitutions;
      --i;
      --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++c.deletions;
      --i;
    } else {
      ++c.insertions;
      --j;
    }
  }
  return c;
}

double ScoredResult::wer(const std::string& group) const {
  auto it = groups.find(group);
  if (it == groups.end()) throw DataError("no utterances in group '" + group + "'");
  return it->second.wer();
}

std::vector<double> ScoredResult::segment_errors() const {
  std::vector<double> out;
  out.reserve(utterances.size());
  for (const auto& u : utterances) out.push_back(static_cast<double>(u.counts.errors()));
  return out;
}

ScoredResult wer(const std::vector<Reference>& refs, const std::map<std::string, std::string>& hyps,
                 const ScoreOptions& options) {
  std::set<std::string> ids;
  for (const auto& r : refs) {
    if (!ids.insert(r.id).second) throw DataError("duplicate reference id '" + r.id + "'");
  }
  for (const auto& [id, text] : hyps) {
    if (!ids.count(id)) throw DataError("hypothesis for unknown utterance '" + id + "'");
  }
  ScoredResult result;
  result.groups[kAllGroup] = {};
  for (const auto& r : refs) {
    UtteranceScore u{r.id, r.tag, r.text, {}, false, {}};
    auto it = hyps.find(r.id);
    if (it == hyps.end()) {
      if (options.missing_is_error) throw DataError("missing hypothesis for '" + r.id + "'");
      u.missing = true;
    } else {
      u.hyp = it->second;
    }
    u.counts = align_words(split_words(u.ref), split_words(u.hyp));
    if (!r.tag.empty()) result.groups[r.tag] += u.counts;
    result.groups[kAllGroup] += u.counts;
    result.utterances.push_back(std::move(u));
  }
  return result;
}

SignificanceResult mapsswe(std::span<const double> errors_a, std::span<const double> errors_b, double alpha) {
  if (errors_a.size() != errors_b.size()) throw DimensionError("mapsswe: segment counts differ");
  SignificanceResult r;
  r.n = errors_a.size();
  if (r.n < 2) {
    r.undefined = true;
    return r;
  }
  const double n = static_cast<double>(r.n);
  double mean = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) mean += errors_a[i] - errors_b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) {
    const double e = errors_a[i] - errors_b[i] - mean;
    ss += e * e;
  }
  const double var = ss / (n - 1.0);
  r.mean_diff = mean;
  if (var == 0.0) {
    if (mean == 0.0) {
      r.undefined = true;
      return r;
    }
    r.z = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p_value = 0.0;
    r.significant = true;
    return r;
  }
  r.z = mean / std::sqrt(var / n);
  r.p_value = std::erfc(std::abs(r.z) / std::sqrt(2.0));
  r.significant = r.p_value < alpha;
  return r;
}

std::vector<std::string> table_groups(const ScoredResult& r) {
  std::vector<std::string> cols;
  for (SeverityLevel s : kAllSeverities) {
    const std::string name(severity_name(s));
    if (r.groups.count(name)) cols.push_back(name);
  }
  for (const auto& [name, counts] : r.groups) {
    if (name != kAllGroup && std::find(cols.begin(), cols.end(), name) == cols.end()) cols.push_back(name);
  }
  cols.emplace_back(kAllGroup);
  return cols;
}

void write_wer_table(std::ostream& os, const std::vector<TableRow>& rows) {
  if (rows.empty()) return;
  const std::vector<std::string> cols = table_groups(*rows.front().result);
  os << "System";
  for (const auto& c : cols) os << '\t' << c;
  os << '\n';
  std::ostringstream line;
  line << std::fixed << std::setprecision(2);
  for (const auto& row : rows) {
    line.str({});
    line << row.system;
    for (const auto& c : cols) {
      auto it = row.result->groups.find(c);
      line << '\t';
      if (it == row.result->groups.end()) {
        line << '-';
      } else {
        line << it->second.wer();
      }
    }
    line << row.mark;
    os << line.str() << '\n';
  }
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_utterance_csv(std::ostream& os, const ScoredResult& r) {
  os << "id,tag,ref,hyp,sub,del,ins,ref_words\n";
  for (const auto& u : r.utterances) {
    os << csv_field(u.id) << ',' << csv_field(u.tag) << ',' << csv_field(u.ref) << ',' << csv_field(u.hyp) << ','
       << u.counts.substitutions << ',' << u.counts.deletions << ',' << u.counts.insertions << ','
       << u.counts.ref_words << '\n';
  }
}

}  // namespace seva
