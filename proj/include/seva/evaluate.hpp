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

// Word error rate scoring and the matched-pairs sentence-segment word error
// significance test.

#pragma once

#include "seva/common.hpp"

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace seva {

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t ref_words = 0;

  std::size_t errors() const { return substitutions + deletions + insertions; }
  /// 100 * errors / ref_words (0 when there are no reference words).
  double wer() const;
  EditCounts& operator+=(const EditCounts& o);
};

std::vector<std::string> split_words(const std::string& text);

/// Unit-cost Levenshtein alignment; on ties the backtrace prefers
/// substitution (or match), then deletion, then insertion.
EditCounts align_words(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

struct Reference {
  std::string id;
  std::string text;
  std::string tag;  // subgroup, e.g. "VL"
};

struct UtteranceScore {
  std::string id;
  std::string tag;
  std::string ref;
  std::string hyp;
  bool missing = false;
  EditCounts counts;
};

inline constexpr const char* kAllGroup = "All";

struct ScoredResult {
  std::vector<UtteranceScore> utterances;
  std::map<std::string, EditCounts> groups;  // per tag plus "All"

  double wer(const std::string& group = kAllGroup) const;
  /// Per-utterance error counts in reference order.
  std::vector<double> segment_errors() const;
};

struct ScoreOptions {
  bool missing_is_error = false;  // otherwise a missing hypothesis is all deletions
};

/// Throws DataError on hypotheses for unknown ids, duplicate reference ids,
/// or (when configured) missing hypotheses.
ScoredResult wer(const std::vector<Reference>& refs, const std::map<std::string, std::string>& hyps,
                 const ScoreOptions& options = {});

struct SignificanceResult {
  std::size_t n = 0;
  double mean_diff = 0.0;  // mean of a - b
  double z = 0.0;
  double p_value = 1.0;
  bool significant = false;
  bool undefined = false;  // n < 2, or zero variance with zero mean
};

inline constexpr double kSignificanceLevel = 0.05;

/// Per-segment differences d = a - b, z = mean(d) / sqrt(var(d) / n) with
/// the unbiased variance, two-sided normal p-value. Zero variance with a
/// nonzero mean is reported significant (z = +-inf, p = 0).
SignificanceResult mapsswe(std::span<const double> errors_a, std::span<const double> errors_b,
                           double alpha = kSignificanceLevel);

/// Column order of result tables.
std::vector<std::string> table_groups(const ScoredResult& r);

struct TableRow {
  std::string system;
  const ScoredResult* result = nullptr;
  std::string mark;  // e.g. "*" for a significant difference
};

/// Tab-separated WER table with VL/L/M/H/All columns (two decimals).
void write_wer_table(std::ostream& os, const std::vector<TableRow>& rows);

/// `id,tag,ref,hyp,sub,del,ins,ref_words` per utterance.
void write_utterance_csv(std::ostream& os, const ScoredResult& r);

}  // namespace seva
