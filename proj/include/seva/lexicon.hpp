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

#pragma once

#include "seva/common.hpp"

#include <string>
#include <vector>

namespace seva {

inline constexpr std::size_t kStatesPerPhone = 3;

struct LexiconEntry {
  std::string word;
  std::vector<std::size_t> phones;
};

/// Isolated-word lexicon over a phone inventory with three left-to-right
/// states per phone. Tri-state index of (phone p, state s) is 3p + s.
class Lexicon {
 public:
  Lexicon() = default;
  /// Throws DataError on an empty lexicon, duplicate words or phones outside
  /// the inventory.
  Lexicon(std::vector<std::string> phone_names, std::vector<LexiconEntry> entries);

  std::size_t num_phones() const { return phone_names_.size(); }
  std::size_t num_tristates() const { return kStatesPerPhone * phone_names_.size(); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const std::vector<LexiconEntry>& entries() const { return entries_; }
  const LexiconEntry& entry(std::size_t i) const { return entries_.at(i); }
  const std::string& phone_name(std::size_t p) const { return phone_names_.at(p); }
  const std::vector<std::string>& phone_names() const { return phone_names_; }

  /// Index of `word`; throws DataError if absent.
  std::size_t index_of(const std::string& word) const;
  bool contains(const std::string& word) const;
  std::size_t phone_index(const std::string& name) const;

  std::vector<std::size_t> tristate_sequence(std::size_t entry_index) const;

 private:
  std::vector<std::string> phone_names_;
  std::vector<LexiconEntry> entries_;
};

}  // namespace seva
