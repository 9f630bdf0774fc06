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

#include "seva/lexicon.hpp"

#include <set>

namespace seva {

Lexicon::Lexicon(std::vector<std::string> phone_names, std::vector<LexiconEntry> entries)
    : phone_names_(std::move(phone_names)), entries_(std::move(entries)) {
  if (entries_.empty()) throw DataError("lexicon is empty");
  if (phone_names_.empty()) throw DataError("lexicon has an empty phone inventory");
  std::set<std::string> seen;
  for (const auto& e : entries_) {
    if (!seen.insert(e.word).second) throw DataError("duplicate lexicon word '" + e.word + "'");
    if (e.phones.empty()) throw DataError("lexicon word '" + e.word + "' has no phones");
    for (std::size_t p : e.phones) {
      if (p >= phone_names_.size()) throw DataError("lexicon word '" + e.word + "' uses a phone outside the inventory");
    }
  }
}

std::size_t Lexicon::index_of(const std::string& word) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].word == word) return i;
  }
  throw DataError("word '" + word + "' not in lexicon");
}

bool Lexicon::contains(const std::string& word) const {
  for (const auto& e : entries_) {
    if (e.word == word) return true;
  }
  return false;
}

std::size_t Lexicon::phone_index(const std::string& name) const {
  for (std::size_t p = 0; p < phone_names_.size(); ++p) {
    if (phone_names_[p] == name) return p;
  }
  throw DataError("unknown phone '" + name + "'");
}

std::vector<std::size_t> Lexicon::tristate_sequence(std::size_t entry_index) const {
  std::vector<std::size_t> states;
  for (std::size_t p : entry(entry_index).phones) {
    for (std::size_t s = 0; s < kStatesPerPhone; ++s) states.push_back(kStatesPerPhone * p + s);
  }
  return states;
}

}  // namespace seva
