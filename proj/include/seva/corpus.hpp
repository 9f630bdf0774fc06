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

// Synthetic severity-stratified isolated-word corpus. Words are rendered as
// concatenated voiced phone units (harmonic stacks shaped by two formants)
// and then distorted according to the speaker's severity profile. Every
// utterance carries its exact phone segmentation.

#pragma once

#include "seva/features.hpp"
#include "seva/lexicon.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace seva {

enum class Block : std::uint8_t { kB1 = 1, kB2 = 2, kB3 = 3 };

std::string block_name(Block b);
Block parse_block(const std::string& name);
inline bool is_train_block(Block b) { return b != Block::kB2; }

struct PhoneDef {
  std::string name;
  double f1 = 0.0;
  double f2 = 0.0;
};

/// The 12-phone synthetic inventory.
const std::vector<PhoneDef>& default_phone_inventory();

/// Distortion axes of one severity level. VeryLow is the most impaired on
/// every axis.
struct SeverityProfile {
  double tempo_stretch = 1.0;        // >= 1, phone duration multiplier
  double formant_jitter_std = 0.0;   // Hz, per phone instance
  double noise_snr_db = 30.0;        // additive white noise
  double amplitude_tremor_depth = 0;  // [0, 1]
  double formant_centralization = 0;  // [0, 1), pull toward the neutral vowel
};

/// Default profiles indexed by SeverityLevel.
const std::array<SeverityProfile, kNumSeverities>& default_severity_profiles();

struct SynthSpeaker {
  std::string speaker_id;
  SeverityLevel severity = SeverityLevel::kHigh;
  double base_pitch = 120.0;  // Hz, in [80, 300]
  std::vector<std::array<double, 2>> formant_offsets;  // per phone (F1, F2) shift in Hz
  double channel_gain = 1.0;
};

struct PhoneSegment {
  std::size_t phone = 0;
  std::size_t start = 0;  // sample index, inclusive
  std::size_t end = 0;    // exclusive
  std::array<double, 2> formants{};  // realized (F1, F2), informational
};

struct Utterance {
  std::string id;
  std::string speaker_id;
  SeverityLevel severity = SeverityLevel::kHigh;
  std::string word;
  Block block = Block::kB1;
  Waveform wave;
  std::vector<PhoneSegment> segmentation;
};

struct Corpus {
  std::vector<SynthSpeaker> speakers;
  std::vector<Utterance> utterances;
  Lexicon lexicon;

  const SynthSpeaker& speaker(const std::string& id) const;
  std::vector<std::size_t> indices(bool train) const;
};

struct CorpusOptions {
  std::size_t speakers_per_severity = 4;
  std::vector<std::string> words;  // empty: default_word_list()
  std::uint64_t seed = 1;
  double sample_rate = 16000.0;
  double phone_duration = 0.07;  // seconds before tempo stretch
  std::array<SeverityProfile, kNumSeverities> profiles = default_severity_profiles();
  std::string speaker_prefix;    // prepended to speaker ids (held-out sets)
  std::uint64_t speaker_seed_offset = 0;
};

/// 30 distinct words of 2-4 phones over the default inventory.
std::vector<std::string> default_word_list();

/// Lexicon for `words`, spelled with the default inventory's phone names.
Lexicon make_lexicon(const std::vector<std::string>& words);

Corpus generate_corpus(const CorpusOptions& options);

struct FrameTargets {
  std::vector<int> tri_state;
  std::vector<int> monophone;
  SeverityLevel severity = SeverityLevel::kHigh;

  std::size_t size() const { return tri_state.size(); }
};

/// Tri-state per frame from the thirds of the phone segment containing the
/// frame centre; monophone = tri-state / 3. `num_frames` is the feature T.
FrameTargets make_targets(const Utterance& utt, std::size_t num_frames, double frame_length = 0.025,
                          double frame_shift = 0.010);

/// Speed-perturbed copies; ids get a "_sp<factor>" suffix.
Corpus augment(const Corpus& corpus, const std::vector<double>& factors = {0.9, 1.0, 1.1});

/// Writes `dir`/wav/*.wav, manifest.tsv, lexicon.txt and speakers.tsv;
/// returns the manifest path.
std::filesystem::path write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
/// Reads a directory written by write_corpus.
Corpus read_corpus(const std::filesystem::path& dir);

void write_lexicon(const std::filesystem::path& path, const Lexicon& lexicon);
Lexicon read_lexicon(const std::filesystem::path& path);

}  // namespace seva
