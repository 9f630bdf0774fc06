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

#include "seva/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace seva {

namespace {

constexpr double kNeutralF1 = 500.0;
constexpr double kNeutralF2 = 1500.0;
constexpr double kMaxHarmonicHz = 7000.0;
constexpr std::uint64_t kWordListSeed = 20230601;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double resonance(double f, double center, double bandwidth) {
  const double x = (f - center) / bandwidth;
  return 1.0 / (1.0 + x * x);
}

std::string factor_suffix(double factor) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_sp%.2f", factor);
  return buf;
}

}  // namespace

std::string block_name(Block b) { return "B" + std::to_string(static_cast<int>(b)); }

Block parse_block(const std::string& name) {
  if (name == "B1") return Block::kB1;
  if (name == "B2") return Block::kB2;
  if (name == "B3") return Block::kB3;
  throw DataError("unknown block '" + name + "'");
}

const std::vector<PhoneDef>& default_phone_inventory() {
  static const std::vector<PhoneDef> kPhones = {
      {"a", 800, 1300}, {"e", 550, 1900}, {"i", 300, 2400}, {"o", 550, 950},
      {"u", 320, 750},  {"y", 300, 1800}, {"w", 380, 1100}, {"r", 480, 1350},
      {"l", 400, 1600}, {"m", 260, 1200}, {"n", 260, 1700}, {"j", 700, 1750},
  };
  return kPhones;
}

const std::array<SeverityProfile, kNumSeverities>& default_severity_profiles() {
  // Indexed VL, L, M, H.
  static const std::array<SeverityProfile, kNumSeverities> kProfiles = {{
      {1.80, 110.0, 6.0, 0.45, 0.50},
      {1.50, 80.0, 10.0, 0.30, 0.35},
      {1.25, 50.0, 15.0, 0.18, 0.20},
      {1.05, 25.0, 22.0, 0.08, 0.08},
  }};
  return kProfiles;
}

const SynthSpeaker& Corpus::speaker(const std::string& id) const {
  for (const auto& s : speakers) {
    if (s.speaker_id == id) return s;
  }
  throw DataError("unknown speaker '" + id + "'");
}

std::vector<std::size_t> Corpus::indices(bool train) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    if (is_train_block(utterances[i].block) == train) out.push_back(i);
  }
  return out;
}

std::vector<std::string> default_word_list() {
  const auto& phones = default_phone_inventory();
  Rng rng(kWordListSeed);
  std::vector<std::string> words;
  std::set<std::string> seen;
  std::size_t i = 0;
  while (words.size() < 30) {
    const std::size_t len = 2 + (i % 3);
    std::string w;
    std::size_t prev = phones.size();
    for (std::size_t k = 0; k < len; ++k) {
      std::size_t p = static_cast<std::size_t>(rng() % phones.size());
      while (p == prev) p = static_cast<std::size_t>(rng() % phones.size());
      w += phones[p].name;
      prev = p;
    }
    if (seen.insert(w).second) {
      words.push_back(w);
      ++i;
    }
  }
  return words;
}

Lexicon make_lexicon(const std::vector<std::string>& words) {
  const auto& inv = default_phone_inventory();
  std::vector<std::string> names;
  for (const auto& p : inv) names.push_back(p.name);
  std::vector<LexiconEntry> entries;
  for (const auto& w : words) {
    LexiconEntry e{w, {}};
    for (char c : w) {
      const auto it = std::find(names.begin(), names.end(), std::string(1, c));
      if (it == names.end()) throw DataError("word '" + w + "' uses unknown phone '" + std::string(1, c) + "'");
      e.phones.push_back(static_cast<std::size_t>(it - names.begin()));
    }
    entries.push_back(std::move(e));
  }
  return Lexicon(std::move(names), std::move(entries));
}

namespace {

SynthSpeaker make_speaker(const std::string& id, SeverityLevel sev, std::uint64_t seed) {
  Rng rng(seed);
  SynthSpeaker s;
  s.speaker_id = id;
  s.severity = sev;
  s.base_pitch = 90.0 + 150.0 * uniform01(rng);
  s.channel_gain = 0.3 + 0.7 * uniform01(rng);
  for (std::size_t p = 0; p < default_phone_inventory().size(); ++p) {
    s.formant_offsets.push_back({40.0 * gaussian(rng), 100.0 * gaussian(rng)});
  }
  return s;
}

Utterance render(const SynthSpeaker& spk, const SeverityProfile& prof, const LexiconEntry& entry, Block block,
                 double sample_rate, double phone_duration, std::uint64_t seed) {
  Rng rng(seed);
  const auto& inv = default_phone_inventory();
  Utterance u;
  u.speaker_id = spk.speaker_id;
  u.severity = spk.severity;
  u.word = entry.word;
  u.block = block;
  u.id = spk.speaker_id + "_" + block_name(block) + "_" + entry.word;
  u.wave.sample_rate = sample_rate;

  const double f0 = spk.base_pitch * (1.0 + 0.02 * gaussian(rng));
  const auto n_harm = static_cast<std::size_t>(std::max(1.0, std::floor(kMaxHarmonicHz / f0)));

  std::size_t pos = 0;
  std::vector<std::vector<double>> amps;
  for (std::size_t p : entry.phones) {
    const double stretch = prof.tempo_stretch * (0.85 + 0.3 * uniform01(rng));
    const auto len = static_cast<std::size_t>(std::llround(sample_rate * phone_duration * stretch));
    PhoneSegment seg;
    seg.phone = p;
    seg.start = pos;
    seg.end = pos + len;
    double f1 = inv[p].f1 + spk.formant_offsets[p][0];
    double f2 = inv[p].f2 + spk.formant_offsets[p][1];
    f1 += prof.formant_centralization * (kNeutralF1 - f1) + prof.formant_jitter_std * gaussian(rng);
    f2 += prof.formant_centralization * (kNeutralF2 - f2) + prof.formant_jitter_std * gaussian(rng);
    f1 = std::clamp(f1, 200.0, 1000.0);
    f2 = std::clamp(f2, 600.0, 3000.0);
    seg.formants = {f1, f2};
    std::vector<double> a(n_harm);
    for (std::size_t h = 0; h < n_harm; ++h) {
      const double f = f0 * static_cast<double>(h + 1);
      a[h] = (resonance(f, f1, 90.0) + 0.7 * resonance(f, f2, 120.0) + 0.01) / (1.0 + f / 2000.0);
    }
    amps.push_back(std::move(a));
    u.segmentation.push_back(seg);
    pos += len;
  }

  const std::size_t n = pos;
  std::vector<double> x(n, 0.0);
  const double dphi = 2.0 * M_PI * f0 / sample_rate;
  const double tremor_phase = 2.0 * M_PI * uniform01(rng);
  const double tremor_rate = 4.0 + 2.0 * uniform01(rng);
  double phi = 2.0 * M_PI * uniform01(rng);
  std::size_t seg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (i >= u.segmentation[seg].end) ++seg;
    const auto& a = amps[seg];
    const double c = std::cos(phi);
    double s_prev = 0.0;
    double s_cur = std::sin(phi);
    double acc = 0.0;
    for (std::size_t h = 0; h < n_harm; ++h) {
      acc += a[h] * s_cur;
      const double s_next = 2.0 * c * s_cur - s_prev;
      s_prev = s_cur;
      s_cur = s_next;
    }
    const double t = static_cast<double>(i) / sample_rate;
    const double env = 1.0 - prof.amplitude_tremor_depth * (0.5 + 0.5 * std::sin(2.0 * M_PI * tremor_rate * t + tremor_phase));
    x[i] = acc * env;
    phi = std::fmod(phi + dphi, 2.0 * M_PI);
  }

  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  const double scale = peak > 0.0 ? 0.5 * spk.channel_gain / peak : 0.0;
  double power = 0.0;
  for (double& v : x) {
    v *= scale;
    power += v * v;
  }
  power /= static_cast<double>(std::max<std::size_t>(n, 1));
  const double sigma = std::sqrt(power / std::pow(10.0, prof.noise_snr_db / 10.0));
  for (double& v : x) v = std::clamp(v + sigma * gaussian(rng), -1.0, 1.0);
  u.wave.samples = std::move(x);
  return u;
}

}  // namespace

Corpus generate_corpus(const CorpusOptions& options) {
  if (options.speakers_per_severity == 0) throw DataError("generate_corpus: need at least one speaker per severity");
  const std::vector<std::string> words = options.words.empty() ? default_word_list() : options.words;
  if (words.empty()) throw DataError("generate_corpus: empty word list");
  Corpus corpus;
  corpus.lexicon = make_lexicon(words);

  std::uint64_t spk_index = options.speaker_seed_offset;
  for (SeverityLevel sev : kAllSeverities) {
    for (std::size_t k = 0; k < options.speakers_per_severity; ++k) {
      char num[8];
      std::snprintf(num, sizeof(num), "%02zu", k + 1);
      const std::string id = options.speaker_prefix + std::string(severity_name(sev)) + num;
      corpus.speakers.push_back(make_speaker(id, sev, derive_seed(options.seed, 1'000'000 + spk_index)));
      ++spk_index;
    }
  }

  std::uint64_t utt_index = options.speaker_seed_offset * 1'000'000;
  for (const auto& spk : corpus.speakers) {
    const SeverityProfile& prof = options.profiles[to_index(spk.severity)];
    for (Block block : {Block::kB1, Block::kB2, Block::kB3}) {
      for (const auto& entry : corpus.lexicon.entries()) {
        corpus.utterances.push_back(render(spk, prof, entry, block, options.sample_rate, options.phone_duration,
                                           derive_seed(options.seed, utt_index++)));
      }
    }
  }
  return corpus;
}

FrameTargets make_targets(const Utterance& utt, std::size_t num_frames, double frame_length, double frame_shift) {
  if (utt.segmentation.empty()) throw DataError("make_targets: utterance '" + utt.id + "' has no segmentation");
  if (utt.segmentation.back().end != utt.wave.size()) {
    throw DataError("make_targets: segmentation of '" + utt.id + "' does not tile the waveform");
  }
  const double sr = utt.wave.sample_rate;
  const double len = static_cast<double>(frame_samples(frame_length, sr));
  const double shift = static_cast<double>(frame_samples(frame_shift, sr));
  FrameTargets out;
  out.severity = utt.severity;
  out.tri_state.resize(num_frames);
  out.monophone.resize(num_frames);
  std::size_t seg = 0;
  for (std::size_t t = 0; t < num_frames; ++t) {
    const double center = static_cast<double>(t) * shift + len / 2.0;
    while (seg + 1 < utt.segmentation.size() && center >= static_cast<double>(utt.segmentation[seg].end)) ++seg;
    const PhoneSegment& s = utt.segmentation[seg];
    const double rel = (center - static_cast<double>(s.start)) / static_cast<double>(s.end - s.start);
    const int state = std::clamp(static_cast<int>(std::floor(rel * kStatesPerPhone)), 0,
                                 static_cast<int>(kStatesPerPhone) - 1);
    out.tri_state[t] = static_cast<int>(kStatesPerPhone * s.phone) + state;
    out.monophone[t] = out.tri_state[t] / static_cast<int>(kStatesPerPhone);
  }
  return out;
}

Corpus augment(const Corpus& corpus, const std::vector<double>& factors) {
  Corpus out;
  out.speakers = corpus.speakers;
  out.lexicon = corpus.lexicon;
  out.utterances.reserve(corpus.utterances.size() * factors.size());
  for (const auto& u : corpus.utterances) {
    for (double f : factors) {
      Utterance v = u;
      v.id = u.id + factor_suffix(f);
      v.wave = speed_perturb(u.wave, f);
      const std::size_t n = v.wave.size();
      std::size_t prev_end = 0;
      for (std::size_t k = 0; k < v.segmentation.size(); ++k) {
        auto& s = v.segmentation[k];
        s.start = prev_end;
        s.end = k + 1 == v.segmentation.size()
                    ? n
                    : std::min(n, static_cast<std::size_t>(std::llround(static_cast<double>(u.segmentation[k].end) / f)));
        s.end = std::max(s.end, s.start + 1);
        prev_end = s.end;
      }
      out.utterances.push_back(std::move(v));
    }
  }
  return out;
}

void write_lexicon(const std::filesystem::path& path, const Lexicon& lexicon) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  for (const auto& e : lexicon.entries()) {
    os << e.word << '\t';
    for (std::size_t k = 0; k < e.phones.size(); ++k) os << (k ? " " : "") << lexicon.phone_name(e.phones[k]);
    os << '\n';
  }
}

Lexicon read_lexicon(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open lexicon: " + path.string());
  std::vector<std::string> names;
  for (const auto& p : default_phone_inventory()) names.push_back(p.name);
  std::vector<LexiconEntry> entries;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cols = split(line, '\t');
    if (cols.size() != 2) throw DataError("malformed lexicon line: " + line);
    LexiconEntry e{cols[0], {}};
    std::istringstream ps(cols[1]);
    std::string ph;
    while (ps >> ph) {
      auto it = std::find(names.begin(), names.end(), ph);
      if (it == names.end()) {
        names.push_back(ph);
        it = names.end() - 1;
      }
      e.phones.push_back(static_cast<std::size_t>(it - names.begin()));
    }
    entries.push_back(std::move(e));
  }
  return Lexicon(std::move(names), std::move(entries));
}

std::filesystem::path write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "wav");
  write_lexicon(dir / "lexicon.txt", corpus.lexicon);
  {
    std::ofstream os(dir / "speakers.tsv");
    for (const auto& s : corpus.speakers) {
      os << s.speaker_id << '\t' << severity_name(s.severity) << '\t' << s.base_pitch << '\t' << s.channel_gain << '\n';
    }
  }
  const auto manifest = dir / "manifest.tsv";
  std::ofstream os(manifest);
  if (!os) throw DataError("cannot open for writing: " + manifest.string());
  for (const auto& u : corpus.utterances) {
    const std::string rel = "wav/" + u.id + ".wav";
    write_wav(dir / rel, u.wave);
    os << u.id << '\t' << u.speaker_id << '\t' << severity_name(u.severity) << '\t' << u.word << '\t'
       << block_name(u.block) << '\t' << rel << '\t';
    for (std::size_t k = 0; k < u.segmentation.size(); ++k) {
      const auto& s = u.segmentation[k];
      os << (k ? "," : "") << corpus.lexicon.phone_name(s.phone) << ':' << s.start << ':' << s.end;
    }
    os << '\n';
  }
  return manifest;
}

Corpus read_corpus(const std::filesystem::path& dir) {
  Corpus corpus;
  corpus.lexicon = read_lexicon(dir / "lexicon.txt");
  {
    std::ifstream is(dir / "speakers.tsv");
    if (!is) throw DataError("cannot open " + (dir / "speakers.tsv").string());
    std::string line;
    while (std::getline(is, line)) {
      const auto cols = split(line, '\t');
      if (cols.size() != 4) throw DataError("malformed speakers line: " + line);
      SynthSpeaker s;
      s.speaker_id = cols[0];
      s.severity = parse_severity(cols[1]);
      s.base_pitch = std::stod(cols[2]);
      s.channel_gain = std::stod(cols[3]);
      corpus.speakers.push_back(std::move(s));
    }
  }
  std::ifstream is(dir / "manifest.tsv");
  if (!is) throw DataError("cannot open " + (dir / "manifest.tsv").string());
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cols = split(line, '\t');
    if (cols.size() != 7) throw DataError("malformed manifest line: " + line);
    Utterance u;
    u.id = cols[0];
    u.speaker_id = cols[1];
    u.severity = parse_severity(cols[2]);
    u.word = cols[3];
    u.block = parse_block(cols[4]);
    u.wave = read_wav(dir / cols[5]);
    for (const auto& item : split(cols[6], ',')) {
      const auto parts = split(item, ':');
      if (parts.size() != 3) throw DataError("malformed segmentation entry: " + item);
      PhoneSegment s;
      s.phone = corpus.lexicon.phone_index(parts[0]);
      s.start = std::stoull(parts[1]);
      s.end = std::stoull(parts[2]);
      u.segmentation.push_back(s);
    }
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

}  // namespace seva
