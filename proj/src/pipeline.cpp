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

#include "seva/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace seva {

using nlohmann::json;

// ---------------------------------------------------------------- logging

namespace {

std::atomic<int> g_log_level{static_cast<int>(LogLevel::kWarn)};
std::mutex g_log_mutex;

}  // namespace

LogLevel log_level_from_env() {
  const char* v = std::getenv("SEVA_LOG");
  if (v == nullptr) return LogLevel::kWarn;
  const std::string s(v);
  if (s == "error") return LogLevel::kError;
  if (s == "warn" || s.empty()) return LogLevel::kWarn;
  if (s == "info") return LogLevel::kInfo;
  if (s == "debug") return LogLevel::kDebug;
  throw DataError("SEVA_LOG must be one of error, warn, info, debug (got '" + s + "')");
}

void set_log_level(LogLevel level) { g_log_level = static_cast<int>(level); }
LogLevel log_level() { return static_cast<LogLevel>(g_log_level.load()); }

void log_message(LogLevel level, const std::string& msg) {
  if (static_cast<int>(level) > g_log_level.load()) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard<std::mutex> lock(g_log_mutex);
  std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

// ----------------------------------------------------------------- config

namespace {

// Reads keys out of one JSON object and rejects whatever is left over.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw DataError("config: section '" + name_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw DataError("config: bad value for " + name_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw DataError("config: unknown key '" + name_ + "." + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_train(const json* j, const std::string& name, TrainConfig& t) {
  if (j == nullptr) return;
  Section s(*j, name);
  s.get("learning_rate", t.learning_rate);
  s.get("epochs", t.epochs);
  s.get("batch_size", t.batch_size);
  s.get("seed", t.seed);
  s.get("loss_weights", t.loss_weights);
  s.finish();
}

json train_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"seed", t.seed},
          {"loss_weights", t.loss_weights}};
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "config");
  if (const json* s = root.child("corpus")) {
    Section sec(*s, "corpus");
    sec.get("seed", c.corpus.seed);
    sec.get("speakers_per_severity", c.corpus.speakers_per_severity);
    sec.get("num_words", c.corpus.num_words);
    sec.get("phone_duration", c.corpus.phone_duration);
    sec.get("augment", c.corpus.augment);
    sec.get("heldout_speakers_per_severity", c.corpus.heldout_speakers_per_severity);
    sec.finish();
  }
  if (const json* s = root.child("features")) {
    Section sec(*s, "features");
    sec.get("frame_length", c.features.frame_length);
    sec.get("frame_shift", c.features.frame_shift);
    sec.get("n_mels", c.features.n_mels);
    sec.get("num_bases", c.features.num_bases);
    sec.get("mean_normalize", c.features.mean_normalize);
    sec.finish();
  }
  if (const json* s = root.child("embedder")) {
    Section sec(*s, "embedder");
    read_train(sec.child("train"), "embedder.train", c.embedder.train);
    sec.get("hidden", c.embedder.hidden);
    sec.finish();
  }
  if (const json* s = root.child("am")) {
    Section sec(*s, "am");
    if (const json* o = sec.child("options")) {
      Section opt(*o, "am.options");
      opt.get("use_aux", c.am.options.use_aux);
      opt.get("use_seve_head", c.am.options.use_seve_head);
      opt.get("use_lhuc_seve", c.am.options.use_lhuc_seve);
      opt.get("lhuc_sat", c.am.lhuc_sat);
      opt.finish();
    }
    read_train(sec.child("train"), "am.train", c.am.train);
    sec.get("hidden_layers", c.am.arch.hidden_layers);
    sec.get("hidden_width", c.am.arch.hidden_width);
    sec.get("assessed_severity", c.am.assessed_severity);
    sec.finish();
  }
  if (const json* s = root.child("adaptation")) {
    Section sec(*s, "adaptation");
    sec.get("enabled", c.adaptation.enabled);
    sec.get("lambda", c.adaptation.cfg.lambda);
    sec.get("epochs", c.adaptation.cfg.adapt_epochs);
    sec.get("learning_rate", c.adaptation.cfg.adapt_lr);
    sec.get("pseudo_label_pass", c.adaptation.cfg.pseudo_label_pass);
    sec.get("assessed_severity", c.adaptation.assessed_severity);
    sec.finish();
  }
  if (const json* s = root.child("seq")) {
    Section sec(*s, "seq");
    sec.get("use_severity", c.seq.use_severity);
    read_train(sec.child("train"), "seq.train", c.seq.train);
    sec.get("hidden", c.seq.arch.hidden);
    sec.get("context", c.seq.arch.context);
    sec.finish();
  }
  if (const json* s = root.child("decode")) {
    Section sec(*s, "decode");
    sec.get("nbest", c.decode.nbest);
    sec.get("weights", c.decode.weights);
    sec.get("rescore", c.decode.rescore);
    sec.finish();
  }
  if (const json* s = root.child("eval")) {
    Section sec(*s, "eval");
    sec.get("seeds", c.eval.seeds);
    sec.get("missing_is_error", c.eval.missing_is_error);
    sec.finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw DataError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json j;
  j["corpus"] = {{"seed", corpus.seed},
                 {"speakers_per_severity", corpus.speakers_per_severity},
                 {"num_words", corpus.num_words},
                 {"phone_duration", corpus.phone_duration},
                 {"augment", corpus.augment},
                 {"heldout_speakers_per_severity", corpus.heldout_speakers_per_severity}};
  j["features"] = {{"frame_length", features.frame_length},
                   {"frame_shift", features.frame_shift},
                   {"n_mels", features.n_mels},
                   {"num_bases", features.num_bases},
                   {"mean_normalize", features.mean_normalize}};
  j["embedder"] = {{"train", train_json(embedder.train)}, {"hidden", embedder.hidden}};
  j["am"] = {{"options",
              {{"use_aux", am.options.use_aux},
               {"use_seve_head", am.options.use_seve_head},
               {"use_lhuc_seve", am.options.use_lhuc_seve},
               {"lhuc_sat", am.lhuc_sat}}},
             {"train", train_json(am.train)},
             {"hidden_layers", am.arch.hidden_layers},
             {"hidden_width", am.arch.hidden_width},
             {"assessed_severity", am.assessed_severity}};
  j["adaptation"] = {{"enabled", adaptation.enabled},
                     {"lambda", adaptation.cfg.lambda},
                     {"epochs", adaptation.cfg.adapt_epochs},
                     {"learning_rate", adaptation.cfg.adapt_lr},
                     {"pseudo_label_pass", adaptation.cfg.pseudo_label_pass},
                     {"assessed_severity", adaptation.assessed_severity}};
  j["seq"] = {{"use_severity", seq.use_severity},
              {"train", train_json(seq.train)},
              {"hidden", seq.arch.hidden},
              {"context", seq.arch.context}};
  j["decode"] = {{"nbest", decode.nbest}, {"weights", decode.weights}, {"rescore", decode.rescore}};
  j["eval"] = {{"seeds", eval.seeds}, {"missing_is_error", eval.missing_is_error}};
  return j;
}

void ExperimentConfig::set_seed(std::uint64_t seed) {
  corpus.seed = seed;
  embedder.train.seed = seed;
  am.train.seed = seed;
  seq.train.seed = seed;
  eval.seeds = {seed};
}

void ExperimentConfig::validate() const {
  if (corpus.speakers_per_severity == 0) throw DataError("config: corpus.speakers_per_severity must be positive");
  if (corpus.num_words == 0 || corpus.num_words > default_word_list().size()) {
    throw DataError("config: corpus.num_words must be in [1, " + std::to_string(default_word_list().size()) + "]");
  }
  if (!(corpus.phone_duration > 0.0)) throw DataError("config: corpus.phone_duration must be positive");
  if (features.n_mels * 2 != kBaseFeatureDim) {
    throw DataError("config: features.n_mels must be " + std::to_string(kBaseFeatureDim / 2));
  }
  if (features.num_bases == 0) throw DataError("config: features.num_bases must be positive");
  embedder.train.validate();
  am.train.validate();
  seq.train.validate();
  adaptation.cfg.validate();
  if (am.arch.hidden_layers < 2 || am.arch.hidden_width == 0) throw DataError("config: bad am architecture");
  if (seq.arch.hidden.empty()) throw DataError("config: seq.hidden must not be empty");
  if (decode.nbest == 0) throw DataError("config: decode.nbest must be positive");
  for (const auto& [name, w] : decode.weights) {
    if (name != kFirstPass && name != "ctc") throw DataError("config: unknown decode weight '" + name + "'");
    if (!(w >= 0.0)) throw DataError("config: decode weights must be nonnegative");
  }
  if (eval.seeds.empty()) throw DataError("config: eval.seeds must not be empty");
}

// --------------------------------------------------------------- parallel

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
          return;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

// ----------------------------------------------------------------- stages

std::vector<UtteranceFeatures> extract_features(const Corpus& corpus, const FrontendConfig& cfg, std::size_t workers) {
  std::vector<UtteranceFeatures> out(corpus.utterances.size());
  parallel_for(out.size(), workers, [&](std::size_t i) {
    const Utterance& u = corpus.utterances[i];
    const Spectrogram spec = stft(u.wave, cfg.frame_length, cfg.frame_shift);
    UtteranceFeatures f;
    f.id = u.id;
    f.fbank = fbank_delta(spec, cfg.n_mels);
    if (cfg.mean_normalize) mean_normalize(f.fbank);
    f.bases = svd_spectral_bases(spec, cfg.num_bases).flattened();
    out[i] = std::move(f);
  });
  return out;
}

namespace {

CorpusOptions corpus_options(const CorpusSection& cfg) {
  CorpusOptions o;
  o.speakers_per_severity = cfg.speakers_per_severity;
  const auto words = default_word_list();
  o.words.assign(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(std::min(cfg.num_words, words.size())));
  o.seed = cfg.seed;
  o.phone_duration = cfg.phone_duration;
  return o;
}

}  // namespace

Corpus make_corpus(const CorpusSection& cfg) {
  Corpus corpus = generate_corpus(corpus_options(cfg));
  if (cfg.augment) {
    Corpus train;
    train.speakers = corpus.speakers;
    train.lexicon = corpus.lexicon;
    for (std::size_t i : corpus.indices(true)) train.utterances.push_back(corpus.utterances[i]);
    Corpus extra = augment(train, {0.9, 1.1});
    for (auto& u : extra.utterances) corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

Corpus make_heldout_corpus(const CorpusSection& cfg) {
  CorpusOptions o = corpus_options(cfg);
  o.speakers_per_severity = cfg.heldout_speakers_per_severity;
  o.speaker_prefix = "X";
  o.speaker_seed_offset = 1000;
  if (o.speakers_per_severity == 0) throw DataError("held-out corpus needs at least one speaker per severity");
  return generate_corpus(o);
}

EmbedderNet train_embedder_stage(const Corpus& corpus, const std::vector<UtteranceFeatures>& feats,
                                 const EmbedderSection& cfg) {
  std::vector<std::string> speakers;
  std::map<std::string, std::size_t> index;
  for (const auto& s : corpus.speakers) {
    index[s.speaker_id] = speakers.size();
    speakers.push_back(s.speaker_id);
  }
  std::vector<EmbedderSample> samples;
  for (std::size_t i : corpus.indices(true)) {
    const Utterance& u = corpus.utterances[i];
    samples.push_back({u.id, feats[i].bases, index.at(u.speaker_id), u.severity});
  }
  EmbedderOptions opts;
  opts.hidden = cfg.hidden;
  return train_embedder(samples, speakers, cfg.train, opts);
}

std::vector<Vector> aux_vectors(const EmbedderNet& net, const std::vector<UtteranceFeatures>& feats,
                                std::size_t workers) {
  std::vector<Vector> out(feats.size());
  parallel_for(feats.size(), workers, [&](std::size_t i) { out[i] = extract_aux(net, feats[i].bases); });
  return out;
}

std::map<std::string, SeverityAssessment> assess_speakers(const EmbedderNet& net, const Corpus& corpus,
                                                          const std::vector<UtteranceFeatures>& feats,
                                                          const std::vector<std::size_t>& indices) {
  std::map<std::string, std::vector<Vector>> per_speaker;
  for (std::size_t i : indices) per_speaker[corpus.utterances[i].speaker_id].push_back(feats[i].bases);
  std::map<std::string, SeverityAssessment> out;
  for (const auto& [spk, bases] : per_speaker) out[spk] = assess_severity(net, bases);
  return out;
}

std::vector<AmUtterance> am_data(const Corpus& corpus, const std::vector<UtteranceFeatures>& feats,
                                 const std::vector<Vector>* aux, const std::vector<std::size_t>& indices,
                                 const FrontendConfig& frontend) {
  std::vector<AmUtterance> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const Utterance& u = corpus.utterances[i];
    AmUtterance a;
    a.id = u.id;
    a.speaker = u.speaker_id;
    a.severity = u.severity;
    a.feats = feats[i].fbank;
    if (aux != nullptr) a.aux = (*aux)[i];
    a.targets = make_targets(u, a.feats.num_frames(), frontend.frame_length, frontend.frame_shift);
    out.push_back(std::move(a));
  }
  return out;
}

TrainedAm train_am_stage(const std::vector<AmUtterance>& data, const AmSection& cfg) {
  if (cfg.lhuc_sat) {
    SatResult r = sat_train(data, cfg.train, cfg.options, cfg.arch);
    return {std::move(r.model), std::move(r.lhuc)};
  }
  AmTrainResult r = train_am(data, cfg.train, cfg.options, cfg.arch);
  return {std::move(r.model), std::move(r.lhuc)};
}

namespace {

LhucKey key_for(const TrainedAm& am, const std::string& speaker, const DecodePolicy& policy) {
  LhucKey key;
  if (policy.use_speaker && am.lhuc.r_spkr.count(speaker)) key.speaker = speaker;
  auto it = policy.severity.find(speaker);
  if (it != policy.severity.end()) key.severity = it->second;
  return key;
}

}  // namespace

std::vector<NBestList> decode_stage(const TrainedAm& am, const Corpus& corpus,
                                    const std::vector<UtteranceFeatures>& feats, const std::vector<Vector>* aux,
                                    const std::vector<std::size_t>& indices, const DecodePolicy& policy,
                                    std::size_t nbest, std::size_t workers) {
  std::vector<NBestList> out(indices.size());
  parallel_for(indices.size(), workers, [&](std::size_t k) {
    const std::size_t i = indices[k];
    const Utterance& u = corpus.utterances[i];
    const Vector* a = aux != nullptr ? &(*aux)[i] : nullptr;
    const AmPosteriors post = forward_am(am.model, feats[i].fbank, a, &am.lhuc, key_for(am, u.speaker_id, policy));
    out[k] = decode_nbest(post.tri, corpus.lexicon, am.model.tri_priors, nbest, u.id);
  });
  return out;
}

TrainedAm adapt_stage(const TrainedAm& am, const Corpus& corpus, const std::vector<UtteranceFeatures>& feats,
                      const std::vector<Vector>* aux, const std::vector<std::size_t>& indices,
                      const std::map<std::string, SeverityLevel>& severity, const AdaptConfig& cfg,
                      std::size_t workers, std::ostream* log) {
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i : indices) by_speaker[corpus.utterances[i].speaker_id].push_back(i);
  const std::vector<std::string> speakers = [&] {
    std::vector<std::string> v;
    for (const auto& [s, _] : by_speaker) v.push_back(s);
    return v;
  }();
  std::vector<Vector> vectors(speakers.size());
  std::vector<std::string> logs(speakers.size());
  const Lexicon& lexicon = corpus.lexicon;
  const Vector& priors = am.model.tri_priors;
  const PseudoLabeler labeler = [&](const Matrix& post) { return best_word_alignment(post, lexicon, priors); };
  parallel_for(speakers.size(), workers, [&](std::size_t k) {
    const std::string& spk = speakers[k];
    auto sev = severity.find(spk);
    if (sev == severity.end()) throw DataError("adapt: no severity for speaker '" + spk + "'");
    std::vector<AmUtterance> utts;
    for (std::size_t i : by_speaker.at(spk)) {
      AmUtterance a;
      a.id = corpus.utterances[i].id;
      a.speaker = spk;
      a.feats = feats[i].fbank;
      if (aux != nullptr) a.aux = (*aux)[i];
      utts.push_back(std::move(a));
    }
    std::ostringstream os;
    vectors[k] = adapt_speaker(am.model, am.lhuc, utts, spk, sev->second, cfg, &labeler, &os).r_spkr;
    logs[k] = os.str();
  });
  TrainedAm out = am;
  for (std::size_t k = 0; k < speakers.size(); ++k) {
    out.lhuc.r_spkr[speakers[k]] = vectors[k];
    if (log != nullptr) *log << logs[k];
  }
  return out;
}

std::vector<SeqUtterance> seq_data(const Corpus& corpus, const std::vector<UtteranceFeatures>& feats,
                                   const GraphemeVocab& vocab, const std::vector<std::size_t>& indices) {
  std::vector<SeqUtterance> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const Utterance& u = corpus.utterances[i];
    out.push_back({u.id, u.speaker_id, u.severity, feats[i].fbank, vocab.encode(u.word)});
  }
  return out;
}

void ctc_rescore_stage(std::vector<NBestList>& lists, const CtcModel& model, const Corpus& corpus,
                       const std::vector<UtteranceFeatures>& feats, std::size_t workers) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) index[corpus.utterances[i].id] = i;
  std::vector<std::string> logs(lists.size());
  parallel_for(lists.size(), workers, [&](std::size_t k) {
    auto it = index.find(lists[k].utterance_id);
    if (it == index.end()) throw DataError("rescore: unknown utterance '" + lists[k].utterance_id + "'");
    const Matrix logits = ctc_logits(model, feats[it->second].fbank);
    std::ostringstream log;
    NamedScorer ctc{"ctc", [&](const std::string& word) { return ctc_logprob(logits, model.vocab.encode(word)); }};
    combine_systems(lists[k], {ctc}, uniform_weights({"ctc"}), &log);
    logs[k] = log.str();
  });
  for (const auto& l : logs) {
    if (!l.empty()) log_message(LogLevel::kWarn, l);
  }
}

std::vector<Reference> references(const Corpus& corpus, const std::vector<std::size_t>& indices) {
  std::vector<Reference> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const Utterance& u = corpus.utterances[i];
    out.push_back({u.id, u.word, std::string(severity_name(u.severity))});
  }
  return out;
}

std::map<std::string, std::string> first_pass_hyps(const std::vector<NBestList>& lists) {
  std::map<std::string, std::string> out;
  for (const auto& l : lists) {
    if (!l.hypotheses.empty()) out[l.utterance_id] = l.hypotheses.front().word;
  }
  return out;
}

std::map<std::string, std::string> rescored_hyps(const std::vector<NBestList>& lists, const RescoreWeights& weights) {
  const RescoreWeights w = weights.empty() ? uniform_weights({"ctc"}) : weights;
  std::map<std::string, std::string> out;
  for (const auto& l : lists) out[l.utterance_id] = rescore(l, w).word;
  return out;
}

void write_hyps(std::ostream& os, const std::map<std::string, std::string>& hyps) {
  for (const auto& [id, word] : hyps) os << id << '\t' << word << '\n';
}

std::map<std::string, std::string> read_hyps(std::istream& is) {
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("malformed hypothesis line: " + line);
    out[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return out;
}

void write_refs(std::ostream& os, const std::vector<Reference>& refs) {
  for (const auto& r : refs) os << r.id << '\t' << r.tag << '\t' << r.text << '\n';
}

std::vector<Reference> read_refs(std::istream& is) {
  std::vector<Reference> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Reference r;
    if (!std::getline(ls, r.id, '\t') || !std::getline(ls, r.tag, '\t')) {
      throw DataError("malformed reference line: " + line);
    }
    std::getline(ls, r.text);
    out.push_back(std::move(r));
  }
  return out;
}

// --------------------------------------------------------------- ablation

std::string AblationCell::label() const {
  std::string s;
  s += aux ? "aux" : "-";
  s += seve_head ? "+seve_tgt" : "+-";
  s += lhuc_seve ? "+lhuc_seve" : "+-";
  return s;
}

std::vector<AblationCell> ablation_grid() {
  std::vector<AblationCell> cells;
  for (int mask = 0; mask < 8; ++mask) cells.push_back({(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0});
  return cells;
}

SeedData prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t workers) {
  SeedData d;
  d.seed = seed;
  CorpusSection cs = cfg.corpus;
  cs.seed = seed;
  d.corpus = make_corpus(cs);
  d.feats = extract_features(d.corpus, cfg.features, workers);
  EmbedderSection es = cfg.embedder;
  es.train.seed = derive_seed(seed, 1);
  d.embedder = train_embedder_stage(d.corpus, d.feats, es);
  d.aux = aux_vectors(d.embedder, d.feats, workers);
  for (const auto& [spk, a] : assess_speakers(d.embedder, d.corpus, d.feats, d.corpus.indices(false))) {
    d.assessed[spk] = a.level;
  }
  return d;
}

ScoredResult run_ablation_cell(const ExperimentConfig& cfg, const SeedData& data, const AblationCell& cell,
                               std::size_t workers) {
  AmSection am = cfg.am;
  am.options = {cell.aux, cell.seve_head, cell.lhuc_seve};
  am.train.seed = derive_seed(data.seed, 2);
  const std::vector<Vector>* aux = cell.aux ? &data.aux : nullptr;
  const auto train = am_data(data.corpus, data.feats, aux, data.corpus.indices(true), cfg.features);
  const TrainedAm trained = train_am_stage(train, am);
  DecodePolicy policy;
  if (cell.lhuc_seve) {
    if (am.assessed_severity) {
      policy.severity = data.assessed;
    } else {
      for (const auto& s : data.corpus.speakers) policy.severity[s.speaker_id] = s.severity;
    }
  }
  const auto test = data.corpus.indices(false);
  const auto lists = decode_stage(trained, data.corpus, data.feats, aux, test, policy, cfg.decode.nbest, workers);
  return wer(references(data.corpus, test), first_pass_hyps(lists));
}

ScoredResult run_seq_system(const ExperimentConfig& cfg, const SeedData& data, bool use_severity, std::size_t workers) {
  std::vector<std::string> words;
  for (const auto& e : data.corpus.lexicon.entries()) words.push_back(e.word);
  const GraphemeVocab vocab = GraphemeVocab::from_words(words);
  TrainConfig tc = cfg.seq.train;
  tc.seed = derive_seed(data.seed, 4);
  const auto train = seq_data(data.corpus, data.feats, vocab, data.corpus.indices(true));
  const CtcModel model = train_seq(train, vocab, tc, use_severity, cfg.seq.arch);
  std::vector<LabelSeq> encoded;
  for (const auto& w : words) encoded.push_back(vocab.encode(w));
  const auto test = data.corpus.indices(false);
  std::vector<std::string> out(test.size());
  parallel_for(test.size(), workers, [&](std::size_t k) {
    out[k] = words[recognize_word(model, data.feats[test[k]].fbank, encoded)];
  });
  std::map<std::string, std::string> hyps;
  for (std::size_t k = 0; k < test.size(); ++k) hyps[data.corpus.utterances[test[k]].id] = out[k];
  return wer(references(data.corpus, test), hyps);
}

double AblationResult::mean_wer(std::size_t cell, const std::string& group) const {
  double s = 0.0;
  for (const auto& r : results.at(cell)) s += r.wer(group);
  return s / static_cast<double>(results.at(cell).size());
}

std::vector<double> AblationResult::pooled_errors(std::size_t cell) const {
  std::vector<double> out;
  for (const auto& r : results.at(cell)) {
    const auto e = r.segment_errors();
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

AblationResult run_ablation(const ExperimentConfig& cfg, std::size_t workers,
                            const std::function<void(const std::string&)>& progress) {
  AblationResult r;
  r.cells = ablation_grid();
  r.seeds = cfg.eval.seeds;
  r.results.assign(r.cells.size(), std::vector<ScoredResult>(r.seeds.size()));
  for (std::size_t s = 0; s < r.seeds.size(); ++s) {
    const SeedData data = prepare_seed(cfg, r.seeds[s], workers);
    if (progress) progress("seed " + std::to_string(r.seeds[s]) + ": data ready");
    // Cells are independent; inner work runs single-threaded when the grid
    // itself is spread over workers.
    const std::size_t inner = workers > 1 ? 1 : workers;
    parallel_for(r.cells.size(), workers, [&](std::size_t c) {
      r.results[c][s] = run_ablation_cell(cfg, data, r.cells[c], inner);
    });
    if (progress) {
      std::ostringstream os;
      os << "seed " << r.seeds[s] << ":";
      for (std::size_t c = 0; c < r.cells.size(); ++c) {
        os << ' ' << r.cells[c].label() << '=' << std::fixed << std::setprecision(2) << r.results[c][s].wer();
      }
      progress(os.str());
    }
  }
  return r;
}

void write_ablation_table(std::ostream& os, const AblationResult& r) {
  const std::vector<std::string> cols = table_groups(r.results.at(0).at(0));
  os << "Sys\tAux\tSeveTarget\tLhucSeve";
  for (const auto& c : cols) os << '\t' << c;
  os << "\tz\tSig\n";
  const auto base = r.pooled_errors(0);
  std::ostringstream line;
  line << std::fixed << std::setprecision(2);
  for (std::size_t c = 0; c < r.cells.size(); ++c) {
    line.str({});
    const AblationCell& cell = r.cells[c];
    line << (c + 1) << '\t' << (cell.aux ? "on" : "-") << '\t' << (cell.seve_head ? "on" : "-") << '\t'
         << (cell.lhuc_seve ? "on" : "-");
    for (const auto& g : cols) line << '\t' << r.mean_wer(c, g);
    if (c == 0) {
      line << "\t-\t";
    } else {
      const SignificanceResult sig = mapsswe(base, r.pooled_errors(c));
      line << '\t';
      if (sig.undefined) {
        line << "undef";
      } else {
        line << sig.z;
      }
      line << '\t' << (sig.significant && sig.mean_diff > 0 ? "*" : "");
    }
    os << line.str() << '\n';
  }
}

// ------------------------------------------------------------ artifacts

namespace {

std::vector<std::string> stage_sections(const std::string& stage) {
  if (stage == "corpus") return {"corpus"};
  if (stage == "features") return {"corpus", "features"};
  if (stage == "embedder") return {"corpus", "features", "embedder"};
  if (stage == "am" || stage == "sat") return {"corpus", "features", "embedder", "am"};
  if (stage == "adapt") return {"corpus", "features", "embedder", "am", "adaptation"};
  if (stage == "seq") return {"corpus", "features", "seq"};
  if (stage == "decode") return {"corpus", "features", "embedder", "am", "adaptation", "decode"};
  if (stage == "rescore") return {"corpus", "features", "embedder", "am", "adaptation", "seq", "decode"};
  if (stage == "score") return {"corpus", "features", "embedder", "am", "adaptation", "seq", "decode", "eval"};
  throw DataError("unknown pipeline stage '" + stage + "'");
}

}  // namespace

std::string stage_hash(const ExperimentConfig& cfg, const std::string& stage) {
  const json full = cfg.to_json();
  json subset = json::object();
  subset["stage"] = stage;
  for (const auto& s : stage_sections(stage)) subset[s] = full.at(s);
  return hex64(fnv1a64(subset.dump()));
}

void write_stamp(const std::filesystem::path& dir, const ExperimentConfig& cfg, const std::string& stage) {
  std::ofstream os(dir / "stamp");
  if (!os) throw DataError("cannot write stamp in " + dir.string());
  os << stage << '\t' << stage_hash(cfg, stage) << '\n';
}

void require_stamp(const std::filesystem::path& dir, const ExperimentConfig& cfg, const std::string& stage,
                   const std::string& producer) {
  std::ifstream is(dir / "stamp");
  if (!is) {
    throw DataError("missing " + stage + " artifacts in " + dir.string() + "; run `seva " + producer + "` first");
  }
  std::string name, hash;
  std::getline(is, name, '\t');
  std::getline(is, hash);
  if (name != stage || hash != stage_hash(cfg, stage)) {
    throw DataError("stale " + stage + " artifacts in " + dir.string() +
                    " (built from a different configuration); rerun `seva " + producer + "`");
  }
}

}  // namespace seva
