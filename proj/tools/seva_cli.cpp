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

// seva: config-driven driver for the severity-aware recognition pipeline.
//
// Every stage writes into <out>/<stage>/ together with the resolved config
// and a stamp holding the hash of the config sections it depends on.
// Downstream stages refuse missing or stale inputs.

#include "seva/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace seva;

namespace {

struct Common {
  std::string config;
  std::string out = "run";
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  std::string ref;
  std::string hyp;
};

struct Context {
  ExperimentConfig cfg;
  fs::path out;
  std::size_t workers = 1;
};

Context make_context(const Common& c) {
  Context ctx;
  if (!c.config.empty()) ctx.cfg = ExperimentConfig::load(c.config);
  if (c.seed) ctx.cfg.set_seed(*c.seed);
  ctx.cfg.validate();
  ctx.out = c.out;
  ctx.workers = std::max<std::size_t>(1, c.workers);
  return ctx;
}

fs::path stage_dir(const Context& ctx, const std::string& stage) {
  const fs::path d = ctx.out / stage;
  fs::create_directories(d);
  return d;
}

void finish_stage(const Context& ctx, const fs::path& dir, const std::string& stage) {
  std::ofstream os(dir / "config.json");
  if (!os) throw DataError("cannot write " + (dir / "config.json").string());
  os << ctx.cfg.to_json().dump(2) << '\n';
  write_stamp(dir, ctx.cfg, stage);
  log_message(LogLevel::kInfo, stage + " done -> " + dir.string());
}

template <typename F>
void write_file(const fs::path& path, F&& fn, bool binary = false) {
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  if (!os) throw DataError("cannot write " + path.string());
  fn(os);
  if (!os) throw DataError("write failed: " + path.string());
}

std::ifstream open_in(const fs::path& path, bool binary = false) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) throw DataError("cannot read " + path.string());
  return is;
}

// ---------------------------------------------------------------- loaders

Corpus load_corpus(const Context& ctx) {
  const fs::path d = ctx.out / "corpus";
  require_stamp(d, ctx.cfg, "corpus", "gen-corpus");
  return read_corpus(d);
}

std::vector<UtteranceFeatures> load_features(const Context& ctx, const Corpus& corpus) {
  const fs::path d = ctx.out / "features";
  require_stamp(d, ctx.cfg, "features", "extract");
  const auto fbank = read_archive(d / "fbank.sevf");
  const auto bases = read_archive(d / "bases.sevf");
  if (fbank.size() != corpus.utterances.size() || bases.size() != corpus.utterances.size()) {
    throw DataError("feature archives do not match the corpus; rerun `seva extract`");
  }
  std::vector<UtteranceFeatures> out(fbank.size());
  for (std::size_t i = 0; i < fbank.size(); ++i) {
    if (fbank[i].id != corpus.utterances[i].id || bases[i].id != fbank[i].id) {
      throw DataError("feature archive order differs from the corpus at '" + fbank[i].id + "'");
    }
    out[i].id = fbank[i].id;
    out[i].fbank.frames = fbank[i].frames;
    out[i].bases = Eigen::Map<const Vector>(bases[i].frames.data(), bases[i].frames.size());
  }
  return out;
}

struct EmbedderArtifacts {
  EmbedderNet net;
  std::vector<Vector> aux;
  std::map<std::string, SeverityLevel> assessed;
};

EmbedderArtifacts load_embedder(const Context& ctx, const std::vector<UtteranceFeatures>& feats) {
  const fs::path d = ctx.out / "embedder";
  require_stamp(d, ctx.cfg, "embedder", "train-embedder");
  EmbedderArtifacts a;
  auto is = open_in(d / "embedder.bin", true);
  a.net = read_embedder(is);
  a.aux = aux_vectors(a.net, feats, ctx.workers);
  auto as = open_in(d / "assessments.tsv");
  for (const auto& row : read_assessments(as)) a.assessed[row.speaker_id] = row.assessment.level;
  return a;
}

std::string am_stage(const Context& ctx) { return ctx.cfg.am.lhuc_sat ? "sat" : "am"; }

TrainedAm load_am(const Context& ctx) {
  const std::string stage = am_stage(ctx);
  const fs::path d = ctx.out / stage;
  require_stamp(d, ctx.cfg, stage, stage == "sat" ? "sat" : "train-am");
  auto is = open_in(d / "model.bin", true);
  auto [model, lhuc] = read_hybrid(is);
  return {std::move(model), std::move(lhuc)};
}

/// Adapted model when adaptation is enabled, else the trained one.
TrainedAm load_decoding_am(const Context& ctx) {
  if (!ctx.cfg.adaptation.enabled) return load_am(ctx);
  const fs::path d = ctx.out / "adapt";
  require_stamp(d, ctx.cfg, "adapt", "adapt");
  auto is = open_in(d / "model.bin", true);
  auto [model, lhuc] = read_hybrid(is);
  return {std::move(model), std::move(lhuc)};
}

std::map<std::string, SeverityLevel> test_severities(const Corpus& corpus,
                                                     const std::map<std::string, SeverityLevel>& assessed,
                                                     bool use_assessed) {
  if (use_assessed) return assessed;
  std::map<std::string, SeverityLevel> out;
  for (const auto& s : corpus.speakers) out[s.speaker_id] = s.severity;
  return out;
}

std::vector<NBestList> load_nbest(const fs::path& path) {
  auto is = open_in(path);
  return read_nbest(is);
}

// ------------------------------------------------------------- subcommands

void cmd_gen_corpus(const Context& ctx) {
  const fs::path d = stage_dir(ctx, "corpus");
  const Corpus corpus = make_corpus(ctx.cfg.corpus);
  write_corpus(corpus, d);
  finish_stage(ctx, d, "corpus");
  std::cout << "corpus: " << corpus.speakers.size() << " speakers, " << corpus.utterances.size()
            << " utterances -> " << d.string() << '\n';
}

void cmd_extract(const Context& ctx) {
  const Corpus corpus = load_corpus(ctx);
  const auto feats = extract_features(corpus, ctx.cfg.features, ctx.workers);
  std::vector<ArchiveEntry> fbank;
  std::vector<ArchiveEntry> bases;
  for (const auto& f : feats) {
    fbank.push_back({f.id, f.fbank.frames});
    Matrix b(1, f.bases.size());
    b.row(0) = f.bases.transpose();
    bases.push_back({f.id, std::move(b)});
  }
  const fs::path d = stage_dir(ctx, "features");
  write_archive(d / "fbank.sevf", fbank);
  write_archive(d / "bases.sevf", bases);
  finish_stage(ctx, d, "features");
  std::cout << "features: " << feats.size() << " utterances -> " << d.string() << '\n';
}

void cmd_train_embedder(const Context& ctx) {
  const Corpus corpus = load_corpus(ctx);
  const auto feats = load_features(ctx, corpus);
  const EmbedderNet net = train_embedder_stage(corpus, feats, ctx.cfg.embedder);
  const fs::path d = stage_dir(ctx, "embedder");
  write_file(d / "embedder.bin", [&](std::ostream& os) { write_embedder(os, net); }, true);
  // Assessment only sees the unlabelled test block.
  std::vector<SpeakerAssessment> rows;
  for (const auto& [spk, a] : assess_speakers(net, corpus, feats, corpus.indices(false))) rows.push_back({spk, a});
  write_file(d / "assessments.tsv", [&](std::ostream& os) { write_assessments(os, rows); });
  std::size_t correct = 0;
  for (const auto& r : rows) correct += corpus.speaker(r.speaker_id).severity == r.assessment.level;
  finish_stage(ctx, d, "embedder");
  std::cout << "embedder: severity assessment " << correct << "/" << rows.size() << " speakers correct\n";
}

void train_am_common(const Context& ctx, bool sat) {
  const Corpus corpus = load_corpus(ctx);
  const auto feats = load_features(ctx, corpus);
  std::optional<EmbedderArtifacts> emb;
  if (ctx.cfg.am.options.use_aux) emb = load_embedder(ctx, feats);
  const auto data =
      am_data(corpus, feats, emb ? &emb->aux : nullptr, corpus.indices(true), ctx.cfg.features);
  AmSection am = ctx.cfg.am;
  am.lhuc_sat = sat;
  const TrainedAm trained = train_am_stage(data, am);
  const std::string stage = sat ? "sat" : "am";
  const fs::path d = stage_dir(ctx, stage);
  write_file(d / "model.bin", [&](std::ostream& os) { write_hybrid(os, trained.model, trained.lhuc); }, true);
  finish_stage(ctx, d, stage);
  std::cout << stage << ": " << data.size() << " training utterances -> " << d.string() << '\n';
}

void cmd_train_am(const Context& ctx) {
  if (ctx.cfg.am.lhuc_sat) throw DataError("am.options.lhuc_sat is set; use `seva sat`");
  train_am_common(ctx, false);
}

void cmd_sat(const Context& ctx) {
  if (!ctx.cfg.am.lhuc_sat) throw DataError("`seva sat` needs am.options.lhuc_sat = true");
  train_am_common(ctx, true);
}

void cmd_adapt(const Context& ctx) {
  if (!ctx.cfg.adaptation.enabled) throw DataError("adaptation.enabled is false");
  const Corpus corpus = load_corpus(ctx);
  const auto feats = load_features(ctx, corpus);
  const EmbedderArtifacts emb = load_embedder(ctx, feats);
  const TrainedAm am = load_am(ctx);
  const auto sev = test_severities(corpus, emb.assessed, ctx.cfg.adaptation.assessed_severity);
  const fs::path d = stage_dir(ctx, "adapt");
  std::ofstream log(d / "adapt.log");
  if (!log) throw DataError("cannot write " + (d / "adapt.log").string());
  const TrainedAm adapted = adapt_stage(am, corpus, feats, ctx.cfg.am.options.use_aux ? &emb.aux : nullptr,
                                        corpus.indices(false), sev, ctx.cfg.adaptation.cfg, ctx.workers, &log);
  write_file(d / "model.bin", [&](std::ostream& os) { write_hybrid(os, adapted.model, adapted.lhuc); }, true);
  finish_stage(ctx, d, "adapt");
  std::cout << "adapt: " << adapted.lhuc.r_spkr.size() << " speaker vectors -> " << d.string() << '\n';
}

void cmd_train_seq(const Context& ctx) {
  const Corpus corpus = load_corpus(ctx);
  const auto feats = load_features(ctx, corpus);
  std::vector<std::string> words;
  for (const auto& e : corpus.lexicon.entries()) words.push_back(e.word);
  const GraphemeVocab vocab = GraphemeVocab::from_words(words);
  const auto data = seq_data(corpus, feats, vocab, corpus.indices(true));
  std::vector<double> losses;
  const CtcModel model = train_seq(data, vocab, ctx.cfg.seq.train, ctx.cfg.seq.use_severity, ctx.cfg.seq.arch, &losses);
  const fs::path d = stage_dir(ctx, "seq");
  write_file(d / "seq.bin", [&](std::ostream& os) { write_seq(os, model); }, true);
  vocab.write(d / "vocab.txt");
  write_file(d / "train.log", [&](std::ostream& os) {
    for (std::size_t e = 0; e < losses.size(); ++e) os << (e + 1) << '\t' << losses[e] << '\n';
  });
  finish_stage(ctx, d, "seq");
  std::cout << "seq: final loss " << (losses.empty() ? 0.0 : losses.back()) << " -> " << d.string() << '\n';
}

void cmd_decode(const Context& ctx) {
  const Corpus corpus = load_corpus(ctx);
  const auto feats = load_features(ctx, corpus);
  const bool need_emb = ctx.cfg.am.options.use_aux || ctx.cfg.am.options.use_lhuc_seve;
  std::optional<EmbedderArtifacts> emb;
  if (need_emb) emb = load_embedder(ctx, feats);
  const TrainedAm am = load_decoding_am(ctx);
  DecodePolicy policy;
  policy.use_speaker = ctx.cfg.adaptation.enabled;
  if (ctx.cfg.am.options.use_lhuc_seve) {
    policy.severity = test_severities(corpus, emb->assessed, ctx.cfg.am.assessed_severity);
  }
  const auto test = corpus.indices(false);
  const auto lists = decode_stage(am, corpus, feats, ctx.cfg.am.options.use_aux ? &emb->aux : nullptr, test, policy,
                                  ctx.cfg.decode.nbest, ctx.workers);
  const fs::path d = stage_dir(ctx, "decode");
  write_file(d / "nbest.txt", [&](std::ostream& os) { write_nbest(os, lists); });
  write_file(d / "hyps.txt", [&](std::ostream& os) { write_hyps(os, first_pass_hyps(lists)); });
  write_file(d / "refs.txt", [&](std::ostream& os) { write_refs(os, references(corpus, test)); });
  finish_stage(ctx, d, "decode");
  std::cout << "decode: " << lists.size() << " utterances -> " << d.string() << '\n';
}

void cmd_rescore(const Context& ctx) {
  const Corpus corpus = load_corpus(ctx);
  const auto feats = load_features(ctx, corpus);
  const fs::path dd = ctx.out / "decode";
  require_stamp(dd, ctx.cfg, "decode", "decode");
  const fs::path sd = ctx.out / "seq";
  require_stamp(sd, ctx.cfg, "seq", "train-seq");
  auto is = open_in(sd / "seq.bin", true);
  const CtcModel model = read_seq(is);
  auto lists = load_nbest(dd / "nbest.txt");
  ctc_rescore_stage(lists, model, corpus, feats, ctx.workers);
  const fs::path d = stage_dir(ctx, "rescore");
  write_file(d / "nbest.txt", [&](std::ostream& os) { write_nbest(os, lists); });
  write_file(d / "hyps.txt", [&](std::ostream& os) { write_hyps(os, rescored_hyps(lists, ctx.cfg.decode.weights)); });
  finish_stage(ctx, d, "rescore");
  std::cout << "rescore: " << lists.size() << " utterances -> " << d.string() << '\n';
}

void cmd_score(const Context& ctx, const Common& c) {
  fs::path ref_path = c.ref;
  fs::path hyp_path = c.hyp;
  if (ref_path.empty() || hyp_path.empty()) {
    const fs::path dd = ctx.out / "decode";
    require_stamp(dd, ctx.cfg, "decode", "decode");
    if (ref_path.empty()) ref_path = dd / "refs.txt";
    if (hyp_path.empty()) {
      if (ctx.cfg.decode.rescore) {
        require_stamp(ctx.out / "rescore", ctx.cfg, "rescore", "rescore");
        hyp_path = ctx.out / "rescore" / "hyps.txt";
      } else {
        hyp_path = dd / "hyps.txt";
      }
    }
  }
  auto rs = open_in(ref_path);
  auto hs = open_in(hyp_path);
  const ScoredResult r = wer(read_refs(rs), read_hyps(hs), {ctx.cfg.eval.missing_is_error});
  const fs::path d = stage_dir(ctx, "score");
  write_file(d / "wer.tsv", [&](std::ostream& os) { write_wer_table(os, {{"system", &r, ""}}); });
  write_file(d / "utterances.csv", [&](std::ostream& os) { write_utterance_csv(os, r); });
  finish_stage(ctx, d, "score");
  write_wer_table(std::cout, {{"system", &r, ""}});
}

void cmd_ablate(const Context& ctx) {
  const AblationResult r =
      run_ablation(ctx.cfg, ctx.workers, [](const std::string& msg) { log_message(LogLevel::kInfo, msg); });
  const fs::path d = ctx.out / "ablate";
  fs::create_directories(d);
  write_file(d / "table.tsv", [&](std::ostream& os) { write_ablation_table(os, r); });
  std::ofstream os(d / "config.json");
  os << ctx.cfg.to_json().dump(2) << '\n';
  write_ablation_table(std::cout, r);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seva: severity-aware dysarthric speech recognition toolkit"};
  app.require_subcommand(1, 1);
  Common common;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "experiment config (JSON); defaults apply when omitted")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", common.out, "run directory")->capture_default_str();
    sub->add_option("--seed", common.seed, "overrides every seed in the config");
    sub->add_option("--workers", common.workers, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  };

  struct Entry {
    const char* name;
    const char* help;
    void (*fn)(const Context&);
  };
  const Entry entries[] = {
      {"gen-corpus", "synthesise the corpus", cmd_gen_corpus},
      {"extract", "filter-bank features and spectral bases", cmd_extract},
      {"train-embedder", "train the spectral-basis embedder and assess test speakers", cmd_train_embedder},
      {"train-am", "train the hybrid acoustic model", cmd_train_am},
      {"sat", "speaker/severity adaptive training", cmd_sat},
      {"adapt", "unsupervised test-speaker LHUC adaptation", cmd_adapt},
      {"train-seq", "train the grapheme CTC model", cmd_train_seq},
      {"decode", "first-pass N-best decoding of the test block", cmd_decode},
      {"rescore", "CTC rescoring of the N-best lists", cmd_rescore},
      {"ablate", "run the aux / target / LHUC ablation grid", cmd_ablate},
  };
  std::vector<std::pair<CLI::App*, void (*)(const Context&)>> subs;
  for (const auto& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    add_common(sub);
    subs.emplace_back(sub, e.fn);
  }
  CLI::App* score = app.add_subcommand("score", "WER table of the decoded (or given) hypotheses");
  add_common(score);
  score->add_option("--ref", common.ref, "reference file (id<TAB>tag<TAB>text)");
  score->add_option("--hyp", common.hyp, "hypothesis file (id<TAB>word)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    set_log_level(log_level_from_env());
    const Context ctx = make_context(common);
    if (score->parsed()) {
      cmd_score(ctx, common);
    } else {
      for (const auto& [sub, fn] : subs) {
        if (sub->parsed()) fn(ctx);
      }
    }
  } catch (const NumericError& e) {
    std::cerr << "seva: numeric error: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "seva: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "seva: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
