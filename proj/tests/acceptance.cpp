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

// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails. Progress goes to stderr.

#include "grad_harness.hpp"
#include "oracles.hpp"
#include "seva/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

using namespace seva;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void progress(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os.precision(prec);
  os << std::fixed << v;
  return os.str();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void report(int id, const std::string& name, const Verdict& v, double secs) {
  std::cout << (v.pass ? "PASS" : "FAIL") << "  [" << id << "] " << name << ": " << v.detail << " (" << fmt(secs, 1)
            << " s)" << std::endl;
  if (!v.pass) ++g_failures;
}

// Runs one criterion; an exception is a failure, not a crash.
void criterion(int id, const std::string& name, const std::function<Verdict()>& fn) {
  const auto t0 = Clock::now();
  Verdict v;
  try {
    v = fn();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  report(id, name, v, seconds_since(t0));
}

// ---------------------------------------------------------------- 1 .. 4

Verdict gradients() {
  const auto t0 = Clock::now();
  bool ok = true;
  double worst = 0.0;
  std::size_t min_coords = SIZE_MAX;
  std::string bad;
  for (const auto& [name, r] : gradcheck::all()) {
    worst = std::max(worst, r.max_rel_error);
    min_coords = std::min(min_coords, r.coords_checked);
    if (!(r.max_rel_error < 1e-4) || r.coords_checked < 100) {
      ok = false;
      bad += " " + name;
    }
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 60.0;
  return {ok, "max rel err " + sci(worst) + ", min coords " + std::to_string(min_coords) + ", " +
                  fmt(secs, 1) + " s" + (bad.empty() ? "" : ", failing:" + bad)};
}

Verdict ctc_oracle() {
  const auto t0 = Clock::now();
  oracle::Gen gen(2026);
  std::size_t cases = 0;
  double worst = 0.0;
  bool ok = true;
  for (int V = 1; V <= 4; ++V) {
    for (int T = 1; T <= 8; ++T) {
      Matrix z(T, V + 1);
      oracle::Grid g(static_cast<std::size_t>(T), std::vector<double>(static_cast<std::size_t>(V + 1)));
      for (int t = 0; t < T; ++t) {
        for (int k = 0; k <= V; ++k) {
          z(t, k) = 1.5 * gen.normal();
          g[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] = z(t, k);
        }
      }
      const auto truth = oracle::ctc_brute_force(g);
      for (const auto& labels : oracle::all_label_seqs(V, 3)) {
        ++cases;
        const double lp = ctc_logprob(z, labels);
        const auto it = truth.find(labels);
        if (it == truth.end()) {
          ok = ok && lp == -std::numeric_limits<double>::infinity();
          continue;
        }
        const double err = std::abs(lp - it->second);
        worst = std::max(worst, err);
        ok = ok && err <= 1e-10;
      }
    }
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 30.0;
  return {ok, std::to_string(cases) + " cases, max |diff| " + sci(worst) + ", " + fmt(secs, 1) + " s"};
}

Verdict lhuc_identity() {
  oracle::Gen gen(7);
  double worst = 0.0;
  bool range_ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(static_cast<std::uint64_t>(trial) + 1);
    HybridArch arch;
    arch.hidden_layers = static_cast<std::size_t>(gen.integer(2, 5));
    arch.hidden_width = static_cast<std::size_t>(gen.integer(4, 48));
    const std::size_t aux_dim = gen.coin() ? 0 : 6;
    const HybridDNN m = init_hybrid(kBaseFeatureDim + aux_dim, 9, 3, arch, rng);
    FeatureMatrix f;
    f.frames = gradcheck::random_matrix(gen.integer(1, 30), kBaseFeatureDim, rng);
    const Vector aux = gradcheck::random_vector(static_cast<Eigen::Index>(aux_dim), rng);
    const Vector* ap = aux_dim > 0 ? &aux : nullptr;
    const LhucParams zeros = LhucParams::zeros(m.lhuc_dim(), {"spk"});
    const AmPosteriors plain = forward_am(m, f, ap);
    for (SeverityLevel s : kAllSeverities) {
      const AmPosteriors adapted = forward_am(m, f, ap, &zeros, {"spk", s});
      worst = std::max({worst, (plain.tri - adapted.tri).cwiseAbs().maxCoeff(),
                        (plain.mono - adapted.mono).cwiseAbs().maxCoeff()});
    }
    // Random r vectors: every combined factor stays inside (0, 4).
    const Vector rs = gradcheck::random_vector(static_cast<Eigen::Index>(m.lhuc_dim()), rng, 10.0);
    const Vector rv = gradcheck::random_vector(static_cast<Eigen::Index>(m.lhuc_dim()), rng, 10.0);
    const Vector scaled = lhuc_scale(Vector::Ones(static_cast<Eigen::Index>(m.lhuc_dim())), rs, rv);
    range_ok = range_ok && scaled.minCoeff() > 0.0 && scaled.maxCoeff() < 4.0;
  }
  for (int i = 0; i < 10000; ++i) {
    const double p = lhuc_xi(gen.uniform(-30.0, 30.0)) * lhuc_xi(gen.uniform(-30.0, 30.0));
    range_ok = range_ok && p > 0.0 && p < 4.0;
  }
  const bool ok = worst <= 1e-12 && range_ok && lhuc_xi(0.0) == 1.0;
  return {ok, "max |posterior diff| " + sci(worst) + ", factors in (0,4): " + (range_ok ? "yes" : "no")};
}

Verdict svd_oracle() {
  oracle::Gen gen(4);
  double worst_val = 0.0, worst_basis = 0.0, worst_orth = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int f = gen.integer(4, 24), t = gen.integer(4, 24);
    const int k = std::min({f, t, 6});
    Spectrogram s;
    s.magnitudes.resize(f, t);
    oracle::Grid x(static_cast<std::size_t>(f), std::vector<double>(static_cast<std::size_t>(t)));
    for (int i = 0; i < f; ++i) {
      for (int j = 0; j < t; ++j) {
        s.magnitudes(i, j) = std::abs(gen.normal());
        x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = s.magnitudes(i, j);
      }
    }
    const SpectralBases b = svd_spectral_bases(s, static_cast<std::size_t>(k));
    const auto [vals, vecs] = oracle::jacobi_eigen(oracle::gram(x));
    for (int c = 0; c < k; ++c) {
      const auto kc = static_cast<std::size_t>(c);
      worst_val = std::max(worst_val, std::abs(b.singular_values[c] - std::sqrt(std::max(0.0, vals[kc]))));
      double dot = 0.0;
      for (int i = 0; i < f; ++i) dot += b.bases(c, i) * vecs[static_cast<std::size_t>(i)][kc];
      const double sign = dot < 0 ? -1.0 : 1.0;
      for (int i = 0; i < f; ++i) {
        worst_basis = std::max(worst_basis, std::abs(b.bases(c, i) - sign * vecs[static_cast<std::size_t>(i)][kc]));
      }
    }
    const Matrix g = b.bases * b.bases.transpose();
    worst_orth = std::max(worst_orth, (g - Matrix::Identity(k, k)).cwiseAbs().maxCoeff());
  }
  const bool ok = worst_val <= 1e-6 && worst_basis <= 1e-6 && worst_orth <= 1e-8;
  return {ok, "values " + sci(worst_val) + ", bases " + sci(worst_basis) + ", orthonormality " + sci(worst_orth)};
}

// ---------------------------------------------------------------- 5 .. 9

constexpr std::size_t kWorkers = 4;

struct SeedRun {
  std::uint64_t seed = 0;
  ScoredResult seq_off, seq_on;
  double assess_accuracy = 0.0;
  ScoredResult adapt_assessed, adapt_oracle;
  std::vector<NBestList> lists;  // oracle-severity adapted decode
  SeedData data;
};

// Severity-aware system used to compare assessed and oracle severities.
ScoredResult adapted_wer(const ExperimentConfig& cfg, const SeedData& d, const TrainedAm& am,
                         const std::map<std::string, SeverityLevel>& sev, std::size_t workers,
                         std::vector<NBestList>* lists_out = nullptr) {
  const auto test = d.corpus.indices(false);
  const TrainedAm adapted = adapt_stage(am, d.corpus, d.feats, &d.aux, test, sev, cfg.adaptation.cfg, workers);
  DecodePolicy policy;
  policy.severity = sev;
  policy.use_speaker = true;
  auto lists = decode_stage(adapted, d.corpus, d.feats, &d.aux, test, policy, cfg.decode.nbest, workers);
  ScoredResult r = wer(references(d.corpus, test), first_pass_hyps(lists));
  if (lists_out != nullptr) *lists_out = std::move(lists);
  return r;
}

SeedRun run_seed(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t workers) {
  SeedRun r;
  r.seed = seed;
  r.data = prepare_seed(cfg, seed, workers);
  const SeedData& d = r.data;
  r.seq_off = run_seq_system(cfg, d, false, workers);
  r.seq_on = run_seq_system(cfg, d, true, workers);

  // Severity assessment on speakers the embedder never saw.
  CorpusSection cs = cfg.corpus;
  cs.seed = seed;
  const Corpus held = make_heldout_corpus(cs);
  const auto hf = extract_features(held, cfg.features, workers);
  const auto assessed = assess_speakers(d.embedder, held, hf, held.indices(false));
  std::size_t correct = 0;
  for (const auto& [spk, a] : assessed) correct += held.speaker(spk).severity == a.level;
  r.assess_accuracy = static_cast<double>(correct) / static_cast<double>(assessed.size());

  AmSection am = cfg.am;
  am.options = {true, true, true};
  am.train.seed = derive_seed(seed, 2);
  const auto train = am_data(d.corpus, d.feats, &d.aux, d.corpus.indices(true), cfg.features);
  const TrainedAm trained = train_am_stage(train, am);
  std::map<std::string, SeverityLevel> oracle_sev;
  for (const auto& s : d.corpus.speakers) oracle_sev[s.speaker_id] = s.severity;
  r.adapt_assessed = adapted_wer(cfg, d, trained, d.assessed, workers);
  r.adapt_oracle = adapted_wer(cfg, d, trained, oracle_sev, workers, &r.lists);
  return r;
}

std::string csv(const ScoredResult& r) {
  std::ostringstream os;
  write_utterance_csv(os, r);
  return os.str();
}

std::string table_of(const AblationResult& r) {
  std::ostringstream os;
  write_ablation_table(os, r);
  return os.str();
}

}  // namespace

int main() {
  set_log_level(LogLevel::kWarn);
  std::cout << "seva acceptance" << std::endl;

  criterion(1, "gradient checks", gradients);
  criterion(2, "CTC vs brute-force enumeration", ctc_oracle);
  criterion(3, "LHUC zero-vector identity and factor range", lhuc_identity);
  criterion(4, "spectral-basis SVD vs Gram eigen oracle", svd_oracle);

  const ExperimentConfig cfg;  // defaults: 4 severities x 4 speakers, 30 words, seeds 1..5
  std::cerr << "[acceptance] config " << cfg.to_json().dump() << std::endl;

  // 5: the ablation grid, timed on its own.
  AblationResult ablation;
  double ablation_secs = 0.0;
  bool ablation_ok = true;
  std::string ablation_error;
  {
    const auto t0 = Clock::now();
    try {
      ablation = run_ablation(cfg, kWorkers, progress);
    } catch (const std::exception& e) {
      ablation_ok = false;
      ablation_error = e.what();
    }
    ablation_secs = seconds_since(t0);
  }
  std::cerr << table_of(ablation);
  {
    Verdict v;
    if (!ablation_ok) {
      v = {false, "exception: " + ablation_error};
    } else {
      const double base = ablation.mean_wer(0);
      std::ostringstream d;
      d << "baseline " << fmt(base, 2);
      bool singles_ok = true;
      std::size_t best = 0;
      for (std::size_t c = 0; c < ablation.cells.size(); ++c) {
        const AblationCell& cell = ablation.cells[c];
        const int on = cell.aux + cell.seve_head + cell.lhuc_seve;
        const double m = ablation.mean_wer(c);
        if (on == 1) {
          d << ", " << cell.label() << " " << fmt(m, 2);
          singles_ok = singles_ok && m <= base;
        }
        if (c > 0 && (best == 0 || m < ablation.mean_wer(best))) best = c;
      }
      const double best_wer = ablation.mean_wer(best);
      const SignificanceResult sig = mapsswe(ablation.pooled_errors(0), ablation.pooled_errors(best));
      const bool best_ok = best_wer < base && sig.significant && sig.mean_diff > 0;
      d << "; best " << ablation.cells[best].label() << " " << fmt(best_wer, 2) << " (z "
        << (sig.undefined ? std::string("undef") : fmt(sig.z, 2)) << ", p " << fmt(sig.p_value, 4) << ")";
      d << "; " << fmt(ablation_secs, 0) << " s";
      v = {singles_ok && best_ok && ablation_secs < 1800.0, d.str()};
    }
    report(5, "ablation trend with MAPSSWE significance", v, ablation_secs);
  }

  // 6 .. 8 share per-seed runs.
  std::vector<SeedRun> runs;
  double runs_secs = 0.0;
  std::string runs_error;
  {
    const auto t0 = Clock::now();
    try {
      for (std::uint64_t s : cfg.eval.seeds) {
        runs.push_back(run_seed(cfg, s, kWorkers));
        const SeedRun& r = runs.back();
        progress("seed " + std::to_string(s) + ": seq off " + fmt(r.seq_off.wer(), 2) + " on " +
                 fmt(r.seq_on.wer(), 2) + ", assess acc " + fmt(r.assess_accuracy, 3) + ", adapt assessed " +
                 fmt(r.adapt_assessed.wer(), 2) + " oracle " + fmt(r.adapt_oracle.wer(), 2));
      }
    } catch (const std::exception& e) {
      runs_error = e.what();
      runs.clear();
    }
    runs_secs = seconds_since(t0);
  }
  const auto mean_of = [&](const std::function<double(const SeedRun&)>& f) {
    double s = 0.0;
    for (const auto& r : runs) s += f(r);
    return s / static_cast<double>(runs.size());
  };

  if (runs.empty()) {
    report(6, "severity task in the sequence model", {false, "exception: " + runs_error}, runs_secs);
    report(7, "severity assessment and assessed-vs-oracle adaptation", {false, "exception: " + runs_error}, 0.0);
  } else {
    const double off = mean_of([](const SeedRun& r) { return r.seq_off.wer(); });
    const double on = mean_of([](const SeedRun& r) { return r.seq_on.wer(); });
    report(6, "severity task in the sequence model",
           {on <= off, "severity on " + fmt(on, 2) + " vs CTC only " + fmt(off, 2) + " over " +
                           std::to_string(runs.size()) + " seeds"},
           runs_secs);
    const double acc = mean_of([](const SeedRun& r) { return r.assess_accuracy; });
    const double wa = mean_of([](const SeedRun& r) { return r.adapt_assessed.wer(); });
    const double wo = mean_of([](const SeedRun& r) { return r.adapt_oracle.wer(); });
    report(7, "severity assessment and assessed-vs-oracle adaptation",
           {acc >= 0.8 && wa - wo < 2.0, "held-out accuracy " + fmt(100.0 * acc, 1) + "%, adapted WER assessed " +
                                             fmt(wa, 2) + " vs oracle " + fmt(wo, 2) + " (diff " + fmt(wa - wo, 2) +
                                             ")"},
           0.0);
  }

  criterion(8, "rescoring identity and analytic crossover", [&]() -> Verdict {
    // Identity on real N-best lists carrying a second-pass score.
    if (runs.empty()) return {false, "no decoded lists"};
    std::vector<NBestList> lists = runs.front().lists;
    std::size_t disagreements = 0;
    for (auto& nb : lists) {
      // Deterministic pseudo scores, deliberately unrelated to the first pass.
      NamedScorer other{"ctc", [](const std::string& w) { return -static_cast<double>((w.size() * 7919) % 13); }};
      combine_systems(nb, {other}, uniform_weights({"ctc"}));
    }
    const auto first = first_pass_hyps(lists);
    const auto same = rescored_hyps(lists, {{kFirstPass, 1.0}});
    if (first != same) ++disagreements;
    const auto mixed = rescored_hyps(lists, {{kFirstPass, 0.0}, {"ctc", 1.0}});
    const bool second_pass_matters = mixed != first;

    // Constructed two-hypothesis case; sweep w on a fine grid.
    NBestList nb;
    Hypothesis a, b;
    a.word = "x";
    a.first_pass_logprob = -10.0;
    a.second_pass_logprobs["ctc"] = -8.0;
    b.word = "y";
    b.first_pass_logprob = -12.0;
    b.second_pass_logprobs["ctc"] = -3.0;
    nb.hypotheses = {a, b};
    const double f1 = -10.0, f2 = -12.0, c1 = -8.0, c2 = -3.0;
    const double w_star = (f1 - f2) / ((f1 - f2) + (c2 - c1));
    const int steps = 10000;
    double flip = -1.0;
    std::size_t prev = rescore_index(nb, {{kFirstPass, 1.0}, {"ctc", 0.0}});
    for (int i = 1; i <= steps; ++i) {
      const double w = static_cast<double>(i) / steps;
      const std::size_t cur = rescore_index(nb, {{kFirstPass, 1.0 - w}, {"ctc", w}});
      if (cur != prev && flip < 0) flip = w;
      prev = cur;
    }
    const bool flip_ok = flip > 0 && std::abs(flip - w_star) <= 1.0 / steps + 1e-12;
    const bool ok = disagreements == 0 && flip_ok;
    return {ok, std::string("{first_pass:1} identity on ") + std::to_string(lists.size()) + " lists: " +
                    (disagreements == 0 ? "yes" : "no") + " (second pass changes output: " +
                    (second_pass_matters ? "yes" : "no") + "); flip at " + fmt(flip, 4) + " vs w* " + fmt(w_star, 4)};
  });

  criterion(9, "determinism across worker counts", [&]() -> Verdict {
    if (!ablation_ok || runs.empty()) return {false, "earlier stages failed"};
    // Repeat seed 1 single-threaded and compare with the multi-threaded runs.
    ExperimentConfig one = cfg;
    one.eval.seeds = {cfg.eval.seeds.front()};
    const AblationResult again = run_ablation(one, 1);
    AblationResult first;
    first.cells = ablation.cells;
    first.seeds = one.eval.seeds;
    for (const auto& col : ablation.results) first.results.push_back({col.front()});
    bool same = table_of(first) == table_of(again);
    for (std::size_t c = 0; c < again.cells.size(); ++c) {
      same = same && csv(first.results[c][0]) == csv(again.results[c][0]);
    }
    const SeedRun rerun = run_seed(cfg, cfg.eval.seeds.front(), 1);
    const SeedRun& ref = runs.front();
    same = same && csv(rerun.seq_off) == csv(ref.seq_off) && csv(rerun.seq_on) == csv(ref.seq_on);
    same = same && csv(rerun.adapt_assessed) == csv(ref.adapt_assessed) &&
           csv(rerun.adapt_oracle) == csv(ref.adapt_oracle);
    std::ostringstream na, nb;
    write_nbest(na, rerun.lists);
    write_nbest(nb, ref.lists);
    same = same && na.str() == nb.str();
    return {same, std::string("seed ") + std::to_string(one.eval.seeds.front()) + ", " +
                      std::to_string(kWorkers) + " workers vs 1: tables, per-utterance scores and N-best " +
                      (same ? "byte-identical" : "DIFFER")};
  });

  std::cout << (g_failures == 0 ? "ALL PASS" : std::to_string(g_failures) + " criteria FAILED") << std::endl;
  return g_failures == 0 ? 0 : 1;
}
