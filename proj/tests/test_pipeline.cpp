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

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace seva;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("seva_pipeline_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// Runs the CLI quietly; returns its exit status.
int run_cli(const std::string& args) {
  const std::string cmd = std::string(SEVA_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// Small enough for a full CLI run in a few seconds.
nlohmann::json tiny_config() {
  return nlohmann::json::parse(R"({
    "corpus": {"seed": 3, "speakers_per_severity": 1, "heldout_speakers_per_severity": 1},
    "embedder": {"train": {"epochs": 3}},
    "am": {"options": {"use_aux": true, "use_lhuc_seve": true}, "train": {"epochs": 2},
           "hidden_layers": 2, "hidden_width": 32},
    "adaptation": {"epochs": 1},
    "seq": {"train": {"epochs": 1}},
    "decode": {"rescore": true}
  })");
}

fs::path write_config(const fs::path& dir, const nlohmann::json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

}  // namespace

TEST(Config, DefaultsRoundTripThroughJson) {
  const ExperimentConfig a;
  const ExperimentConfig b = ExperimentConfig::from_json(a.to_json());
  EXPECT_EQ(a.to_json(), b.to_json());
  const ExperimentConfig c = ExperimentConfig::from_json(nlohmann::json::object());
  EXPECT_EQ(a.to_json(), c.to_json());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(ExperimentConfig::from_json(nlohmann::json::parse(R"({"corpus": {"sede": 1}})")), DataError);
  EXPECT_THROW(ExperimentConfig::from_json(nlohmann::json::parse(R"({"corpsu": {}})")), DataError);
  EXPECT_THROW(ExperimentConfig::from_json(nlohmann::json::parse(R"({"am": {"options": {"lhuc": true}}})")),
               DataError);
  EXPECT_THROW(ExperimentConfig::from_json(nlohmann::json::parse(R"({"adaptation": {"lambda": 2.0}})")), DataError);
  EXPECT_THROW(ExperimentConfig::from_json(nlohmann::json::parse(R"({"decode": {"weights": {"lm": 1.0}}})")),
               DataError);
  EXPECT_THROW(ExperimentConfig::from_json(nlohmann::json::parse(R"({"eval": {"seeds": []}})")), DataError);
}

TEST(Config, LoadReportsBadFiles) {
  const fs::path d = scratch("load");
  EXPECT_THROW(ExperimentConfig::load(d / "absent.json"), DataError);
  std::ofstream(d / "bad.json") << "{ not json";
  EXPECT_THROW(ExperimentConfig::load(d / "bad.json"), DataError);
}

TEST(Config, SeedOverrideReachesEverySection) {
  ExperimentConfig c;
  c.set_seed(42);
  EXPECT_EQ(c.corpus.seed, 42u);
  EXPECT_EQ(c.embedder.train.seed, 42u);
  EXPECT_EQ(c.am.train.seed, 42u);
  EXPECT_EQ(c.seq.train.seed, 42u);
  EXPECT_EQ(c.eval.seeds, (std::vector<std::uint64_t>{42}));
}

TEST(Stamps, HashTracksOnlyUpstreamSections) {
  ExperimentConfig a;
  ExperimentConfig b = a;
  b.seq.train.epochs += 1;
  EXPECT_EQ(stage_hash(a, "am"), stage_hash(b, "am"));
  EXPECT_NE(stage_hash(a, "seq"), stage_hash(b, "seq"));
  EXPECT_NE(stage_hash(a, "rescore"), stage_hash(b, "rescore"));
  EXPECT_NE(stage_hash(a, "am"), stage_hash(a, "sat"));
  EXPECT_THROW(stage_hash(a, "bogus"), DataError);
}

TEST(Stamps, MissingAndStaleAreRejected) {
  const fs::path d = scratch("stamps");
  ExperimentConfig a;
  EXPECT_THROW(require_stamp(d, a, "corpus", "gen-corpus"), DataError);
  write_stamp(d, a, "corpus");
  EXPECT_NO_THROW(require_stamp(d, a, "corpus", "gen-corpus"));
  ExperimentConfig b = a;
  b.corpus.seed = 99;
  EXPECT_THROW(require_stamp(d, b, "corpus", "gen-corpus"), DataError);
  EXPECT_THROW(require_stamp(d, a, "features", "extract"), DataError);
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
  for (std::size_t workers : {1u, 2u, 5u, 64u}) {
    std::vector<std::atomic<int>> hits(37);
    parallel_for(hits.size(), workers, [&](std::size_t i) { hits[i]++; });
    for (const auto& h : hits) EXPECT_EQ(h.load(), 1) << workers;
  }
  parallel_for(0, 4, [](std::size_t) { FAIL(); });
}

TEST(ParallelFor, PropagatesExceptions) {
  EXPECT_THROW(parallel_for(10, 3,
                            [](std::size_t i) {
                              if (i == 7) throw DataError("boom");
                            }),
               DataError);
}

TEST(Ablation, GridCoversAllEightCells) {
  const auto cells = ablation_grid();
  ASSERT_EQ(cells.size(), 8u);
  EXPECT_EQ(cells.front().label(), "-+-+-");
  EXPECT_EQ(cells.back().label(), "aux+seve_tgt+lhuc_seve");
}

TEST(TextIo, HypsAndRefsRoundTrip) {
  const std::map<std::string, std::string> hyps = {{"u1", "ami"}, {"u2", "lo rune"}};
  std::stringstream hs;
  write_hyps(hs, hyps);
  EXPECT_EQ(read_hyps(hs), hyps);
  const std::vector<Reference> refs = {{"u1", "ami", "VL"}, {"u2", "lo", ""}};
  std::stringstream rs;
  write_refs(rs, refs);
  const auto back = read_refs(rs);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].id, "u2");
  EXPECT_EQ(back[1].tag, "");
  EXPECT_EQ(back[0].text, "ami");
  std::istringstream bad("no-tab-here\n");
  EXPECT_THROW(read_hyps(bad), DataError);
}

TEST(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("gen-corpus --workers 0"), 1);
  EXPECT_EQ(run_cli("gen-corpus --config /nonexistent/cfg.json"), 1);
  EXPECT_EQ(run_cli("--help"), 0);
}

TEST(Cli, MissingArtifactsAndBadConfigExitWithTwo) {
  const fs::path d = scratch("cli_missing");
  EXPECT_EQ(run_cli("extract --out " + d.string()), 2);
  nlohmann::json j = tiny_config();
  j["corpus"]["bogus"] = 1;
  EXPECT_EQ(run_cli("gen-corpus --config " + write_config(d, j).string() + " --out " + d.string()), 2);
}

TEST(Cli, FullRunIsDeterministicAcrossWorkerCounts) {
  const fs::path base = scratch("cli_full");
  const std::string cfg = write_config(base, tiny_config()).string();
  std::vector<fs::path> runs;
  for (int workers : {1, 3}) {
    const fs::path out = base / ("w" + std::to_string(workers));
    runs.push_back(out);
    const std::string common = " --config " + cfg + " --out " + out.string() + " --workers " + std::to_string(workers);
    for (const char* step :
         {"gen-corpus", "extract", "train-embedder", "train-am", "adapt", "train-seq", "decode", "rescore", "score"}) {
      ASSERT_EQ(run_cli(step + common), 0) << step << " workers=" << workers;
    }
  }
  for (const char* file : {"decode/nbest.txt", "rescore/nbest.txt", "rescore/hyps.txt", "score/wer.tsv",
                           "score/utterances.csv", "adapt/model.bin", "embedder/assessments.tsv"}) {
    const std::string a = slurp(runs[0] / file);
    EXPECT_FALSE(a.empty()) << file;
    EXPECT_EQ(a, slurp(runs[1] / file)) << file;
  }

  // Changing a section invalidates everything downstream of it.
  nlohmann::json j = tiny_config();
  j["am"]["train"]["epochs"] = 3;
  const std::string stale = write_config(base / "w1", j).string();
  EXPECT_EQ(run_cli("decode --config " + stale + " --out " + runs[0].string()), 2);
  EXPECT_EQ(run_cli("train-seq --config " + stale + " --out " + runs[0].string()), 0);

  // Explicit files bypass the run directory.
  const fs::path sd = scratch("cli_score");
  std::ofstream(sd / "ref.txt") << "a\tVL\tami\nb\tH\tlo\n";
  std::ofstream(sd / "hyp.txt") << "a\tami\nb\trune\n";
  EXPECT_EQ(run_cli("score --ref " + (sd / "ref.txt").string() + " --hyp " + (sd / "hyp.txt").string() + " --out " +
                    sd.string()),
            0);
  EXPECT_EQ(slurp(sd / "score" / "wer.tsv"), "System\tVL\tH\tAll\nsystem\t0.00\t100.00\t50.00\n");
  fs::remove_all(base.parent_path());
}
