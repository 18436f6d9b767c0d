/* Copyright 2026 The sdlab Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "sdlab/bench.hpp"

using namespace sdlab;
namespace fs = std::filesystem;

namespace {

template <typename F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "no error";
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sdlab_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

struct CliResult {
  int code;
  std::string output;
};

CliResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli.log";
  const std::string cmd = std::string("\"") + SDLAB_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_text_file(log.string())};
}

// Small but complete configuration: tiny models, a handful of prompts.
std::string small_config() {
  return "corpus = corpus.txt\n"
         "artifacts = out\n"
         "seed = 42\n"
         "prompt_len = 16\n"
         "max_tokens = 40\n"
         "max_eval_prompts = 6\n"
         "lm.window = 4\nlm.embed = 8\nlm.feature = 16\nlm.epochs = 1\n"
         "draft.epochs = 1\n"
         "collect.n_out = 24\ncollect.k_max_data = 6\n"
         "ldlp.epochs = 3\nldlp.batch = 32\n"
         "ldlp.k_max = 5\nddd.k_max = 5\noracle.k_max = 6\n"
         "probe.positions = 50\nprobe.max_gap = 4\n";
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const Config c = parse_config("seed = 7\n# comment\n\nsplit = 0.5, 0.25, 0.25  # trailing\nfixed.lengths = 2,4\n"
                                "ldlp.schedule = constant\nddd.theta = -0.4\n");
  EXPECT_EQ(c.seed, 7U);
  EXPECT_EQ(c.split, (std::array<double, 3>{0.5, 0.25, 0.25}));
  EXPECT_EQ(c.fixed_lengths, (std::vector<int>{2, 4}));
  EXPECT_EQ(c.ldlp_train.schedule, Schedule::constant);
  EXPECT_DOUBLE_EQ(c.ddd_theta, -0.4);
  EXPECT_EQ(c.max_tokens, 128);
  EXPECT_EQ(c.prompt_len, 32);
}

TEST(Config, ErrorsCarryLineNumbers) {
  EXPECT_EQ(error_of([] { parse_config("seed = 1\nbogus = 3\n"); }), "config line 2: unknown key 'bogus'");
  EXPECT_EQ(error_of([] { parse_config("\n\nseed 1\n"); }), "config line 3: expected key = value");
  EXPECT_EQ(error_of([] { parse_config("seed =\n"); }), "config line 1: missing value for 'seed'");
  EXPECT_NE(error_of([] { parse_config("max_tokens = ten\n"); }).find("config line 1:"), std::string::npos);
  EXPECT_NE(error_of([] { parse_config("lm.schedule = zigzag\n"); }).find("config line 1:"), std::string::npos);
  EXPECT_NE(error_of([] { parse_config("split = 0.5, 0.5\n"); }).find("config line 1:"), std::string::npos);
  EXPECT_NE(error_of([] { parse_config("lm.lr = -1\n"); }).find("invalid config"), std::string::npos);
  EXPECT_NE(error_of([] { parse_config("ldlp.lambda = 0.5\n"); }).find("invalid config"), std::string::npos);
}

TEST(Config, ShippedDefaultParsesToDefaults) {
  const Config c = load_config(SDLAB_SOURCE_DIR "/data/default.conf");
  const Config d;
  EXPECT_EQ(c.seed, d.seed);
  EXPECT_EQ(c.split, d.split);
  EXPECT_EQ(c.lm_dims.window, d.lm_dims.window);
  EXPECT_EQ(c.fixed_lengths, d.fixed_lengths);
  EXPECT_EQ(c.sweep_thetas, d.sweep_thetas);
  EXPECT_DOUBLE_EQ(c.cost.c_target / c.cost.c_draft, 20.0);
  EXPECT_DOUBLE_EQ(c.ddd_theta, -0.6);
}

TEST(SplitCorpus, Examples) {
  const auto s = split_corpus(100, {0.8, 0.1, 0.1}, 3);
  EXPECT_EQ(s.train.size(), 80U);
  EXPECT_EQ(s.ldlp.size(), 10U);
  EXPECT_EQ(s.eval.size(), 10U);
  const auto all = split_corpus(17, {1, 0, 0}, 3);
  EXPECT_EQ(all.train.size(), 17U);
  EXPECT_TRUE(all.ldlp.empty());
  EXPECT_TRUE(all.eval.empty());
  const auto again = split_corpus(100, {0.8, 0.1, 0.1}, 3);
  EXPECT_EQ(s.train, again.train);
  EXPECT_EQ(s.eval, again.eval);
}

TEST(SplitCorpus, PartitionsEveryDocumentOnce) {
  const auto s = split_corpus(800, {0.7, 0.1, 0.2}, 11);
  std::vector<int> seen(800, 0);
  for (const auto* part : {&s.train, &s.ldlp, &s.eval}) {
    for (auto i : *part) ++seen[i];
  }
  for (int n : seen) EXPECT_EQ(n, 1);
  EXPECT_EQ(s.train.size(), 560U);
  EXPECT_EQ(s.ldlp.size(), 80U);
}

TEST(SplitCorpus, Errors) {
  EXPECT_EQ(error_of([] { split_corpus(10, {0.5, 0.2, 0.2}, 1); }), "split ratios must sum to 1");
  EXPECT_EQ(error_of([] { split_corpus(10, {1.2, -0.2, 0}, 1); }), "split ratios must be non-negative");
  EXPECT_EQ(error_of([] { split_corpus(0, {1, 0, 0}, 1); }), "too few documents");
  EXPECT_EQ(error_of([] { split_corpus(2, {0.7, 0.1, 0.2}, 1); }), "too few documents");
}

TEST(Workspace, MissingArtifactNamesStage) {
  const auto dir = fresh_dir("ws");
  Config cfg = parse_config(small_config());
  const Workspace ws(dir, cfg);
  write(dir / "corpus.txt", story_corpus(40, 1));
  try {
    stage_train_draft(cfg, ws);
    FAIL() << "expected MissingArtifact";
  } catch (const MissingArtifact& e) {
    EXPECT_EQ(e.stage(), "train-lm");
    EXPECT_NE(std::string(e.what()).find("train-lm"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Cli, ExitCodesAndMessages) {
  const auto dir = fresh_dir("cli");
  write(dir / "bad.conf", "seed = 1\nwindow = 3\n");
  auto r = run_cli("train-lm -w \"" + dir.string() + "\" -c \"" + (dir / "bad.conf").string() + "\"", dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("config line 2"), std::string::npos) << r.output;

  write(dir / "ok.conf", small_config());
  write(dir / "corpus.txt", story_corpus(40, 1));
  r = run_cli("bench -w \"" + dir.string() + "\" -c \"" + (dir / "ok.conf").string() + "\"", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("train-lm"), std::string::npos) << r.output;

  r = run_cli("gen-corpus periodic --unit xyz --length 30 --docs 2 -o \"" + (dir / "p.txt").string() + "\"", dir);
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(read_text_file((dir / "p.txt").string()), periodic_corpus("xyz", 30, 2));
  fs::remove_all(dir);
}

TEST(Pipeline, SmallRunEndToEnd) {
  const auto dir = fresh_dir("pipe");
  write(dir / "corpus.txt", story_corpus(120, 5));
  write(dir / "run.conf", small_config());
  const Config cfg = load_config((dir / "run.conf").string());
  const Workspace ws(dir, cfg);
  const BenchResult b = run_pipeline(cfg, ws);
  EXPECT_EQ(b.methods.size(), 10U);
  EXPECT_EQ(b.prompts.size(), 6U);
  const std::string results = read_text_file(ws.artifact(artifact::results));
  EXPECT_EQ(std::count(results.begin(), results.end(), '\n'), 11);
  EXPECT_EQ(results.substr(0, results.find('\n')),
            "method,draft_len,tau,tok_s,T_total,T_draft,T_target,N_draft,N_target,N_waste");
  const std::string sweep = read_text_file(ws.artifact(artifact::sweep));
  EXPECT_EQ(sweep.substr(0, sweep.find('\n')), "metric,-0.2,-0.4,-0.6,-0.8,-1");
  for (const char* f : {artifact::ablation, artifact::histogram, artifact::summary, artifact::probe}) {
    EXPECT_TRUE(fs::exists(ws.artifact(f))) << f;
  }
  // The oracle wastes nothing.
  EXPECT_EQ(b.methods[6].method, "Oracle");
  EXPECT_EQ(b.methods[6].report.N_waste, 0);

  // The CLI reads the same artifacts.
  const auto r = run_cli("report -w \"" + dir.string() + "\" -c \"" + (dir / "run.conf").string() + "\"", dir);
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("| Oracle |"), std::string::npos);
  const auto d = run_cli("decode -w \"" + dir.string() + "\" -c \"" + (dir / "run.conf").string() +
                             "\" -p \"The cat\" --policy combined --trace \"" + (dir / "t.jsonl").string() + "\"",
                         dir);
  EXPECT_EQ(d.code, 0) << d.output;
  EXPECT_TRUE(fs::exists(dir / "t.jsonl"));
  fs::remove_all(dir);
}
