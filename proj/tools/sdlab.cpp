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

// sdlab command line: pipeline stages, decoding, benchmark and probe.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "sdlab/bench.hpp"

namespace {

using namespace sdlab;

void print(const std::string& s) { std::cerr << s << '\n'; }

struct Common {
  std::string workspace = ".";
  std::string config = "data/default.conf";
  std::string out;
  int threads = 0;

  [[nodiscard]] Config load() const {
    Config c = load_config(config);
    if (threads > 0) c.threads = threads;
    if (!out.empty()) c.artifacts = out;
    return c;
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-w,--workspace", c.workspace, "Directory that relative paths resolve against")
      ->capture_default_str();
  sub->add_option("-c,--config", c.config, "key=value config file")->capture_default_str();
  sub->add_option("-o,--out", c.out, "Artifact directory (overrides the config)");
  sub->add_option("-j,--threads", c.threads, "Worker threads (overrides the config)");
}

LengthPolicy make_policy(const std::string& name, int k, double theta, const Config& cfg,
                         const Workspace& ws) {
  if (name == "fixed") return FixedLen{k};
  if (name == "oracle") return OracleLen{cfg.oracle_k_max};
  if (name == "ddd") return DddLen{theta, cfg.ddd_k_max};
  if (name == "ldlp") return LdlpLen{load_ldlp_model(ws, artifact::ldlp), cfg.ldlp_k_max};
  if (name == "combined") return CombinedLen{load_ldlp_model(ws, artifact::ldlp), theta, cfg.ldlp_k_max};
  throw Error("unknown policy '" + name + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speculative decoding lab with adaptive draft lengths"};
  app.require_subcommand(1);
  Common common;

  auto* train_lm_cmd = app.add_subcommand("train-lm", "Train the target language model");
  auto* train_draft_cmd = app.add_subcommand("train-draft", "Train the draft head on a frozen target");
  auto* collect_cmd = app.add_subcommand("collect", "Collect draft-length training data");
  auto* train_ldlp_cmd = app.add_subcommand("train-ldlp", "Train the draft length predictor");
  auto* decode_cmd = app.add_subcommand("decode", "Decode one prompt and dump per-iteration traces");
  auto* bench_cmd = app.add_subcommand("bench", "Run every method on the eval prompts");
  auto* probe_cmd = app.add_subcommand("probe", "Measure draft agreement against history length");
  auto* report_cmd = app.add_subcommand("report", "Render the CSV results as Markdown");
  auto* pipeline_cmd = app.add_subcommand("pipeline", "Run all stages from training to probe");
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Write a synthetic corpus");
  for (auto* s : {train_lm_cmd, train_draft_cmd, collect_cmd, train_ldlp_cmd, decode_cmd, bench_cmd,
                  probe_cmd, report_cmd, pipeline_cmd}) {
    add_common(s, common);
  }

  std::string head = "regression";
  bool no_penalty = false;
  train_ldlp_cmd->add_option("--head", head, "regression or classification")->capture_default_str();
  train_ldlp_cmd->add_flag("--no-penalty", no_penalty, "Train with lambda = 1");

  std::string prompt_text;
  std::string policy_name = "ldlp";
  std::string mode_name = "greedy";
  std::string trace_path;
  int fixed_k = 4;
  double theta = -0.6;
  std::uint64_t decode_seed = 1;
  int max_tokens = 0;
  decode_cmd->add_option("-p,--prompt", prompt_text, "Prompt text")->required();
  decode_cmd->add_option("--policy", policy_name, "ar, fixed, oracle, ddd, ldlp or combined")
      ->capture_default_str();
  decode_cmd->add_option("-k", fixed_k, "Draft length for the fixed policy")->capture_default_str();
  decode_cmd->add_option("--theta", theta, "Log-probability threshold for ddd/combined")
      ->capture_default_str();
  decode_cmd->add_option("--mode", mode_name, "greedy or stochastic")->capture_default_str();
  decode_cmd->add_option("--seed", decode_seed, "Sampling seed")->capture_default_str();
  decode_cmd->add_option("--max-tokens", max_tokens, "Generation budget (default from config)");
  decode_cmd->add_option("--trace", trace_path, "Write per-iteration JSON lines here");

  std::string gen_kind = "stories";
  std::string gen_out;
  std::size_t gen_docs = 800;
  std::uint64_t gen_seed = 7;
  std::string gen_unit = "ab";
  std::size_t gen_len = 400;
  gen_cmd->add_option("kind", gen_kind, "stories or periodic")->capture_default_str();
  gen_cmd->add_option("-o,--output", gen_out, "Output file")->required();
  gen_cmd->add_option("--docs", gen_docs, "Number of documents")->capture_default_str();
  gen_cmd->add_option("--seed", gen_seed, "Generator seed (stories)")->capture_default_str();
  gen_cmd->add_option("--unit", gen_unit, "Repeated unit (periodic)")->capture_default_str();
  gen_cmd->add_option("--length", gen_len, "Characters per document (periodic)")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) {
      std::string text;
      if (gen_kind == "stories") {
        text = story_corpus(gen_docs, gen_seed);
      } else if (gen_kind == "periodic") {
        text = periodic_corpus(gen_unit, gen_len, gen_docs);
      } else {
        throw Error("unknown corpus kind '" + gen_kind + "'");
      }
      std::ofstream os(gen_out, std::ios::binary);
      if (!os) throw Error("cannot write " + gen_out);
      os << text;
      print("wrote " + std::to_string(text.size()) + " bytes to " + gen_out);
      return 0;
    }

    const Config cfg = common.load();
    const Workspace ws(common.workspace, cfg);

    if (train_lm_cmd->parsed()) stage_train_lm(cfg, ws, print);
    if (train_draft_cmd->parsed()) stage_train_draft(cfg, ws, print);
    if (collect_cmd->parsed()) stage_collect(cfg, ws, print);
    if (train_ldlp_cmd->parsed()) {
      stage_train_ldlp(cfg, ws, {parse_head_kind(head), !no_penalty}, print);
    }
    if (bench_cmd->parsed()) {
      const auto b = stage_bench(cfg, ws, print);
      std::cout << b.summary_md;
    }
    if (probe_cmd->parsed()) std::cout << stage_probe(cfg, ws, print).to_csv();
    if (report_cmd->parsed()) std::cout << stage_report(cfg, ws);
    if (pipeline_cmd->parsed()) {
      const auto b = run_pipeline(cfg, ws, print);
      std::cout << b.summary_md;
    }
    if (decode_cmd->parsed()) {
      const auto m = load_models(ws);
      const auto prompt = m.vocab.encode(prompt_text);
      DecodeOptions opt;
      opt.max_tokens = max_tokens > 0 ? max_tokens : cfg.max_tokens;
      opt.terminator = m.vocab.terminator();
      if (mode_name == "greedy") {
        opt.mode = DecodeMode::greedy;
      } else if (mode_name == "stochastic") {
        opt.mode = DecodeMode::stochastic;
      } else {
        throw Error("unknown mode '" + mode_name + "'");
      }
      Rng rng(decode_seed);
      const DecodeResult res = policy_name == "ar"
                                   ? vanilla_ar(*m.lm, prompt, opt, rng)
                                   : decode(*m.draft, make_policy(policy_name, fixed_k, theta, cfg, ws),
                                            prompt, opt, rng);
      std::string text;
      for (TokenId t : res.output) {
        if (opt.terminator && t == *opt.terminator) break;
        text += m.vocab.decode(std::span<const TokenId>(&t, 1));
      }
      std::cout << text << '\n';
      const auto r = compute_metrics(res, cfg.cost);
      print("tokens " + std::to_string(r.total_tokens) + ", target passes " + std::to_string(r.N_target) +
            ", tau " + fmt("%.3f", r.tau) + ", modeled speedup " + fmt("%.3f", r.speedup));
      if (!trace_path.empty()) {
        std::ofstream os(trace_path, std::ios::binary);
        if (!os) throw Error("cannot write " + trace_path);
        os << traces_to_jsonl(res.traces);
      }
    }
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
