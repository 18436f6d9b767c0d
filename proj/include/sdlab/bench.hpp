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

#pragma once

// Experiment harness: key=value configuration, workspace artifacts, the
// pipeline stages behind the CLI, and the benchmark with its sweeps and
// ablations.

#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "sdlab/corpus.hpp"
#include "sdlab/ldlp.hpp"
#include "sdlab/metrics.hpp"
#include "sdlab/oracle.hpp"
#include "sdlab/parallel.hpp"
#include "sdlab/serialize.hpp"
#include "sdlab/specdec.hpp"
#include "sdlab/toylm.hpp"

namespace sdlab {

// ---------------------------------------------------------------- config

struct Config {
  std::string corpus = "data/sample_corpus.txt";
  std::string artifacts = "run";
  std::uint64_t seed = 20240917;
  std::array<double, 3> split{0.7, 0.1, 0.2};
  int prompt_len = 32;
  int max_tokens = 128;
  int max_eval_prompts = 0;  // 0 = all
  int threads = 1;

  LmDims lm_dims;
  TrainConfig lm_train{0.1, 3, 32, 0, Schedule::cosine};
  TrainConfig draft_train{0.1, 3, 32, 0, Schedule::cosine};
  double draft_alpha = 1.0;

  int n_out = 128;
  int k_max_data = 10;
  TrainConfig ldlp_train{0.01, 30, 128, 0, Schedule::cosine};
  double ldlp_lambda = 2.0;
  // Reference values from the original recipe; kept for the record only.
  double ldlp_ref_lr = 5e-5;
  int ldlp_ref_batch = 128;
  int ldlp_ref_epochs = 5;

  int ldlp_k_max = 8;
  double ddd_theta = -0.6;
  int ddd_k_max = 8;
  int oracle_k_max = 10;
  std::vector<int> fixed_lengths{2, 3, 4, 5, 6};
  std::vector<double> sweep_thetas{-0.2, -0.4, -0.6, -0.8, -1.0};
  CostModel cost;

  int probe_positions = 2000;
  int probe_max_gap = 8;

  // Stage seeds all derive from the master seed.
  [[nodiscard]] std::uint64_t stage_seed(std::uint64_t stage) const { return seed * 1000003ULL + stage; }
};

class ConfigError : public Error {
 public:
  ConfigError(int line, const std::string& msg)
      : Error("config line " + std::to_string(line) + ": " + msg) {}
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& v, int line) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError(line, "bad number '" + v + "'");
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& v, int line) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(trim(item), line));
  if (out.empty()) throw ConfigError(line, "empty list");
  return out;
}

}  // namespace detail

/// Parses `key = value` lines. '#' starts a comment; blank lines are ignored.
/// Unknown keys are errors so typos do not silently fall back to defaults.
inline Config parse_config(std::string_view text) {
  using detail::parse_list;
  using detail::parse_number;
  Config c;
  int line_no = 0;
  std::map<std::string, std::function<void(const std::string&, int)>> setters;
  auto num = [&](auto& field) {
    return [&field](const std::string& v, int ln) {
      field = parse_number<std::remove_reference_t<decltype(field)>>(v, ln);
    };
  };
  setters["corpus"] = [&](const std::string& v, int) { c.corpus = v; };
  setters["artifacts"] = [&](const std::string& v, int) { c.artifacts = v; };
  setters["seed"] = num(c.seed);
  setters["split"] = [&](const std::string& v, int ln) {
    const auto r = parse_list<double>(v, ln);
    if (r.size() != 3) throw ConfigError(ln, "split needs three ratios");
    c.split = {r[0], r[1], r[2]};
  };
  setters["prompt_len"] = num(c.prompt_len);
  setters["max_tokens"] = num(c.max_tokens);
  setters["max_eval_prompts"] = num(c.max_eval_prompts);
  setters["threads"] = num(c.threads);
  setters["lm.window"] = num(c.lm_dims.window);
  setters["lm.embed"] = num(c.lm_dims.embed);
  setters["lm.feature"] = num(c.lm_dims.feature);
  auto train_keys = [&](const std::string& prefix, TrainConfig& t) {
    setters[prefix + ".lr"] = num(t.learning_rate);
    setters[prefix + ".epochs"] = num(t.epochs);
    setters[prefix + ".batch"] = num(t.batch_size);
    setters[prefix + ".schedule"] = [&t](const std::string& v, int ln) {
      try {
        t.schedule = parse_schedule(v);
      } catch (const Error& e) {
        throw ConfigError(ln, e.what());
      }
    };
  };
  train_keys("lm", c.lm_train);
  train_keys("draft", c.draft_train);
  train_keys("ldlp", c.ldlp_train);
  setters["draft.alpha"] = num(c.draft_alpha);
  setters["collect.n_out"] = num(c.n_out);
  setters["collect.k_max_data"] = num(c.k_max_data);
  setters["ldlp.lambda"] = num(c.ldlp_lambda);
  setters["ldlp.ref_lr"] = num(c.ldlp_ref_lr);
  setters["ldlp.ref_batch"] = num(c.ldlp_ref_batch);
  setters["ldlp.ref_epochs"] = num(c.ldlp_ref_epochs);
  setters["ldlp.k_max"] = num(c.ldlp_k_max);
  setters["ddd.theta"] = num(c.ddd_theta);
  setters["ddd.k_max"] = num(c.ddd_k_max);
  setters["oracle.k_max"] = num(c.oracle_k_max);
  setters["fixed.lengths"] = [&](const std::string& v, int ln) { c.fixed_lengths = parse_list<int>(v, ln); };
  setters["sweep.thetas"] = [&](const std::string& v, int ln) { c.sweep_thetas = parse_list<double>(v, ln); };
  setters["cost.c_target"] = num(c.cost.c_target);
  setters["cost.c_draft"] = num(c.cost.c_draft);
  setters["cost.c_policy"] = num(c.cost.c_policy);
  setters["probe.positions"] = num(c.probe_positions);
  setters["probe.max_gap"] = num(c.probe_max_gap);

  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view raw = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string line = detail::trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(line_no, "expected key = value");
    const std::string key = detail::trim(std::string_view(line).substr(0, eq));
    const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
    if (value.empty()) throw ConfigError(line_no, "missing value for '" + key + "'");
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(line_no, "unknown key '" + key + "'");
    it->second(value, line_no);
  }

  try {
    c.lm_dims.vocab = 1;
    c.lm_dims.validate();
    c.lm_dims.vocab = 0;
    c.lm_train.validate();
    c.draft_train.validate();
    c.ldlp_train.validate();
    c.cost.validate();
  } catch (const Error& e) {
    throw Error(std::string("invalid config: ") + e.what());
  }
  if (c.prompt_len < 1 || c.max_tokens < 1) throw Error("invalid config: prompt_len and max_tokens must be positive");
  if (c.ldlp_lambda < 1.0) throw Error("invalid config: ldlp.lambda must be >= 1");
  if (c.n_out < 1 || c.k_max_data < 1) throw Error("invalid config: collect sizes must be positive");
  return c;
}

inline Config load_config(const std::string& path) { return parse_config(read_text_file(path)); }

// ---------------------------------------------------------------- workspace

class MissingArtifact : public Error {
 public:
  MissingArtifact(const std::string& path, const std::string& stage)
      : Error("missing artifact " + path + " (run the '" + stage + "' stage first)"), stage_(stage) {}
  [[nodiscard]] const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct Workspace {
  std::filesystem::path root;
  std::filesystem::path out;

  Workspace(const std::filesystem::path& workspace, const Config& cfg)
      : root(workspace), out(resolve(cfg.artifacts)) {}

  [[nodiscard]] std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : root / path;
  }
  [[nodiscard]] std::string artifact(const std::string& name) const { return (out / name).string(); }
  [[nodiscard]] std::string require(const std::string& name, const std::string& stage) const {
    const auto p = artifact(name);
    if (!std::filesystem::exists(p)) throw MissingArtifact(p, stage);
    return p;
  }
  void ensure_out() const { std::filesystem::create_directories(out); }
  void write_text(const std::string& name, const std::string& text) const {
    ensure_out();
    std::ofstream os(artifact(name), std::ios::binary);
    if (!os) throw Error("cannot write " + artifact(name));
    os << text;
  }
};

namespace artifact {
inline constexpr const char* vocab = "vocab.txt";
inline constexpr const char* lm = "lm.bin";
inline constexpr const char* draft = "draft.bin";
inline constexpr const char* dataset = "ldlp_data.bin";
inline constexpr const char* heldout = "ldlp_heldout.bin";
inline constexpr const char* ldlp = "ldlp.bin";
inline constexpr const char* ldlp_nopenalty = "ldlp_nopenalty.bin";
inline constexpr const char* ldlp_classification = "ldlp_classification.bin";
inline constexpr const char* results = "results.csv";
inline constexpr const char* sweep = "threshold_sweep.csv";
inline constexpr const char* ablation = "ablation.csv";
inline constexpr const char* histogram = "length_hist.csv";
inline constexpr const char* summary = "summary.md";
inline constexpr const char* probe = "probe.csv";
}  // namespace artifact

// ---------------------------------------------------------------- corpus

struct CorpusData {
  Vocab vocab;
  std::vector<TokenSeq> docs;
  CorpusSplit split;

  [[nodiscard]] std::vector<TokenSeq> train_docs() const { return pick(docs, split.train); }
  [[nodiscard]] std::vector<TokenSeq> ldlp_prompts(const Config& c) const {
    return make_prompts(pick(docs, split.ldlp), static_cast<std::size_t>(c.prompt_len));
  }
  [[nodiscard]] std::vector<TokenSeq> eval_prompts(const Config& c) const {
    auto p = make_prompts(pick(docs, split.eval), static_cast<std::size_t>(c.prompt_len));
    if (c.max_eval_prompts > 0 && p.size() > static_cast<std::size_t>(c.max_eval_prompts)) {
      p.resize(static_cast<std::size_t>(c.max_eval_prompts));
    }
    return p;
  }
};

/// Reads and splits the corpus. The vocabulary comes from the stored
/// vocab.txt when present so that later stages agree with train-lm.
inline CorpusData load_corpus(const Config& cfg, const Workspace& ws, bool use_stored_vocab) {
  const auto path = ws.resolve(cfg.corpus).string();
  if (!std::filesystem::exists(path)) throw Error("corpus not found: " + path);
  const auto texts = split_documents(read_text_file(path));
  CorpusData c;
  c.vocab = use_stored_vocab ? Vocab::load(ws.require(artifact::vocab, "train-lm")) : corpus_vocab(texts);
  c.docs = encode_documents(c.vocab, texts);
  c.split = split_corpus(c.docs.size(), cfg.split, cfg.stage_seed(0));
  return c;
}

struct Models {
  Vocab vocab;
  std::shared_ptr<const TargetLM> lm;
  std::shared_ptr<const DraftHead> draft;
};

inline std::shared_ptr<const TargetLM> load_lm(const Workspace& ws) {
  const auto p = ws.require(artifact::lm, "train-lm");
  return std::make_shared<const TargetLM>(read_file(p, [](std::istream& is) { return read_target(is); }));
}

inline Models load_models(const Workspace& ws) {
  Models m;
  m.vocab = Vocab::load(ws.require(artifact::vocab, "train-lm"));
  m.lm = load_lm(ws);
  if (m.lm->dims.vocab != m.vocab.size()) throw Error("vocab.txt does not match lm.bin");
  const auto p = ws.require(artifact::draft, "train-draft");
  m.draft = std::make_shared<const DraftHead>(
      read_file(p, [&](std::istream& is) { return read_draft(is, m.lm); }));
  return m;
}

inline std::shared_ptr<const LdlpModel> load_ldlp_model(const Workspace& ws, const std::string& name) {
  const auto p = ws.require(name, "train-ldlp");
  return std::make_shared<const LdlpModel>(read_file(p, [](std::istream& is) { return read_ldlp(is); }));
}

inline std::vector<LdlpSample> load_dataset(const Workspace& ws, const std::string& name) {
  const auto p = ws.require(name, "collect");
  return read_file(p, [](std::istream& is) { return read_dataset(is); });
}

// ---------------------------------------------------------------- stages

using Log = std::function<void(const std::string&)>;

inline void quiet(const std::string&) {}

inline std::string fmt_loss(const TrainStats& s) {
  return fmt("%.4f", s.initial_loss) + " -> " + fmt("%.4f", s.final_loss);
}

inline void stage_train_lm(const Config& cfg, const Workspace& ws, const Log& log = quiet) {
  const auto corpus = load_corpus(cfg, ws, false);
  LmDims dims = cfg.lm_dims;
  dims.vocab = corpus.vocab.size();
  TrainConfig tc = cfg.lm_train;
  tc.seed = cfg.stage_seed(1);
  TrainStats st;
  const auto lm = train_lm(corpus.train_docs(), dims, tc, &st);
  ws.ensure_out();
  corpus.vocab.save(ws.artifact(artifact::vocab));
  write_file(ws.artifact(artifact::lm), [&](std::ostream& os) { write_target(os, lm); });
  log("train-lm: V=" + std::to_string(dims.vocab) + ", " + std::to_string(corpus.split.train.size()) +
      " train docs, loss " + fmt_loss(st));
}

inline void stage_train_draft(const Config& cfg, const Workspace& ws, const Log& log = quiet) {
  const auto lm = load_lm(ws);
  const auto corpus = load_corpus(cfg, ws, true);
  const auto docs = corpus.train_docs();
  DraftTrainConfig dc{cfg.draft_train, cfg.draft_alpha};
  dc.sgd.seed = cfg.stage_seed(2);
  TrainStats st;
  const auto dh = train_draft(docs, lm, dc, &st);
  write_file(ws.artifact(artifact::draft), [&](std::ostream& os) { write_draft(os, dh); });
  log("train-draft: loss " + fmt_loss(st) + ", one-step agreement on eval docs " +
      fmt("%.3f", draft_agreement(dh, pick(corpus.docs, corpus.split.eval))));
}

inline CollectOptions collect_options(const Config& cfg, const Vocab& vocab) {
  CollectOptions co;
  co.n_out = cfg.n_out;
  co.k_max_data = cfg.k_max_data;
  co.terminator = vocab.terminator();
  co.threads = cfg.threads;
  return co;
}

inline void stage_collect(const Config& cfg, const Workspace& ws, const Log& log = quiet) {
  const auto m = load_models(ws);
  const auto corpus = load_corpus(cfg, ws, true);
  const auto co = collect_options(cfg, m.vocab);
  const auto train = collect_dataset(*m.draft, corpus.ldlp_prompts(cfg), co);
  const auto held = collect_dataset(*m.draft, corpus.eval_prompts(cfg), co);
  write_file(ws.artifact(artifact::dataset), [&](std::ostream& os) { write_dataset(os, train); });
  write_file(ws.artifact(artifact::heldout), [&](std::ostream& os) { write_dataset(os, held); });
  log("collect: " + std::to_string(train.size()) + " training samples, " + std::to_string(held.size()) +
      " held-out samples");
}

struct LdlpVariant {
  HeadKind head = HeadKind::regression;
  bool penalty = true;

  [[nodiscard]] std::string file() const {
    if (head == HeadKind::classification) return artifact::ldlp_classification;
    return penalty ? artifact::ldlp : artifact::ldlp_nopenalty;
  }
};

inline LdlpTrainConfig ldlp_config(const Config& cfg, const LdlpVariant& v) {
  LdlpTrainConfig lc;
  lc.sgd = cfg.ldlp_train;
  lc.sgd.seed = cfg.stage_seed(3);
  lc.lambda = v.penalty ? cfg.ldlp_lambda : 1.0;
  lc.head = v.head;
  lc.k_max_data = cfg.k_max_data;
  return lc;
}

inline LdlpModel stage_train_ldlp(const Config& cfg, const Workspace& ws, const LdlpVariant& v,
                                  const Log& log = quiet) {
  const auto data = load_dataset(ws, artifact::dataset);
  TrainStats st;
  auto model = train_ldlp(data, ldlp_config(cfg, v), &st);
  write_file(ws.artifact(v.file()), [&](std::ostream& os) { write_ldlp(os, model); });
  std::string msg = "train-ldlp (" + v.file() + "): loss " + fmt_loss(st);
  const auto held_path = ws.artifact(artifact::heldout);
  if (std::filesystem::exists(held_path)) {
    const auto held = load_dataset(ws, artifact::heldout);
    if (!held.empty()) {
      const auto [c, c_mae] = best_constant_mae(held, cfg.k_max_data);
      msg += ", held-out MAE " + fmt("%.4f", ldlp_mae(model, held, cfg.k_max_data)) +
             " (best constant " + std::to_string(c) + ": " + fmt("%.4f", c_mae) + ")";
    }
  }
  log(msg);
  return model;
}

inline std::shared_ptr<const LdlpModel> ldlp_or_train(const Config& cfg, const Workspace& ws,
                                                      const LdlpVariant& v, const Log& log) {
  if (std::filesystem::exists(ws.artifact(v.file()))) return load_ldlp_model(ws, v.file());
  return std::make_shared<const LdlpModel>(stage_train_ldlp(cfg, ws, v, log));
}

// ---------------------------------------------------------------- bench

struct MethodRun {
  std::string method;
  std::string draft_len;
  LengthPolicy policy;
  std::vector<DecodeResult> per_prompt;
  RunReport report;
};

struct BenchResult {
  std::vector<TokenSeq> prompts;
  std::vector<DecodeResult> reference;  // vanilla AR
  std::vector<MethodRun> methods;       // main table, AR first
  std::vector<MethodRun> sweep;         // combined policy per threshold
  std::vector<MethodRun> ablations;     // lambda=2, lambda=1, classification
  std::vector<double> ablation_mean_raw;
  std::vector<double> ablation_mae;
  std::pair<int, double> best_constant{0, 0.0};
  std::string results_csv, sweep_csv, ablation_csv, histogram_csv, summary_md;
};

class LosslessnessError : public Error {
 public:
  using Error::Error;
};

/// Runs one policy over every prompt and checks each output against the
/// vanilla AR reference before any metric is computed.
inline MethodRun run_method(const Config& cfg, const Models& m, std::string method, std::string draft_len,
                            LengthPolicy policy, const std::vector<TokenSeq>& prompts,
                            const std::vector<DecodeResult>& reference) {
  MethodRun run{std::move(method), std::move(draft_len), std::move(policy), {}, {}};
  run.per_prompt.resize(prompts.size());
  DecodeOptions opt;
  opt.max_tokens = cfg.max_tokens;
  opt.terminator = m.vocab.terminator();
  const Rng base(cfg.stage_seed(5));
  parallel_for(prompts.size(), cfg.threads, [&](std::size_t i) {
    Rng rng = base.fork(i);
    run.per_prompt[i] = decode(*m.draft, run.policy, prompts[i], opt, rng);
  });
  std::vector<RunReport> reports;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (run.per_prompt[i].output != reference[i].output) {
      throw LosslessnessError("losslessness gate failed: " + run.method + " on eval prompt " +
                              std::to_string(i));
    }
    reports.push_back(compute_metrics(run.per_prompt[i], cfg.cost));
  }
  run.report = aggregate(reports);
  return run;
}

inline double mean_raw_prediction(const LdlpModel& model, std::span<const LdlpSample> samples) {
  double sum = 0.0;
  for (const auto& s : samples) sum += ldlp_forward(model, s.e, s.f);
  return samples.empty() ? 0.0 : sum / static_cast<double>(samples.size());
}

inline std::string theta_label(double t) { return fmt("%g", t); }

inline BenchResult stage_bench(const Config& cfg, const Workspace& ws, const Log& log = quiet) {
  const auto m = load_models(ws);
  const auto corpus = load_corpus(cfg, ws, true);
  const auto ldlp_main = load_ldlp_model(ws, artifact::ldlp);
  const auto held = load_dataset(ws, artifact::heldout);
  const auto train_data = load_dataset(ws, artifact::dataset);

  BenchResult b;
  b.prompts = corpus.eval_prompts(cfg);
  if (b.prompts.empty()) throw Error("no eval prompts");
  DecodeOptions opt;
  opt.max_tokens = cfg.max_tokens;
  opt.terminator = m.vocab.terminator();
  b.reference.resize(b.prompts.size());
  const Rng base(cfg.stage_seed(5));
  parallel_for(b.prompts.size(), cfg.threads, [&](std::size_t i) {
    Rng rng = base.fork(i);
    b.reference[i] = vanilla_ar(*m.lm, b.prompts[i], opt, rng);
  });
  {
    MethodRun ar{"Vanilla AR", "-", FixedLen{1}, b.reference, {}};
    std::vector<RunReport> reports;
    for (const auto& r : b.reference) reports.push_back(compute_metrics(r, cfg.cost));
    ar.report = aggregate(reports);
    b.methods.push_back(std::move(ar));
  }
  auto add = [&](std::vector<MethodRun>& into, std::string name, std::string len, LengthPolicy p) {
    into.push_back(run_method(cfg, m, std::move(name), std::move(len), std::move(p), b.prompts, b.reference));
    log("bench: " + into.back().method + " tau " + fmt("%.3f", into.back().report.tau));
  };
  for (int k : cfg.fixed_lengths) add(b.methods, "Fixed", std::to_string(k), FixedLen{k});
  add(b.methods, "Oracle", "adaptive", OracleLen{cfg.oracle_k_max});
  add(b.methods, "DDD", "adaptive", DddLen{cfg.ddd_theta, cfg.ddd_k_max});
  add(b.methods, "LDLP", "adaptive", LdlpLen{ldlp_main, cfg.ldlp_k_max});
  add(b.methods, "LDLP+DDD", "adaptive", CombinedLen{ldlp_main, cfg.ddd_theta, cfg.ldlp_k_max});

  for (double t : cfg.sweep_thetas) {
    add(b.sweep, "LDLP+DDD theta=" + theta_label(t), "adaptive", CombinedLen{ldlp_main, t, cfg.ldlp_k_max});
  }

  const std::array<std::pair<LdlpVariant, std::string>, 3> variants{{
      {{HeadKind::regression, true}, "LDLP lambda=" + theta_label(cfg.ldlp_lambda)},
      {{HeadKind::regression, false}, "LDLP lambda=1 (no penalty)"},
      {{HeadKind::classification, true}, "LDLP classification head"},
  }};
  for (const auto& [v, name] : variants) {
    const auto model = v.file() == artifact::ldlp ? ldlp_main : ldlp_or_train(cfg, ws, v, log);
    add(b.ablations, name, "adaptive", LdlpLen{model, cfg.ldlp_k_max});
    b.ablation_mean_raw.push_back(mean_raw_prediction(*model, train_data));
    b.ablation_mae.push_back(held.empty() ? 0.0 : ldlp_mae(*model, held, cfg.k_max_data));
  }
  if (!held.empty()) b.best_constant = best_constant_mae(held, cfg.k_max_data);

  // Main table.
  std::vector<MethodRow> rows;
  for (const auto& r : b.methods) rows.push_back({r.method, r.draft_len, r.report});
  b.results_csv = report_csv(rows);

  // Threshold sweep: one column per threshold.
  b.sweep_csv = "metric";
  for (double t : cfg.sweep_thetas) b.sweep_csv += ',' + theta_label(t);
  b.sweep_csv += "\ntok_s";
  for (const auto& r : b.sweep) b.sweep_csv += ',' + fmt("%.4f", r.report.tok_s_model);
  b.sweep_csv += "\ntau";
  for (const auto& r : b.sweep) b.sweep_csv += ',' + fmt("%.4f", r.report.tau);
  b.sweep_csv += '\n';

  b.ablation_csv = "method,tau,tok_s,N_draft,N_target,N_waste,mean_raw_pred,heldout_mae\n";
  for (std::size_t i = 0; i < b.ablations.size(); ++i) {
    const auto& r = b.ablations[i].report;
    b.ablation_csv += b.ablations[i].method + ',' + fmt("%.4f", r.tau) + ',' + fmt("%.4f", r.tok_s_model) +
                      ',' + std::to_string(r.N_draft) + ',' + std::to_string(r.N_target) + ',' +
                      std::to_string(r.N_waste) + ',' + fmt("%.4f", b.ablation_mean_raw[i]) + ',' +
                      fmt("%.4f", b.ablation_mae[i]) + '\n';
  }

  // Realized draft lengths of each ablation model over the eval decodes.
  const int kmax = cfg.ldlp_k_max;
  std::vector<std::vector<long>> hist(b.ablations.size(), std::vector<long>(static_cast<std::size_t>(kmax + 1)));
  for (std::size_t a = 0; a < b.ablations.size(); ++a) {
    for (const auto& res : b.ablations[a].per_prompt) {
      for (const auto& t : res.traces) {
        if (t.predicted_len) ++hist[a][static_cast<std::size_t>(*t.predicted_len)];
      }
    }
  }
  b.histogram_csv = "length,lambda_" + theta_label(cfg.ldlp_lambda) + ",lambda_1,classification\n";
  for (int k = 0; k <= kmax; ++k) {
    b.histogram_csv += std::to_string(k);
    for (const auto& h : hist) b.histogram_csv += ',' + std::to_string(h[static_cast<std::size_t>(k)]);
    b.histogram_csv += '\n';
  }

  std::string md = "# Benchmark summary\n\n";
  md += std::to_string(b.prompts.size()) + " eval prompts of up to " + std::to_string(cfg.prompt_len) +
        " tokens, budget " + std::to_string(cfg.max_tokens) + " tokens, greedy decoding. Every row " +
        "matched the vanilla AR output token for token.\n\n";
  md += "Modeled cost: target pass " + fmt("%g", cfg.cost.c_target) + ", draft step " +
        fmt("%g", cfg.cost.c_draft) + ", length query " + fmt("%g", cfg.cost.c_policy) + ".\n\n";
  md += "## Methods\n\n" + report_markdown(rows);
  std::vector<MethodRow> sweep_rows;
  for (const auto& r : b.sweep) sweep_rows.push_back({r.method, r.draft_len, r.report});
  md += "\n## Threshold sweep (LDLP+DDD)\n\n" + report_markdown(sweep_rows);
  std::vector<MethodRow> abl_rows;
  for (const auto& r : b.ablations) abl_rows.push_back({r.method, r.draft_len, r.report});
  md += "\n## Ablations\n\n" + report_markdown(abl_rows) + "\n| model | mean raw prediction | held-out MAE |\n|---|---|---|\n";
  for (std::size_t i = 0; i < b.ablations.size(); ++i) {
    md += "| " + b.ablations[i].method + " | " + fmt("%.4f", b.ablation_mean_raw[i]) + " | " +
          fmt("%.4f", b.ablation_mae[i]) + " |\n";
  }
  md += "| best constant (" + std::to_string(b.best_constant.first) + ") | - | " +
        fmt("%.4f", b.best_constant.second) + " |\n";
  b.summary_md = md;

  ws.write_text(artifact::results, b.results_csv);
  ws.write_text(artifact::sweep, b.sweep_csv);
  ws.write_text(artifact::ablation, b.ablation_csv);
  ws.write_text(artifact::histogram, b.histogram_csv);
  ws.write_text(artifact::summary, b.summary_md);
  return b;
}

inline ProbeReport stage_probe(const Config& cfg, const Workspace& ws, const Log& log = quiet) {
  const auto m = load_models(ws);
  const auto corpus = load_corpus(cfg, ws, true);
  ProbeOptions po;
  po.n_positions = cfg.probe_positions;
  po.max_gap = cfg.probe_max_gap;
  po.terminator = m.vocab.terminator();
  Rng rng(cfg.stage_seed(4));
  const auto prompts = corpus.eval_prompts(cfg);
  const auto rep = assumption1_probe(*m.draft, prompts, po, rng);
  ws.write_text(artifact::probe, rep.to_csv());
  log("probe: " + std::to_string(rep.triples) + " triples, more history not worse in " +
      fmt("%.3f", rep.monotone_fraction()));
  return rep;
}

/// Renders the CSV outputs in the workspace as Markdown tables.
inline std::string stage_report(const Config& cfg, const Workspace& ws) {
  (void)cfg;
  auto table = [](const std::string& csv) {
    std::stringstream ss(csv);
    std::string line;
    std::string out;
    bool header = true;
    while (std::getline(ss, line)) {
      if (line.empty()) continue;
      std::string row = "|";
      std::size_t cols = 0;
      std::stringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) {
        row += ' ' + cell + " |";
        ++cols;
      }
      out += row + '\n';
      if (header) {
        out += '|';
        for (std::size_t i = 0; i < cols; ++i) out += "---|";
        out += '\n';
        header = false;
      }
    }
    return out;
  };
  std::string md = "# Results\n\n## Methods\n\n" + table(read_text_file(ws.require(artifact::results, "bench")));
  const std::array<std::pair<const char*, const char*>, 4> extra{{
      {artifact::sweep, "Threshold sweep"},
      {artifact::ablation, "Ablations"},
      {artifact::histogram, "Draft length histogram"},
      {artifact::probe, "History probe"},
  }};
  for (const auto& [file, title] : extra) {
    const auto p = ws.artifact(file);
    if (std::filesystem::exists(p)) md += std::string("\n## ") + title + "\n\n" + table(read_text_file(p));
  }
  return md;
}

inline BenchResult run_pipeline(const Config& cfg, const Workspace& ws, const Log& log = quiet) {
  stage_train_lm(cfg, ws, log);
  stage_train_draft(cfg, ws, log);
  stage_collect(cfg, ws, log);
  stage_train_ldlp(cfg, ws, {HeadKind::regression, true}, log);
  stage_train_ldlp(cfg, ws, {HeadKind::regression, false}, log);
  stage_train_ldlp(cfg, ws, {HeadKind::classification, true}, log);
  auto b = stage_bench(cfg, ws, log);
  stage_probe(cfg, ws, log);
  return b;
}

}  // namespace sdlab
