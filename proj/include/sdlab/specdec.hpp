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

// Draft/verify decoding engine.
//
// Each iteration verifies the current draft with one batched target pass,
// appends the validated prefix plus the bonus token, asks the length policy
// how far to draft next, and drafts from (bonus token, feature of the last
// validated token). The prompt minus its last token is processed once up
// front so the first iteration already has a seed feature; that pass is not a
// verification and is not counted as a target call.

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sdlab/draft_oracle.hpp"
#include "sdlab/ldlp.hpp"
#include "sdlab/toylm.hpp"

namespace sdlab {

struct FixedLen {
  int k = 4;
};
struct OracleLen {
  int k_max = 10;
};
struct LdlpLen {
  std::shared_ptr<const LdlpModel> model;
  int k_max = 8;
};
struct DddLen {
  double theta = -0.6;  // log-probability threshold
  int k_max = 8;
};
struct CombinedLen {
  std::shared_ptr<const LdlpModel> model;
  double theta = -0.6;
  int k_max = 8;
};

using LengthPolicy = std::variant<FixedLen, OracleLen, LdlpLen, DddLen, CombinedLen>;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

inline std::string policy_label(const LengthPolicy& policy) {
  return std::visit(
      overloaded{
          [](const FixedLen& p) { return "FixedLen(" + std::to_string(p.k) + ")"; },
          [](const OracleLen&) { return std::string("Oracle"); },
          [](const LdlpLen&) { return std::string("LDLP"); },
          [](const DddLen&) { return std::string("DDD"); },
          [](const CombinedLen&) { return std::string("LDLP+DDD"); },
      },
      policy);
}

inline void validate_policy(const LengthPolicy& policy, const LmDims& dims) {
  auto check_model = [&](const std::shared_ptr<const LdlpModel>& m) {
    if (!m) throw Error("LDLP policy without a model");
    if (m->embed != dims.embed || m->feature != dims.feature) {
      throw Error("LDLP model dims do not match the target model");
    }
  };
  std::visit(overloaded{
                 [](const FixedLen& p) {
                   if (p.k < 1) throw Error("FixedLen needs k >= 1");
                 },
                 [](const OracleLen& p) {
                   if (p.k_max < 1) throw Error("Oracle needs k_max >= 1");
                 },
                 [&](const LdlpLen& p) {
                   check_model(p.model);
                   if (p.k_max < 1) throw Error("LDLP needs k_max >= 1");
                 },
                 [](const DddLen& p) {
                   if (p.k_max < 1) throw Error("DDD needs k_max >= 1");
                   if (p.theta > 0.0) throw Error("DDD threshold is a log-probability (<= 0)");
                 },
                 [&](const CombinedLen& p) {
                   check_model(p.model);
                   if (p.k_max < 1) throw Error("combined policy needs k_max >= 1");
                   if (p.theta > 0.0) throw Error("DDD threshold is a log-probability (<= 0)");
                 },
             },
             policy);
}

struct IterationTrace {
  int iter = 0;
  int start = 0;  // output length when this iteration's draft was made
  int drafted = 0;
  int accepted = 0;
  bool bonus_emitted = false;
  std::optional<int> predicted_len;
  std::optional<int> ddd_exit_step;  // length the threshold rule alone would draft
  std::optional<double> cum_logprob_exit;
};

struct PhaseTimes {
  double draft = 0.0;
  double target = 0.0;
  double policy = 0.0;
  double total = 0.0;
};

struct DecodeResult {
  TokenSeq output;
  std::vector<IterationTrace> traces;
  PhaseTimes wall;
  int target_calls = 0;
  int policy_calls = 0;
};

struct DecodeOptions {
  int max_tokens = 128;
  DecodeMode mode = DecodeMode::greedy;
  std::optional<TokenId> terminator;
};

inline double accept_prob(double p, double p_hat) {
  if (!(p_hat > 0.0)) throw Error("draft probability must be positive");
  if (p < 0.0) throw Error("negative target probability");
  return std::min(1.0, p / p_hat);
}

inline bool ddd_continue(double cum_logprob, double theta, int step, int k_max) {
  return cum_logprob > theta && step < k_max;
}

// Stops only once the predicted length is reached and the threshold rule
// would stop too.
inline bool combined_continue(int step, int k_pred, double cum_logprob, double theta, int k_max) {
  if (step >= k_max) return false;
  return !(step >= k_pred && !(cum_logprob > theta));
}

struct Verification {
  int accepted = 0;
  std::optional<TokenId> next;  // bonus (all accepted) or resampled token; empty after a terminator
  Eigen::VectorXd feature;      // target feature at the last validated position
};

/// Greedy verification: accept the longest draft prefix matching the target
/// argmax; the next token is the target argmax after it.
inline Verification verify_greedy(const TargetLM& lm, std::span<const TokenId> prefix,
                                  std::span<const TokenId> draft,
                                  std::optional<TokenId> terminator = std::nullopt) {
  if (prefix.empty()) throw Error("verification needs a non-empty prefix");
  TokenSeq seq(prefix.begin(), prefix.end());
  seq.insert(seq.end(), draft.begin(), draft.end());
  const auto fw = target_forward_range(lm, seq, prefix.size() - 1, draft.size() + 1);
  Verification v;
  for (std::size_t i = 0; i < draft.size(); ++i) {
    if (argmax(fw[i].dist) != draft[i]) break;
    ++v.accepted;
    if (terminator && draft[i] == *terminator) {
      v.feature = fw[i + 1].feature;
      return v;
    }
  }
  const auto& at = fw[static_cast<std::size_t>(v.accepted)];
  v.next = argmax(at.dist);
  v.feature = at.feature;
  return v;
}

struct StochasticOutcome {
  int accepted = 0;
  std::optional<TokenId> next;
};

/// Rejection-sampling verification over explicit distributions.
/// `target[i]` is the target distribution at draft position i (size k + 1,
/// the last entry is the bonus position); `draft_dists[i]` produced draft[i].
inline StochasticOutcome verify_stochastic_dists(std::span<const Dist> target,
                                                 std::span<const TokenId> draft,
                                                 std::span<const Dist> draft_dists, Rng& rng,
                                                 std::optional<TokenId> terminator = std::nullopt) {
  if (draft_dists.size() != draft.size() || target.size() != draft.size() + 1) {
    throw Error("verify_stochastic: size mismatch");
  }
  StochasticOutcome out;
  for (std::size_t i = 0; i < draft.size(); ++i) {
    const TokenId t = draft[i];
    const double a = accept_prob(target[i][t], draft_dists[i][t]);
    if (rng.uniform() < a) {
      ++out.accepted;
      if (terminator && t == *terminator) return out;
      continue;
    }
    out.next = sample(residual_dist(target[i], draft_dists[i]), rng);
    return out;
  }
  out.next = sample(target[draft.size()], rng);
  return out;
}

inline Verification verify_stochastic(const TargetLM& lm, std::span<const TokenId> prefix,
                                      std::span<const TokenId> draft,
                                      std::span<const Dist> draft_dists, Rng& rng,
                                      std::optional<TokenId> terminator = std::nullopt) {
  if (prefix.empty()) throw Error("verification needs a non-empty prefix");
  TokenSeq seq(prefix.begin(), prefix.end());
  seq.insert(seq.end(), draft.begin(), draft.end());
  const auto fw = target_forward_range(lm, seq, prefix.size() - 1, draft.size() + 1);
  std::vector<Dist> target;
  target.reserve(fw.size());
  for (const auto& f : fw) target.push_back(f.dist);
  const auto outcome = verify_stochastic_dists(target, draft, draft_dists, rng, terminator);
  Verification v;
  v.accepted = outcome.accepted;
  v.next = outcome.next;
  v.feature = fw[std::min<std::size_t>(static_cast<std::size_t>(outcome.accepted), draft.size())].feature;
  return v;
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct DraftPlan {
  DraftOutput draft;
  std::optional<int> predicted_len;
  std::optional<int> ddd_exit_step;
  std::optional<double> cum_logprob_exit;
  bool policy_queried = false;
};

inline DraftPlan plan_draft(const DraftHead& dh, const LengthPolicy& policy,
                            std::span<const TokenId> formal, const Eigen::VectorXd& feature,
                            const DecodeOptions& opt, Rng& rng, PhaseTimes& wall) {
  const TargetLM& lm = *dh.target;
  DraftPlan plan;
  const TokenId last_validated = formal[formal.size() - 2];

  // Up-front length, when the policy has one.
  std::optional<int> length;
  int k_pred = 0;
  auto t0 = Clock::now();
  std::visit(overloaded{
                 [&](const FixedLen& p) { length = p.k; },
                 [&](const OracleLen& p) {
                   length = opt_k(dh, formal, feature, p.k_max, opt.terminator);
                 },
                 [&](const LdlpLen& p) {
                   k_pred = predict_length(*p.model, lm.embedding.row(last_validated).transpose(),
                                           feature, p.k_max);
                   length = k_pred;
                   plan.predicted_len = k_pred;
                   plan.policy_queried = true;
                 },
                 [&](const DddLen&) {},
                 [&](const CombinedLen& p) {
                   k_pred = predict_length(*p.model, lm.embedding.row(last_validated).transpose(),
                                           feature, p.k_max);
                   plan.predicted_len = k_pred;
                   plan.policy_queried = true;
                 },
             },
             policy);
  wall.policy += seconds_since(t0);

  t0 = Clock::now();
  DraftCursor cursor(dh, formal.back(), feature);
  double cum = 0.0;
  int step = 0;
  std::optional<int> threshold_exit;
  auto keep_going = [&]() {
    return std::visit(overloaded{
                          [&](const DddLen& p) { return ddd_continue(cum, p.theta, step, p.k_max); },
                          [&](const CombinedLen& p) {
                            return combined_continue(step, k_pred, cum, p.theta, p.k_max);
                          },
                          [&](const auto&) { return step < *length; },
                      },
                      policy);
  };
  auto theta_of = [&]() -> std::optional<std::pair<double, int>> {
    if (auto* p = std::get_if<DddLen>(&policy)) return std::pair{p->theta, p->k_max};
    if (auto* p = std::get_if<CombinedLen>(&policy)) return std::pair{p->theta, p->k_max};
    return std::nullopt;
  };
  const auto threshold = theta_of();
  if (threshold && !(cum > threshold->first)) threshold_exit = 0;
  while (keep_going()) {
    auto s = cursor.next(opt.mode, &rng);
    cum += std::log(s.dist[s.token]);
    ++step;
    plan.draft.tokens.push_back(s.token);
    plan.draft.dists.push_back(std::move(s.dist));
    plan.draft.features.push_back(std::move(s.feature));
    if (threshold && !threshold_exit && !ddd_continue(cum, threshold->first, step, threshold->second)) {
      threshold_exit = step;
    }
  }
  if (threshold) {
    plan.ddd_exit_step = threshold_exit.value_or(threshold->second);
    plan.cum_logprob_exit = cum;
  }
  wall.draft += seconds_since(t0);
  return plan;
}

}  // namespace detail

/// Draft/verify decoding with a pluggable draft-length policy. In greedy mode
/// the output equals greedy_continuation(prompt, max_tokens).
inline DecodeResult decode(const DraftHead& dh, const LengthPolicy& policy,
                           std::span<const TokenId> prompt, const DecodeOptions& opt, Rng& rng) {
  const TargetLM& lm = *dh.target;
  validate_policy(policy, lm.dims);
  if (prompt.empty()) throw Error("empty prompt");
  if (opt.max_tokens < 1) throw Error("max_tokens must be at least 1");
  check_tokens(prompt, lm.dims.vocab);
  if (opt.mode == DecodeMode::stochastic && std::holds_alternative<OracleLen>(policy)) {
    throw Error("the draft-length oracle is defined for greedy decoding only");
  }

  const auto t_start = detail::Clock::now();
  DecodeResult res;
  TokenSeq formal(prompt.begin(), prompt.end());
  std::optional<Eigen::VectorXd> feature;
  if (prompt.size() >= 2) {
    const auto t0 = detail::Clock::now();
    feature = target_forward_range(lm, formal, prompt.size() - 2, 1)[0].feature;
    res.wall.target += detail::seconds_since(t0);
  }

  const auto budget = static_cast<std::size_t>(opt.max_tokens);
  bool terminated = false;
  for (int iter = 0; res.output.size() < budget && !terminated; ++iter) {
    IterationTrace trace;
    trace.iter = iter;
    trace.start = static_cast<int>(res.output.size());

    detail::DraftPlan plan;
    if (feature) {
      plan = detail::plan_draft(dh, policy, formal, *feature, opt, rng, res.wall);
      res.policy_calls += plan.policy_queried;
    }
    const auto& draft = plan.draft.tokens;

    const auto t0 = detail::Clock::now();
    const Verification v =
        opt.mode == DecodeMode::greedy
            ? verify_greedy(lm, formal, draft, opt.terminator)
            : verify_stochastic(lm, formal, draft, plan.draft.dists, rng, opt.terminator);
    res.wall.target += detail::seconds_since(t0);
    ++res.target_calls;

    trace.drafted = static_cast<int>(draft.size());
    trace.accepted = v.accepted;
    trace.bonus_emitted = v.next.has_value();
    trace.predicted_len = plan.predicted_len;
    trace.ddd_exit_step = plan.ddd_exit_step;
    trace.cum_logprob_exit = plan.cum_logprob_exit;
    res.traces.push_back(trace);

    auto emit = [&](TokenId t) {
      if (res.output.size() >= budget || terminated) return;
      res.output.push_back(t);
      formal.push_back(t);
      if (opt.terminator && t == *opt.terminator) terminated = true;
    };
    for (int i = 0; i < v.accepted; ++i) emit(draft[static_cast<std::size_t>(i)]);
    if (v.next) emit(*v.next);
    if (!v.next) terminated = true;
    feature = v.feature;
  }
  res.wall.total = detail::seconds_since(t_start);
  return res;
}

/// One target forward per emitted token.
inline DecodeResult vanilla_ar(const TargetLM& lm, std::span<const TokenId> prompt,
                               const DecodeOptions& opt, Rng& rng) {
  if (prompt.empty()) throw Error("empty prompt");
  if (opt.max_tokens < 1) throw Error("max_tokens must be at least 1");
  check_tokens(prompt, lm.dims.vocab);
  const auto t_start = detail::Clock::now();
  DecodeResult res;
  TokenSeq formal(prompt.begin(), prompt.end());
  for (int iter = 0; iter < opt.max_tokens; ++iter) {
    const auto t0 = detail::Clock::now();
    const Forward fw = target_forward(lm, formal);
    res.wall.target += detail::seconds_since(t0);
    ++res.target_calls;
    const TokenId t = opt.mode == DecodeMode::greedy ? argmax(fw.dist) : sample(fw.dist, rng);
    IterationTrace trace;
    trace.iter = iter;
    trace.start = static_cast<int>(res.output.size());
    trace.bonus_emitted = true;
    res.traces.push_back(trace);
    res.output.push_back(t);
    formal.push_back(t);
    if (opt.terminator && t == *opt.terminator) break;
  }
  res.wall.total = detail::seconds_since(t_start);
  return res;
}

inline nlohmann::json trace_to_json(const IterationTrace& t) {
  nlohmann::json j;
  j["iter"] = t.iter;
  j["drafted"] = t.drafted;
  j["accepted"] = t.accepted;
  j["bonus"] = t.bonus_emitted;
  j["predicted_len"] = t.predicted_len ? nlohmann::json(*t.predicted_len) : nlohmann::json(nullptr);
  j["cum_logprob_exit"] =
      t.cum_logprob_exit ? nlohmann::json(*t.cum_logprob_exit) : nlohmann::json(nullptr);
  return j;
}

/// One JSON object per line, fields {iter, drafted, accepted, bonus,
/// predicted_len, cum_logprob_exit}.
inline std::string traces_to_jsonl(std::span<const IterationTrace> traces) {
  std::string out;
  for (const auto& t : traces) {
    out += trace_to_json(t).dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace sdlab
