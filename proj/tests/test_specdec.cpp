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

#include <json.hpp>
#include <sstream>

#include "sdlab/specdec.hpp"
#include "stochastic_check.hpp"
#include "test_support.hpp"

using namespace sdlab;
using fixtures::periodic;
using fixtures::stories;

namespace {

std::shared_ptr<const LdlpModel> constant_ldlp(const TargetLM& lm, double value) {
  auto m = LdlpModel::zeros(lm.dims.embed, lm.dims.feature, HeadKind::regression, 1);
  m.out_b(0) = value;
  return std::make_shared<const LdlpModel>(std::move(m));
}

std::vector<LengthPolicy> all_policies(const TargetLM& lm) {
  return {FixedLen{1},
          FixedLen{3},
          FixedLen{6},
          OracleLen{10},
          LdlpLen{constant_ldlp(lm, 3.4), 8},
          DddLen{-0.6, 8},
          DddLen{-0.05, 8},
          CombinedLen{constant_ldlp(lm, 1.6), -0.6, 8}};
}

}  // namespace

TEST(AcceptProb, Examples) {
  EXPECT_DOUBLE_EQ(accept_prob(0.3, 0.6), 0.5);
  EXPECT_DOUBLE_EQ(accept_prob(0.6, 0.3), 1.0);
  EXPECT_DOUBLE_EQ(accept_prob(0.0, 0.4), 0.0);
  EXPECT_THROW(accept_prob(0.5, 0.0), Error);
}

TEST(DddContinue, Examples) {
  EXPECT_TRUE(ddd_continue(-0.1, -0.6, 1, 8));
  EXPECT_FALSE(ddd_continue(-0.7, -0.6, 1, 8));
  EXPECT_FALSE(ddd_continue(-0.6, -0.6, 1, 8));
  EXPECT_FALSE(ddd_continue(-0.1, -0.6, 8, 8));
  EXPECT_TRUE(ddd_continue(0.0, -0.6, 0, 8));
}

TEST(CombinedContinue, Examples) {
  // Keep drafting below the predicted length regardless of confidence.
  EXPECT_TRUE(combined_continue(1, 3, -5.0, -0.6, 8));
  // Past the prediction, continue only while still confident.
  EXPECT_TRUE(combined_continue(3, 3, -0.1, -0.6, 8));
  EXPECT_FALSE(combined_continue(3, 3, -0.7, -0.6, 8));
  EXPECT_FALSE(combined_continue(8, 10, 0.0, -0.6, 8));
}

TEST(CombinedContinue, LengthIdentityOnCumulativeTraces) {
  // For any non-increasing cumulative log-prob path the combined length is
  // min(k_max, max(k_pred, ddd length)).
  Rng rng(41);
  for (int trial = 0; trial < 2000; ++trial) {
    const int k_max = 1 + static_cast<int>(rng.below(10));
    const int k_pred = static_cast<int>(rng.below(12));
    const double theta = -rng.uniform();
    std::vector<double> cum{0.0};
    for (int i = 0; i < k_max; ++i) cum.push_back(cum.back() + std::log(0.05 + 0.95 * rng.uniform()));
    int ddd = 0;
    while (ddd_continue(cum[static_cast<std::size_t>(ddd)], theta, ddd, k_max)) ++ddd;
    int comb = 0;
    while (combined_continue(comb, k_pred, cum[static_cast<std::size_t>(comb)], theta, k_max)) ++comb;
    ASSERT_EQ(comb, std::min(k_max, std::max(k_pred, ddd)));
  }
}

TEST(VerifyGreedy, AcceptsMatchingPrefixAndAddsNextToken) {
  const auto& t = stories();
  const TokenSeq prefix(t.held[0].begin(), t.held[0].begin() + 16);
  const TokenSeq greedy = greedy_continuation(*t.lm, prefix, 6);
  // Full match: all accepted, next is the 6th greedy token.
  TokenSeq draft(greedy.begin(), greedy.begin() + 5);
  auto v = verify_greedy(*t.lm, prefix, draft);
  EXPECT_EQ(v.accepted, 5);
  EXPECT_EQ(v.next, greedy[5]);
  // Corrupt position 2: accept 2, the correction is greedy[2].
  draft[2] = static_cast<TokenId>((draft[2] + 1) % t.vocab.size());
  v = verify_greedy(*t.lm, prefix, draft);
  EXPECT_EQ(v.accepted, 2);
  EXPECT_EQ(v.next, greedy[2]);
  // Empty draft: plain AR step.
  v = verify_greedy(*t.lm, prefix, TokenSeq{});
  EXPECT_EQ(v.accepted, 0);
  EXPECT_EQ(v.next, greedy[0]);
  EXPECT_THROW(verify_greedy(*t.lm, TokenSeq{}, draft), Error);
}

TEST(VerifyGreedy, FeatureIsAtLastValidatedPosition) {
  const auto& t = stories();
  const TokenSeq prefix(t.held[0].begin(), t.held[0].begin() + 16);
  const TokenSeq greedy = greedy_continuation(*t.lm, prefix, 3);
  const auto v = verify_greedy(*t.lm, prefix, TokenSeq(greedy.begin(), greedy.begin() + 2));
  TokenSeq seq = prefix;
  seq.insert(seq.end(), greedy.begin(), greedy.begin() + 2);
  EXPECT_EQ(v.feature, target_forward(*t.lm, seq).feature);
}

TEST(VerifyGreedy, StopsOnAcceptedTerminator) {
  TargetLM lm = TargetLM::zeros({2, 2, 2, 4});
  lm.head_b(3) = 4.0;  // argmax is always 3
  const auto v = verify_greedy(lm, TokenSeq{0}, TokenSeq{3, 3, 3}, TokenId{3});
  EXPECT_EQ(v.accepted, 1);
  EXPECT_FALSE(v.next.has_value());
}

TEST(VerifyStochastic, Examples) {
  Rng rng(1);
  const std::vector<Dist> target{Dist({1.0, 0.0}), Dist({0.0, 1.0})};
  const std::vector<Dist> same{Dist({1.0, 0.0})};
  auto out = verify_stochastic_dists(target, TokenSeq{0}, same, rng);
  EXPECT_EQ(out.accepted, 1);
  EXPECT_EQ(out.next, 1);
  // Draft token has zero target mass: always rejected, resampled from the residual.
  const std::vector<Dist> wrong{Dist({0.0, 1.0})};
  out = verify_stochastic_dists(target, TokenSeq{1}, wrong, rng);
  EXPECT_EQ(out.accepted, 0);
  EXPECT_EQ(out.next, 0);
  EXPECT_THROW(verify_stochastic_dists(target, TokenSeq{0, 1}, same, rng), Error);
}

TEST(VerifyStochastic, AnalyticEmissionMatchesTargetChain) {
  EXPECT_LE(fixtures::analytic_emission_error_sweep(), 1e-12);
}

TEST(VerifyStochastic, EmpiricalChiSquare) {
  const auto r = fixtures::empirical_emission_test(3, 2, 100000, 2718);
  EXPECT_EQ(r.impossible_hits, 0);
  EXPECT_GT(r.p_value, 0.01) << "chi2=" << r.statistic << " dof=" << r.dof;
}

TEST(Decode, GreedyLosslessForEveryPolicy) {
  const auto& t = stories();
  const auto prompts = fixtures::story_prompts(8);
  DecodeOptions opt{64, DecodeMode::greedy, t.term()};
  for (const auto& prompt : prompts) {
    const TokenSeq want = greedy_continuation(*t.lm, prompt, opt.max_tokens, t.term());
    for (const auto& policy : all_policies(*t.lm)) {
      Rng rng(3);
      const auto res = decode(*t.draft, policy, prompt, opt, rng);
      ASSERT_EQ(res.output, want) << policy_label(policy);
      EXPECT_EQ(res.target_calls, static_cast<int>(res.traces.size()));
    }
  }
}

TEST(Decode, MaxTokensOneAndPromptLengthOne) {
  const auto& t = stories();
  const TokenSeq prompt(t.held[3].begin(), t.held[3].begin() + 10);
  Rng rng(1);
  auto res = decode(*t.draft, FixedLen{4}, prompt, {1, DecodeMode::greedy, t.term()}, rng);
  EXPECT_EQ(res.output, greedy_continuation(*t.lm, prompt, 1));
  const TokenSeq one{t.held[3][0]};
  res = decode(*t.draft, FixedLen{4}, one, {20, DecodeMode::greedy, t.term()}, rng);
  EXPECT_EQ(res.output, greedy_continuation(*t.lm, one, 20, t.term()));
  // No feature exists before the first verification, so nothing is drafted.
  EXPECT_EQ(res.traces.front().drafted, 0);
}

TEST(Decode, PeriodicMirrorAcceptsEverything) {
  const auto& t = periodic();
  const TokenSeq prompt = t.vocab.encode("abcabcab");
  for (int k = 1; k <= 5; ++k) {
    Rng rng(0);
    const int iters = 6;
    const auto res = decode(*t.draft, FixedLen{k}, prompt, {iters * (k + 1), DecodeMode::greedy, t.term()}, rng);
    ASSERT_EQ(static_cast<int>(res.traces.size()), iters) << "k=" << k;
    for (const auto& tr : res.traces) {
      EXPECT_EQ(tr.accepted, k);
      EXPECT_TRUE(tr.bonus_emitted);
    }
    EXPECT_EQ(static_cast<double>(res.output.size()) / static_cast<double>(res.target_calls), k + 1.0);
  }
}

TEST(Decode, Errors) {
  const auto& t = stories();
  Rng rng(1);
  const TokenSeq prompt{0, 1};
  EXPECT_THROW(decode(*t.draft, FixedLen{0}, prompt, {}, rng), Error);
  EXPECT_THROW(decode(*t.draft, FixedLen{2}, TokenSeq{}, {}, rng), Error);
  EXPECT_THROW(decode(*t.draft, FixedLen{2}, prompt, {0, DecodeMode::greedy, std::nullopt}, rng), Error);
  EXPECT_THROW(decode(*t.draft, DddLen{0.5, 8}, prompt, {}, rng), Error);
  EXPECT_THROW(decode(*t.draft, LdlpLen{nullptr, 8}, prompt, {}, rng), Error);
  EXPECT_THROW(decode(*t.draft, OracleLen{10}, prompt, {16, DecodeMode::stochastic, std::nullopt}, rng), Error);
  EXPECT_THROW(decode(*t.draft, FixedLen{2}, TokenSeq{0, t.vocab.size()}, {}, rng), Error);
}

TEST(Decode, StochasticIsSeedDeterministic) {
  const auto& t = stories();
  const auto prompt = fixtures::story_prompts(1)[0];
  const DecodeOptions opt{48, DecodeMode::stochastic, t.term()};
  Rng a(77);
  Rng b(77);
  const auto ra = decode(*t.draft, DddLen{-0.6, 6}, prompt, opt, a);
  const auto rb = decode(*t.draft, DddLen{-0.6, 6}, prompt, opt, b);
  EXPECT_EQ(ra.output, rb.output);
  Rng c(78);
  const auto rc = vanilla_ar(*t.lm, prompt, opt, c);
  EXPECT_FALSE(rc.output.empty());
}

TEST(VanillaAr, OneCallPerToken) {
  const auto& t = stories();
  const auto prompt = fixtures::story_prompts(1)[0];
  Rng rng(1);
  const auto res = vanilla_ar(*t.lm, prompt, {40, DecodeMode::greedy, t.term()}, rng);
  EXPECT_EQ(res.output, greedy_continuation(*t.lm, prompt, 40, t.term()));
  EXPECT_EQ(res.target_calls, static_cast<int>(res.output.size()));
  for (const auto& tr : res.traces) EXPECT_EQ(tr.drafted, 0);
}

TEST(Decode, FixedLenDraftsExactlyKPerCall) {
  const auto& t = stories();
  for (const auto& prompt : fixtures::story_prompts(5)) {
    for (int k = 2; k <= 6; ++k) {
      Rng rng(1);
      const auto res = decode(*t.draft, FixedLen{k}, prompt, {64, DecodeMode::greedy, t.term()}, rng);
      long drafted = 0;
      for (const auto& tr : res.traces) drafted += tr.drafted;
      EXPECT_EQ(drafted, static_cast<long>(k) * res.target_calls);
    }
  }
}

TEST(Decode, CombinedLengthIdentityOnLoggedIterations) {
  const auto& t = stories();
  for (double value : {0.0, 1.4, 2.6, 5.0}) {
    const CombinedLen policy{constant_ldlp(*t.lm, value), -0.4, 7};
    for (const auto& prompt : fixtures::story_prompts(6)) {
      Rng rng(1);
      const auto res = decode(*t.draft, policy, prompt, {64, DecodeMode::greedy, t.term()}, rng);
      for (const auto& tr : res.traces) {
        if (!tr.predicted_len) continue;
        ASSERT_TRUE(tr.ddd_exit_step.has_value());
        EXPECT_EQ(tr.drafted, std::min(7, std::max(*tr.predicted_len, *tr.ddd_exit_step)));
      }
    }
  }
}

TEST(Decode, DddLengthNonIncreasingInTheta) {
  const auto& t = stories();
  const std::vector<double> thetas{-0.2, -0.4, -0.6, -0.8, -1.0};
  for (const auto& doc : std::span(t.held).first(6)) {
    const auto fw = target_forward_batch(*t.lm, doc);
    for (std::size_t pos = 2; pos + 1 < doc.size(); pos += 7) {
      const std::span<const TokenId> formal(doc.data(), pos + 1);
      int prev = -1;
      for (double theta : thetas) {
        Rng rng(1);
        PhaseTimes wall;
        const auto plan = detail::plan_draft(*t.draft, DddLen{theta, 8}, formal, fw[pos - 1].feature,
                                             DecodeOptions{}, rng, wall);
        const int len = static_cast<int>(plan.draft.tokens.size());
        EXPECT_GE(len, prev);
        prev = len;
      }
    }
  }
}

TEST(Traces, JsonlFields) {
  std::vector<IterationTrace> tr(2);
  tr[0].drafted = 3;
  tr[0].accepted = 2;
  tr[0].bonus_emitted = true;
  tr[1].iter = 1;
  tr[1].predicted_len = 4;
  tr[1].cum_logprob_exit = -0.75;
  const std::string s = traces_to_jsonl(tr);
  std::istringstream in(s);
  std::string line;
  std::getline(in, line);
  auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j["iter"], 0);
  EXPECT_EQ(j["drafted"], 3);
  EXPECT_EQ(j["accepted"], 2);
  EXPECT_EQ(j["bonus"], true);
  EXPECT_TRUE(j["predicted_len"].is_null());
  EXPECT_TRUE(j["cum_logprob_exit"].is_null());
  std::getline(in, line);
  j = nlohmann::json::parse(line);
  EXPECT_EQ(j["predicted_len"], 4);
  EXPECT_DOUBLE_EQ(j["cum_logprob_exit"].get<double>(), -0.75);
}
