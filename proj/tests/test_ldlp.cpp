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

#include <sstream>

#include "gradcheck.hpp"
#include "sdlab/specdec.hpp"
#include "test_support.hpp"

using namespace sdlab;
using fixtures::periodic;
using fixtures::stories;

namespace {

LdlpSample sample_of(int de, int df, int label, Rng& rng) {
  LdlpSample s;
  s.e = Eigen::VectorXd(de);
  s.f = Eigen::VectorXd(df);
  for (Eigen::Index i = 0; i < de; ++i) s.e(i) = rng.normal();
  for (Eigen::Index i = 0; i < df; ++i) s.f(i) = std::tanh(rng.normal());
  s.label = label;
  return s;
}

double mean_raw(const LdlpModel& m, std::span<const LdlpSample> samples) {
  double sum = 0.0;
  for (const auto& s : samples) sum += ldlp_forward(m, s.e, s.f);
  return sum / static_cast<double>(samples.size());
}

}  // namespace

TEST(LdlpForward, ZeroModelPredictsZero) {
  const LdlpModel m = LdlpModel::zeros(3, 4, HeadKind::regression, 1);
  EXPECT_EQ(ldlp_forward(m, Eigen::VectorXd::Ones(3), Eigen::VectorXd::Ones(4)), 0.0);
  EXPECT_EQ(predict_length(m, Eigen::VectorXd::Ones(3), Eigen::VectorXd::Ones(4), 8), 0);
  const LdlpModel c = LdlpModel::zeros(3, 4, HeadKind::classification, 6);
  // All logits tie: lowest class wins.
  EXPECT_EQ(ldlp_forward(c, Eigen::VectorXd::Ones(3), Eigen::VectorXd::Ones(4)), 0.0);
}

TEST(LdlpForward, DeterministicAndDimensionChecked) {
  const LdlpModel m = LdlpModel::init(3, 4, HeadKind::regression, 1, 8);
  Rng rng(2);
  const auto s = sample_of(3, 4, 0, rng);
  EXPECT_EQ(ldlp_forward(m, s.e, s.f), ldlp_forward(m, s.e, s.f));
  EXPECT_TRUE(m == LdlpModel::init(3, 4, HeadKind::regression, 1, 8));
  EXPECT_THROW(ldlp_forward(m, Eigen::VectorXd::Ones(2), s.f), Error);
  EXPECT_THROW(LdlpModel::zeros(0, 4, HeadKind::regression, 1), Error);
}

TEST(Rounding, HalfAwayFromZero) {
  EXPECT_EQ(round_half_away(2.5), 3);
  EXPECT_EQ(round_half_away(2.49), 2);
  EXPECT_EQ(round_half_away(-2.5), -3);
  EXPECT_EQ(round_half_away(0.5), 1);
}

TEST(Rounding, ClampLength) {
  EXPECT_EQ(clamp_length(-3.7, 8), 0);
  EXPECT_EQ(clamp_length(3.5, 8), 4);
  EXPECT_EQ(clamp_length(11.2, 8), 8);
  EXPECT_EQ(clamp_length(0.49, 8), 0);
}

TEST(PredictLength, RejectsBadKMax) {
  const LdlpModel m = LdlpModel::zeros(2, 2, HeadKind::regression, 1);
  EXPECT_THROW(predict_length(m, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2), 0), Error);
}

TEST(PenalizedL1, Examples) {
  EXPECT_DOUBLE_EQ(penalized_l1(2.0, 5, 2.0), 6.0);
  EXPECT_DOUBLE_EQ(penalized_l1(7.0, 5, 2.0), 2.0);
  EXPECT_DOUBLE_EQ(penalized_l1(5.0, 5, 2.0), 0.0);
  EXPECT_DOUBLE_EQ(penalized_l1(2.0, 5, 1.0), 3.0);
}

TEST(PenalizedL1, AsymmetryAndLambdaOne) {
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const int y = static_cast<int>(rng.below(11));
    const double d = 0.01 + 3.0 * rng.uniform();
    const double lambda = 1.0 + 3.0 * rng.uniform();
    // Under-prediction costs lambda times as much as over-prediction.
    EXPECT_NEAR(penalized_l1(y - d, y, lambda), lambda * penalized_l1(y + d, y, lambda), 1e-12);
    EXPECT_NEAR(penalized_l1(y - d, y, 1.0), d, 1e-12);
  }
}

TEST(LcpLen, Examples) {
  EXPECT_EQ(lcp_len(TokenSeq{1, 2, 3}, TokenSeq{1, 2, 4}), 2U);
  EXPECT_EQ(lcp_len(TokenSeq{1, 2}, TokenSeq{1, 2, 4}), 2U);
  EXPECT_EQ(lcp_len(TokenSeq{}, TokenSeq{1}), 0U);
  EXPECT_EQ(lcp_len(TokenSeq{5}, TokenSeq{1}), 0U);
}

TEST(GradientCheck, LdlpRegression) {
  for (const auto& [name, err] : fixtures::ldlp_gradient_errors(HeadKind::regression)) EXPECT_LE(err, 1e-4) << name;
}

TEST(GradientCheck, LdlpClassification) {
  for (const auto& [name, err] : fixtures::ldlp_gradient_errors(HeadKind::classification)) {
    EXPECT_LE(err, 1e-4) << name;
  }
}

TEST(Collect, PeriodicMirrorLabelsAreKMax) {
  const auto& t = periodic();
  const TokenSeq prompt = t.vocab.encode("abcab");
  const auto samples = collect_prompt(*t.draft, prompt, {20, 6, t.term(), 1});
  ASSERT_EQ(samples.size(), 20U);
  for (const auto& s : samples) EXPECT_EQ(s.label, 6);
}

TEST(Collect, SizesBoundsAndFeatures) {
  const auto& t = stories();
  const auto prompts = fixtures::story_prompts(4);
  const CollectOptions opt{30, 8, t.term(), 1};
  const auto samples = collect_dataset(*t.draft, prompts, opt);
  EXPECT_LE(samples.size(), 120U);
  EXPECT_GT(samples.size(), 0U);
  for (const auto& s : samples) {
    EXPECT_GE(s.label, 0);
    EXPECT_LE(s.label, 8);
    EXPECT_EQ(s.e.size(), t.lm->dims.embed);
    EXPECT_EQ(s.f.size(), t.lm->dims.feature);
  }
  // The first sample of a prompt pairs the embedding of prompt[P-2] with the
  // feature at that position.
  const auto first = collect_prompt(*t.draft, prompts[0], opt);
  const auto& p = prompts[0];
  EXPECT_EQ(first[0].e, t.lm->embedding.row(p[p.size() - 2]).transpose());
  EXPECT_EQ(first[0].f, target_forward(*t.lm, std::span(p).first(p.size() - 1)).feature);
  EXPECT_THROW(collect_dataset(*t.draft, prompts, {0, 8, t.term(), 1}), Error);
}

TEST(Collect, ZeroDraftHeadGivesMostlyZeroLabels) {
  const auto& t = stories();
  const DraftHead zero = DraftHead::zeros(t.lm);
  const auto samples = collect_dataset(zero, fixtures::story_prompts(4), {40, 8, t.term(), 1});
  long zeros = 0;
  for (const auto& s : samples) zeros += s.label == 0;
  EXPECT_GT(static_cast<double>(zeros) / static_cast<double>(samples.size()), 0.7);
}

TEST(Collect, LabelEqualsGreedyAcceptanceLength) {
  const auto& t = stories();
  const CollectOptions opt{40, 10, t.term(), 1};
  for (const auto& prompt : fixtures::story_prompts(5)) {
    const auto samples = collect_prompt(*t.draft, prompt, opt);
    TokenSeq full = prompt;
    const auto cont = greedy_continuation(*t.lm, prompt, opt.n_out + opt.k_max_data, t.term());
    full.insert(full.end(), cont.begin(), cont.end());
    for (std::size_t c = 0; c < samples.size(); ++c) {
      const std::span<const TokenId> formal(full.data(), prompt.size() + c);
      const auto draft = draft_autoregress(*t.draft, formal.back(), samples[c].f, opt.k_max_data);
      const auto v = verify_greedy(*t.lm, formal, draft.tokens, t.term());
      ASSERT_EQ(samples[c].label, v.accepted) << "cut " << c;
    }
  }
}

TEST(TrainLdlp, OverfitsConstantLabel) {
  Rng rng(3);
  std::vector<LdlpSample> samples;
  for (int i = 0; i < 64; ++i) samples.push_back(sample_of(3, 4, 3, rng));
  LdlpTrainConfig cfg;
  cfg.sgd = {0.02, 200, 16, 5, Schedule::cosine};
  const LdlpModel m = train_ldlp(samples, cfg);
  for (const auto& s : samples) EXPECT_EQ(predict_length(m, s.e, s.f, 10), 3);
  EXPECT_EQ(ldlp_mae(m, samples, 10), 0.0);
}

TEST(TrainLdlp, PenaltyRaisesPredictions) {
  // Labels 1 or 5 with no signal in the input: the lambda = 1 optimum is the
  // median, lambda = 2 shifts the optimum upward.
  Rng rng(4);
  std::vector<LdlpSample> samples;
  for (int i = 0; i < 200; ++i) samples.push_back(sample_of(3, 4, rng.uniform() < 0.5 ? 1 : 5, rng));
  LdlpTrainConfig cfg;
  cfg.sgd = {0.01, 60, 32, 9, Schedule::cosine};
  cfg.lambda = 2.0;
  const LdlpModel m2 = train_ldlp(samples, cfg);
  cfg.lambda = 1.0;
  const LdlpModel m1 = train_ldlp(samples, cfg);
  EXPECT_GE(mean_raw(m2, samples), mean_raw(m1, samples));
}

TEST(TrainLdlp, ZeroEpochsDeterminismAndErrors) {
  Rng rng(5);
  std::vector<LdlpSample> samples;
  for (int i = 0; i < 20; ++i) samples.push_back(sample_of(2, 3, static_cast<int>(rng.below(4)), rng));
  LdlpTrainConfig cfg;
  cfg.sgd = {0.01, 0, 8, 3, Schedule::cosine};
  EXPECT_TRUE(train_ldlp(samples, cfg) == LdlpModel::init(2, 3, HeadKind::regression, 1, 3 ^ 0x1D1FULL));
  cfg.sgd.epochs = 3;
  EXPECT_TRUE(train_ldlp(samples, cfg) == train_ldlp(samples, cfg));
  cfg.head = HeadKind::classification;
  cfg.k_max_data = 4;
  const LdlpModel c = train_ldlp(samples, cfg);
  EXPECT_EQ(c.outputs(), 5);
  EXPECT_THROW(train_ldlp(std::vector<LdlpSample>{}, cfg), Error);
}

TEST(Mae, BestConstant) {
  std::vector<LdlpSample> samples(5);
  const int labels[] = {1, 2, 2, 3, 9};
  for (int i = 0; i < 5; ++i) samples[static_cast<std::size_t>(i)].label = labels[i];
  const auto [c, mae] = best_constant_mae(samples, 10);
  EXPECT_EQ(c, 2);
  EXPECT_DOUBLE_EQ(mae, (1 + 0 + 0 + 1 + 7) / 5.0);
  EXPECT_THROW(best_constant_mae(std::vector<LdlpSample>{}, 10), Error);
}

TEST(Serialize, LdlpModelAndDatasetRoundTrip) {
  for (HeadKind head : {HeadKind::regression, HeadKind::classification}) {
    const LdlpModel m = LdlpModel::init(3, 4, head, head == HeadKind::regression ? 1 : 6, 12);
    std::stringstream ss;
    write_ldlp(ss, m);
    EXPECT_TRUE(read_ldlp(ss) == m);
  }
  Rng rng(7);
  std::vector<LdlpSample> samples;
  for (int i = 0; i < 7; ++i) samples.push_back(sample_of(3, 4, i, rng));
  std::stringstream ds;
  write_dataset(ds, samples);
  const auto back = read_dataset(ds);
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].e, samples[i].e);
    EXPECT_EQ(back[i].f, samples[i].f);
    EXPECT_EQ(back[i].label, samples[i].label);
  }
  std::stringstream bad("LDLP2xxxx");
  EXPECT_THROW(read_dataset(bad), Error);
}
