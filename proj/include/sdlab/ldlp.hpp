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

// Lightweight draft length predictor: a residual MLP over the (embedding,
// target feature) pair of the last validated token, its training data
// collection, and the asymmetric L1 objective that prefers over-prediction.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <span>
#include <vector>

#include "sdlab/optim.hpp"
#include "sdlab/parallel.hpp"
#include "sdlab/serialize.hpp"
#include "sdlab/toylm.hpp"

namespace sdlab {

enum class HeadKind { regression, classification };

inline HeadKind parse_head_kind(const std::string& s) {
  if (s == "regression") return HeadKind::regression;
  if (s == "classification") return HeadKind::classification;
  throw Error("unknown head kind '" + s + "'");
}

inline constexpr int kLdlpLayers = 3;

struct LdlpModel {
  int embed = 0;
  int feature = 0;
  HeadKind head = HeadKind::regression;
  std::array<Eigen::MatrixXd, kLdlpLayers> layer_w;  // D x D, D = embed + feature
  std::array<Eigen::VectorXd, kLdlpLayers> layer_b;
  Eigen::MatrixXd out_w;  // outputs x D
  Eigen::VectorXd out_b;

  [[nodiscard]] int input_dim() const { return embed + feature; }
  [[nodiscard]] int outputs() const { return static_cast<int>(out_w.rows()); }

  // `outputs` is 1 for regression and the number of length classes otherwise.
  static LdlpModel zeros(int embed, int feature, HeadKind head, int outputs) {
    if (embed < 1 || feature < 1 || outputs < 1) throw Error("bad LDLP dims");
    if (head == HeadKind::regression && outputs != 1) throw Error("regression LDLP has one output");
    LdlpModel m;
    m.embed = embed;
    m.feature = feature;
    m.head = head;
    const int d = embed + feature;
    for (int l = 0; l < kLdlpLayers; ++l) {
      m.layer_w[static_cast<std::size_t>(l)] = Eigen::MatrixXd::Zero(d, d);
      m.layer_b[static_cast<std::size_t>(l)] = Eigen::VectorXd::Zero(d);
    }
    m.out_w = Eigen::MatrixXd::Zero(outputs, d);
    m.out_b = Eigen::VectorXd::Zero(outputs);
    return m;
  }

  static LdlpModel init(int embed, int feature, HeadKind head, int outputs, std::uint64_t seed) {
    LdlpModel m = zeros(embed, feature, head, outputs);
    Rng rng(seed);
    for (auto& w : m.layer_w) glorot_fill(w, rng);
    glorot_fill(m.out_w, rng);
    return m;
  }

  friend bool operator==(const LdlpModel& a, const LdlpModel& b) {
    if (a.embed != b.embed || a.feature != b.feature || a.head != b.head) return false;
    for (int l = 0; l < kLdlpLayers; ++l) {
      const auto i = static_cast<std::size_t>(l);
      if (a.layer_w[i] != b.layer_w[i] || a.layer_b[i] != b.layer_b[i]) return false;
    }
    return a.out_w == b.out_w && a.out_b == b.out_b;
  }
};

namespace detail {

inline Eigen::VectorXd ldlp_input(const LdlpModel& m, const Eigen::VectorXd& e,
                                  const Eigen::VectorXd& f) {
  if (e.size() != m.embed || f.size() != m.feature) throw Error("LDLP input dimension mismatch");
  Eigen::VectorXd x(m.input_dim());
  x.head(m.embed) = e;
  x.tail(m.feature) = f;
  return x;
}

inline Eigen::VectorXd ldlp_outputs(const LdlpModel& m, Eigen::VectorXd x) {
  for (int l = 0; l < kLdlpLayers; ++l) {
    const auto i = static_cast<std::size_t>(l);
    x += (m.layer_w[i] * x + m.layer_b[i]).array().tanh().matrix();
  }
  return m.out_w * x + m.out_b;
}

}  // namespace detail

/// Raw scalar for the regression head; for the classification head, the
/// argmax class index.
inline double ldlp_forward(const LdlpModel& m, const Eigen::VectorXd& e, const Eigen::VectorXd& f) {
  const Eigen::VectorXd out = detail::ldlp_outputs(m, detail::ldlp_input(m, e, f));
  if (m.head == HeadKind::regression) return out(0);
  Eigen::Index best = 0;
  out.maxCoeff(&best);
  return static_cast<double>(best);
}

// Round half away from zero.
inline long round_half_away(double x) {
  return static_cast<long>(x >= 0.0 ? std::floor(x + 0.5) : std::ceil(x - 0.5));
}

inline int clamp_length(double raw, int k_max) {
  const long r = round_half_away(raw);
  return static_cast<int>(std::clamp<long>(r, 0, k_max));
}

inline int predict_length(const LdlpModel& m, const Eigen::VectorXd& e, const Eigen::VectorXd& f,
                          int k_max) {
  if (k_max < 1) throw Error("k_max must be at least 1");
  return clamp_length(ldlp_forward(m, e, f), k_max);
}

inline double penalized_l1(double predicted, int label, double lambda) {
  const double err = std::abs(predicted - static_cast<double>(label));
  return predicted < static_cast<double>(label) ? lambda * err : err;
}

inline std::size_t lcp_len(std::span<const TokenId> a, std::span<const TokenId> b) {
  const auto n = std::min(a.size(), b.size());
  std::size_t i = 0;
  while (i < n && a[i] == b[i]) ++i;
  return i;
}

struct LdlpSample {
  Eigen::VectorXd e;
  Eigen::VectorXd f;
  int label = 0;
};

struct CollectOptions {
  int n_out = 128;
  int k_max_data = 10;
  std::optional<TokenId> terminator;
  int threads = 1;
};

/// Training pairs for one prompt. The greedy output is generated k_max_data
/// tokens past n_out so labels at late cuts are not truncated by the window.
inline std::vector<LdlpSample> collect_prompt(const DraftHead& dh, std::span<const TokenId> prompt,
                                              const CollectOptions& opt) {
  const TargetLM& lm = *dh.target;
  std::vector<LdlpSample> out;
  if (prompt.empty()) {
    std::cerr << "warning: skipping empty prompt during LDLP collection\n";
    return out;
  }
  const TokenSeq formal_out = greedy_continuation(lm, prompt, opt.n_out + opt.k_max_data, opt.terminator);
  TokenSeq full(prompt.begin(), prompt.end());
  full.insert(full.end(), formal_out.begin(), formal_out.end());
  const std::size_t p = prompt.size();
  const std::size_t cuts = std::min<std::size_t>(static_cast<std::size_t>(opt.n_out), formal_out.size());
  const std::size_t first_cut = p >= 2 ? 0 : 1;
  if (cuts <= first_cut) return out;
  // Features at positions p-2+first_cut .. p-2+cuts-1.
  const auto fw = target_forward_range(lm, full, p - 2 + first_cut, cuts - first_cut);
  for (std::size_t c = first_cut; c < cuts; ++c) {
    const std::size_t len = p + c;
    const auto& feature = fw[c - first_cut].feature;
    const auto draft = draft_autoregress(dh, full[len - 1], feature, opt.k_max_data);
    const std::span<const TokenId> formal_tail(formal_out.data() + c, formal_out.size() - c);
    LdlpSample s;
    s.e = lm.embedding.row(full[len - 2]).transpose();
    s.f = feature;
    s.label = static_cast<int>(lcp_len(draft.tokens, formal_tail));
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<LdlpSample> collect_dataset(const DraftHead& dh, std::span<const TokenSeq> prompts,
                                               const CollectOptions& opt) {
  if (opt.n_out < 1 || opt.k_max_data < 1) throw Error("n_out and k_max_data must be positive");
  std::vector<std::vector<LdlpSample>> per_prompt(prompts.size());
  parallel_for(prompts.size(), opt.threads,
               [&](std::size_t i) { per_prompt[i] = collect_prompt(dh, prompts[i], opt); });
  std::vector<LdlpSample> out;
  for (auto& v : per_prompt) {
    for (auto& s : v) out.push_back(std::move(s));
  }
  return out;
}

struct LdlpTrainConfig {
  TrainConfig sgd{0.01, 30, 128, 1, Schedule::cosine};
  double lambda = 2.0;
  HeadKind head = HeadKind::regression;
  int k_max_data = 10;  // classification head has k_max_data + 1 classes

  void validate() const {
    sgd.validate();
    if (!(lambda >= 1.0)) throw Error("penalty coefficient must be >= 1");
    if (k_max_data < 1) throw Error("k_max_data must be positive");
  }
};

/// Mean training loss (penalized L1 or cross-entropy) over the selected
/// samples; fills `grads` with the gradient of that mean when non-null.
inline double ldlp_loss_grad(const LdlpModel& m, std::span<const LdlpSample> samples,
                             std::span<const std::size_t> idx, double lambda, LdlpModel* grads) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  if (n == 0) throw Error("empty batch");
  const int d = m.input_dim();
  std::array<Eigen::MatrixXd, kLdlpLayers + 1> xs;
  xs[0].resize(d, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const auto& s = samples[idx[static_cast<std::size_t>(c)]];
    xs[0].col(c) = detail::ldlp_input(m, s.e, s.f);
  }
  std::array<Eigen::MatrixXd, kLdlpLayers> acts;
  for (int l = 0; l < kLdlpLayers; ++l) {
    const auto i = static_cast<std::size_t>(l);
    acts[i] = ((m.layer_w[i] * xs[i]).colwise() + m.layer_b[i]).array().tanh().matrix();
    xs[i + 1] = xs[i] + acts[i];
  }
  const Eigen::MatrixXd out = (m.out_w * xs[kLdlpLayers]).colwise() + m.out_b;

  double loss = 0.0;
  Eigen::MatrixXd dout(out.rows(), n);
  if (m.head == HeadKind::regression) {
    for (Eigen::Index c = 0; c < n; ++c) {
      const int label = samples[idx[static_cast<std::size_t>(c)]].label;
      const double pred = out(0, c);
      loss += penalized_l1(pred, label, lambda);
      dout(0, c) = pred < label ? -lambda : (pred > label ? 1.0 : 0.0);
    }
  } else {
    const Eigen::MatrixXd p = detail::column_softmax(out);
    dout = p;
    for (Eigen::Index c = 0; c < n; ++c) {
      const int label = std::min(samples[idx[static_cast<std::size_t>(c)]].label, m.outputs() - 1);
      loss -= std::log(std::max(p(label, c), 1e-300));
      dout(label, c) -= 1.0;
    }
  }
  loss /= static_cast<double>(n);
  if (grads == nullptr) return loss;

  dout /= static_cast<double>(n);
  *grads = LdlpModel::zeros(m.embed, m.feature, m.head, m.outputs());
  grads->out_w.noalias() = dout * xs[kLdlpLayers].transpose();
  grads->out_b = dout.rowwise().sum();
  Eigen::MatrixXd dx = m.out_w.transpose() * dout;
  for (int l = kLdlpLayers - 1; l >= 0; --l) {
    const auto i = static_cast<std::size_t>(l);
    Eigen::MatrixXd dz = dx;
    dz.array() *= (1.0 - acts[i].array().square());
    grads->layer_w[i].noalias() = dz * xs[i].transpose();
    grads->layer_b[i] = dz.rowwise().sum();
    dx += m.layer_w[i].transpose() * dz;
  }
  return loss;
}

inline LdlpModel train_ldlp(std::span<const LdlpSample> samples, const LdlpTrainConfig& cfg,
                            TrainStats* stats = nullptr) {
  cfg.validate();
  if (samples.empty()) throw Error("empty LDLP dataset");
  const int embed = static_cast<int>(samples[0].e.size());
  const int feature = static_cast<int>(samples[0].f.size());
  const int outputs = cfg.head == HeadKind::regression ? 1 : cfg.k_max_data + 1;
  LdlpModel m = LdlpModel::init(embed, feature, cfg.head, outputs, cfg.sgd.seed ^ 0x1D1FULL);

  const auto eval_idx = detail::eval_subset(samples.size(), cfg.sgd.seed, 4096);
  TrainStats local;
  local.initial_loss = ldlp_loss_grad(m, samples, eval_idx, cfg.lambda, nullptr);
  LdlpModel g;
  detail::run_sgd(samples.size(), cfg.sgd, local.epoch_loss,
                  [&](std::span<const std::size_t> batch, double lr) {
                    const double loss = ldlp_loss_grad(m, samples, batch, cfg.lambda, &g);
                    for (int l = 0; l < kLdlpLayers; ++l) {
                      const auto i = static_cast<std::size_t>(l);
                      m.layer_w[i] -= lr * g.layer_w[i];
                      m.layer_b[i] -= lr * g.layer_b[i];
                    }
                    m.out_w -= lr * g.out_w;
                    m.out_b -= lr * g.out_b;
                    return loss;
                  });
  local.final_loss = ldlp_loss_grad(m, samples, eval_idx, cfg.lambda, nullptr);
  if (stats) *stats = std::move(local);
  return m;
}

/// Mean |predicted length - label| with predictions rounded and clamped to the
/// label range [0, k_max_data].
inline double ldlp_mae(const LdlpModel& m, std::span<const LdlpSample> samples, int k_max_data) {
  if (samples.empty()) throw Error("empty sample set");
  double sum = 0.0;
  for (const auto& s : samples) sum += std::abs(predict_length(m, s.e, s.f, k_max_data) - s.label);
  return sum / static_cast<double>(samples.size());
}

/// MAE of the best constant integer length in [0, k_max_data].
inline std::pair<int, double> best_constant_mae(std::span<const LdlpSample> samples, int k_max_data) {
  if (samples.empty()) throw Error("empty sample set");
  std::pair<int, double> best{0, std::numeric_limits<double>::infinity()};
  for (int c = 0; c <= k_max_data; ++c) {
    double sum = 0.0;
    for (const auto& s : samples) sum += std::abs(c - s.label);
    const double mae = sum / static_cast<double>(samples.size());
    if (mae < best.second) best = {c, mae};
  }
  return best;
}

// ---------------------------------------------------------------------------
// Files

inline void write_ldlp(std::ostream& os, const LdlpModel& m) {
  BinaryWriter w(os);
  write_header(w, {m.head == HeadKind::regression ? ModelKind::ldlp_regression
                                                  : ModelKind::ldlp_classification,
                   {static_cast<std::uint32_t>(kLdlpLayers), static_cast<std::uint32_t>(m.embed),
                    static_cast<std::uint32_t>(m.feature), static_cast<std::uint32_t>(m.outputs())}});
  for (int l = 0; l < kLdlpLayers; ++l) {
    w.tensor(m.layer_w[static_cast<std::size_t>(l)]);
    w.tensor(m.layer_b[static_cast<std::size_t>(l)]);
  }
  w.tensor(m.out_w);
  w.tensor(m.out_b);
}

inline LdlpModel read_ldlp(std::istream& is) {
  BinaryReader r(is);
  const auto h = read_header(r);
  if (h.kind != ModelKind::ldlp_regression && h.kind != ModelKind::ldlp_classification) {
    throw Error("file does not hold an LDLP model");
  }
  if (h.dims[0] != kLdlpLayers) throw Error("unsupported LDLP depth");
  LdlpModel m = LdlpModel::zeros(
      static_cast<int>(h.dims[1]), static_cast<int>(h.dims[2]),
      h.kind == ModelKind::ldlp_regression ? HeadKind::regression : HeadKind::classification,
      static_cast<int>(h.dims[3]));
  for (int l = 0; l < kLdlpLayers; ++l) {
    r.tensor(m.layer_w[static_cast<std::size_t>(l)]);
    r.tensor(m.layer_b[static_cast<std::size_t>(l)]);
  }
  r.tensor(m.out_w);
  r.tensor(m.out_b);
  r.expect_end();
  return m;
}

inline constexpr char kDatasetMagic[5] = {'L', 'D', 'L', 'P', '1'};

// "LDLP1" | u32 embed | u32 feature | u32 n | n x (embed f64, feature f64, i32 label)
inline void write_dataset(std::ostream& os, std::span<const LdlpSample> samples) {
  BinaryWriter w(os);
  w.bytes(kDatasetMagic, 5);
  const auto de = samples.empty() ? 0 : static_cast<std::uint32_t>(samples[0].e.size());
  const auto df = samples.empty() ? 0 : static_cast<std::uint32_t>(samples[0].f.size());
  w.u32(de);
  w.u32(df);
  w.u32(static_cast<std::uint32_t>(samples.size()));
  for (const auto& s : samples) {
    if (s.e.size() != de || s.f.size() != df) throw Error("ragged LDLP dataset");
    w.tensor(s.e);
    w.tensor(s.f);
    w.i32(s.label);
  }
}

inline std::vector<LdlpSample> read_dataset(std::istream& is) {
  BinaryReader r(is);
  char magic[5];
  r.bytes(magic, 5);
  if (std::memcmp(magic, kDatasetMagic, 5) != 0) throw Error("bad dataset magic (expected LDLP1)");
  const auto de = static_cast<Eigen::Index>(r.u32());
  const auto df = static_cast<Eigen::Index>(r.u32());
  const auto n = r.u32();
  std::vector<LdlpSample> out(n);
  for (auto& s : out) {
    s.e.resize(de);
    s.f.resize(df);
    r.tensor(s.e);
    r.tensor(s.f);
    s.label = r.i32();
  }
  r.expect_end();
  return out;
}

}  // namespace sdlab
