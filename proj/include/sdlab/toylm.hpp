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

// Fixed-window MLP target language model and the feature-conditioned draft
// head that reuses its embedding table and LM head.
//
//   target:  f_i   = tanh(W1 [E t_{i-w+1}; ...; E t_i] + b1)
//            p_i   = softmax(W_head f_i + b_head)          (predicts t_{i+1})
//   draft:   f^_{i+1} = tanh(W_d [E t_{i+1}; f_i] + b_d)    (f_i true or drafted)
//            q_{i+1}  = softmax(W_head f^_{i+1} + b_head)  (predicts t_{i+2})

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "sdlab/optim.hpp"
#include "sdlab/tokencore.hpp"

namespace sdlab {

enum class DecodeMode { greedy, stochastic };

struct LmDims {
  int window = 8;
  int embed = 32;
  int feature = 64;
  int vocab = 0;

  void validate() const {
    if (window < 1 || embed < 1 || feature < 1 || vocab < 1) {
      throw Error("model dimensions must be positive");
    }
  }
  friend bool operator==(const LmDims&, const LmDims&) = default;
};

struct TargetLM {
  LmDims dims;
  Eigen::MatrixXd embedding;  // (vocab + 1) x embed, last row is the pad row (always zero)
  Eigen::MatrixXd hidden_w;   // feature x (window * embed)
  Eigen::VectorXd hidden_b;   // feature
  Eigen::MatrixXd head_w;     // vocab x feature
  Eigen::VectorXd head_b;     // vocab

  [[nodiscard]] TokenId pad_id() const { return dims.vocab; }

  static TargetLM zeros(const LmDims& dims) {
    dims.validate();
    TargetLM lm;
    lm.dims = dims;
    lm.embedding = Eigen::MatrixXd::Zero(dims.vocab + 1, dims.embed);
    lm.hidden_w = Eigen::MatrixXd::Zero(dims.feature, dims.window * dims.embed);
    lm.hidden_b = Eigen::VectorXd::Zero(dims.feature);
    lm.head_w = Eigen::MatrixXd::Zero(dims.vocab, dims.feature);
    lm.head_b = Eigen::VectorXd::Zero(dims.vocab);
    return lm;
  }

  static TargetLM init(const LmDims& dims, std::uint64_t seed) {
    TargetLM lm = zeros(dims);
    Rng rng(seed);
    Eigen::MatrixXd emb(dims.vocab, dims.embed);
    uniform_fill(emb, rng, 0.5);
    lm.embedding.topRows(dims.vocab) = emb;
    glorot_fill(lm.hidden_w, rng);
    glorot_fill(lm.head_w, rng);
    return lm;
  }

  friend bool operator==(const TargetLM& a, const TargetLM& b) {
    return a.dims == b.dims && a.embedding == b.embedding && a.hidden_w == b.hidden_w &&
           a.hidden_b == b.hidden_b && a.head_w == b.head_w && a.head_b == b.head_b;
  }
};

struct Forward {
  Dist dist;
  Eigen::VectorXd feature;
};

namespace detail {

inline Eigen::VectorXd window_input(const TargetLM& lm, std::span<const TokenId> seq,
                                    std::size_t pos) {
  const int w = lm.dims.window;
  const int de = lm.dims.embed;
  Eigen::VectorXd x(w * de);
  for (int slot = 0; slot < w; ++slot) {
    // slot w-1 holds seq[pos]; earlier slots reach back, padding before 0.
    const long src = static_cast<long>(pos) - (w - 1 - slot);
    const TokenId id = src < 0 ? lm.pad_id() : seq[static_cast<std::size_t>(src)];
    x.segment(slot * de, de) = lm.embedding.row(id).transpose();
  }
  return x;
}

inline Dist head_dist(const TargetLM& lm, const Eigen::VectorXd& feature) {
  const Eigen::VectorXd logits = lm.head_w * feature + lm.head_b;
  return softmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())));
}

inline Forward forward_at(const TargetLM& lm, std::span<const TokenId> seq, std::size_t pos) {
  const Eigen::VectorXd x = window_input(lm, seq, pos);
  Eigen::VectorXd f = (lm.hidden_w * x + lm.hidden_b).array().tanh().matrix();
  Dist d = head_dist(lm, f);
  return {std::move(d), std::move(f)};
}

}  // namespace detail

/// Next-token distribution and feature at the last position of `prefix`.
inline Forward target_forward(const TargetLM& lm, std::span<const TokenId> prefix) {
  if (prefix.empty()) throw Error("target_forward needs a non-empty prefix");
  check_tokens(prefix, lm.dims.vocab);
  return detail::forward_at(lm, prefix, prefix.size() - 1);
}

/// Forward outputs for positions [first, first + count) of `seq` in one call.
/// Each column goes through the same kernel as target_forward, so results are
/// bit-identical to single-position calls.
inline std::vector<Forward> target_forward_range(const TargetLM& lm, std::span<const TokenId> seq,
                                                 std::size_t first, std::size_t count) {
  if (first + count > seq.size()) throw Error("forward range exceeds sequence");
  check_tokens(seq.subspan(0, first + count), lm.dims.vocab);
  std::vector<Forward> out;
  out.reserve(count);
  for (std::size_t i = first; i < first + count; ++i) out.push_back(detail::forward_at(lm, seq, i));
  return out;
}

inline std::vector<Forward> target_forward_batch(const TargetLM& lm,
                                                 std::span<const TokenId> prefix) {
  if (prefix.empty()) throw Error("target_forward_batch needs a non-empty prefix");
  return target_forward_range(lm, prefix, 0, prefix.size());
}

/// n tokens of repeated argmax; stops after emitting the terminator.
inline TokenSeq greedy_continuation(const TargetLM& lm, std::span<const TokenId> prefix, int n,
                                    std::optional<TokenId> terminator = std::nullopt) {
  if (n < 0) throw Error("negative continuation length");
  TokenSeq seq(prefix.begin(), prefix.end());
  TokenSeq out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const TokenId t = argmax(target_forward(lm, seq).dist);
    out.push_back(t);
    seq.push_back(t);
    if (terminator && t == *terminator) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Draft head

struct DraftHead {
  std::shared_ptr<const TargetLM> target;
  Eigen::MatrixXd w;  // feature x (embed + feature)
  Eigen::VectorXd b;  // feature

  static DraftHead zeros(std::shared_ptr<const TargetLM> target) {
    if (!target) throw Error("draft head needs a target model");
    DraftHead dh;
    const auto& d = target->dims;
    dh.w = Eigen::MatrixXd::Zero(d.feature, d.embed + d.feature);
    dh.b = Eigen::VectorXd::Zero(d.feature);
    dh.target = std::move(target);
    return dh;
  }

  static DraftHead init(std::shared_ptr<const TargetLM> target, std::uint64_t seed) {
    DraftHead dh = zeros(std::move(target));
    Rng rng(seed);
    glorot_fill(dh.w, rng);
    return dh;
  }

  [[nodiscard]] Eigen::VectorXd step_feature(TokenId token, const Eigen::VectorXd& feature) const {
    const int de = target->dims.embed;
    Eigen::VectorXd in(de + target->dims.feature);
    in.head(de) = target->embedding.row(token).transpose();
    in.tail(target->dims.feature) = feature;
    return (w * in + b).array().tanh().matrix();
  }
};

/// Feature-level autoregression from a (token, preceding feature) seed. After
/// the first step the cursor conditions on its own drafted features.
class DraftCursor {
 public:
  struct Step {
    TokenId token;
    Dist dist;
    Eigen::VectorXd feature;
  };

  DraftCursor(const DraftHead& dh, TokenId seed_token, Eigen::VectorXd seed_feature)
      : dh_(&dh), token_(seed_token), feature_(std::move(seed_feature)) {
    if (token_ < 0 || token_ >= dh.target->dims.vocab) throw Error("seed token out of range");
    if (feature_.size() != dh.target->dims.feature) throw Error("seed feature has wrong dimension");
  }

  Step next(DecodeMode mode, Rng* rng) {
    Eigen::VectorXd f = dh_->step_feature(token_, feature_);
    Dist d = detail::head_dist(*dh_->target, f);
    TokenId t;
    if (mode == DecodeMode::greedy) {
      t = argmax(d);
    } else {
      if (rng == nullptr) throw Error("stochastic drafting needs an rng");
      t = sample(d, *rng);
    }
    token_ = t;
    feature_ = f;
    return {t, std::move(d), std::move(f)};
  }

 private:
  const DraftHead* dh_;
  TokenId token_;
  Eigen::VectorXd feature_;
};

struct DraftOutput {
  TokenSeq tokens;
  std::vector<Dist> dists;
  std::vector<Eigen::VectorXd> features;
};

inline DraftOutput draft_autoregress(const DraftHead& dh, TokenId seed_token,
                                     const Eigen::VectorXd& seed_feature, int k,
                                     DecodeMode mode = DecodeMode::greedy, Rng* rng = nullptr) {
  if (k < 0) throw Error("negative draft length");
  DraftOutput out;
  DraftCursor cursor(dh, seed_token, seed_feature);
  for (int i = 0; i < k; ++i) {
    auto step = cursor.next(mode, rng);
    out.tokens.push_back(step.token);
    out.dists.push_back(std::move(step.dist));
    out.features.push_back(std::move(step.feature));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training data

/// Flat (context window, next token) pairs. Windows are left-padded at the
/// start of each document, so a document never sees its predecessor.
struct LmExamples {
  int window = 0;
  std::vector<TokenId> contexts;  // size() * window
  std::vector<TokenId> targets;

  [[nodiscard]] std::size_t size() const { return targets.size(); }
  [[nodiscard]] std::span<const TokenId> context(std::size_t i) const {
    return {contexts.data() + i * static_cast<std::size_t>(window),
            static_cast<std::size_t>(window)};
  }
};

inline LmExamples make_lm_examples(std::span<const TokenSeq> docs, int window, TokenId pad) {
  LmExamples ex;
  ex.window = window;
  for (const auto& doc : docs) {
    for (std::size_t i = 0; i + 1 < doc.size(); ++i) {
      for (int slot = 0; slot < window; ++slot) {
        const long src = static_cast<long>(i) - (window - 1 - slot);
        ex.contexts.push_back(src < 0 ? pad : doc[static_cast<std::size_t>(src)]);
      }
      ex.targets.push_back(doc[i + 1]);
    }
  }
  return ex;
}

namespace detail {

inline Eigen::MatrixXd gather_inputs(const TargetLM& lm, const LmExamples& ex,
                                     std::span<const std::size_t> idx, bool shift_in_target) {
  const int w = lm.dims.window;
  const int de = lm.dims.embed;
  Eigen::MatrixXd x(w * de, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) {
    const auto ctx = ex.context(idx[c]);
    for (int slot = 0; slot < w; ++slot) {
      TokenId id;
      if (shift_in_target) {
        id = slot + 1 < w ? ctx[static_cast<std::size_t>(slot + 1)] : ex.targets[idx[c]];
      } else {
        id = ctx[static_cast<std::size_t>(slot)];
      }
      x.block(slot * de, static_cast<Eigen::Index>(c), de, 1) = lm.embedding.row(id).transpose();
    }
  }
  return x;
}

inline Eigen::MatrixXd column_softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double mx = logits.col(c).maxCoeff();
    p.col(c) = (logits.col(c).array() - mx).exp().matrix();
    p.col(c) /= p.col(c).sum();
  }
  return p;
}

}  // namespace detail

/// Mean next-token cross-entropy over the selected examples. When `grads` is
/// non-null it receives the gradient of that mean (shaped like the model).
inline double lm_loss_grad(const TargetLM& lm, const LmExamples& ex,
                           std::span<const std::size_t> idx, TargetLM* grads) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  if (n == 0) throw Error("empty batch");
  const Eigen::MatrixXd x = detail::gather_inputs(lm, ex, idx, false);
  const Eigen::MatrixXd h =
      ((lm.hidden_w * x).colwise() + lm.hidden_b).array().tanh().matrix();
  const Eigen::MatrixXd logits = (lm.head_w * h).colwise() + lm.head_b;
  Eigen::MatrixXd p = detail::column_softmax(logits);

  double loss = 0.0;
  for (Eigen::Index c = 0; c < n; ++c) {
    loss -= std::log(std::max(p(ex.targets[idx[static_cast<std::size_t>(c)]], c), 1e-300));
  }
  loss /= static_cast<double>(n);
  if (grads == nullptr) return loss;

  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::MatrixXd dlogits = p;
  for (Eigen::Index c = 0; c < n; ++c) dlogits(ex.targets[idx[static_cast<std::size_t>(c)]], c) -= 1.0;
  dlogits *= inv_n;

  *grads = TargetLM::zeros(lm.dims);
  grads->head_w.noalias() = dlogits * h.transpose();
  grads->head_b = dlogits.rowwise().sum();
  Eigen::MatrixXd dh = lm.head_w.transpose() * dlogits;
  dh.array() *= (1.0 - h.array().square());
  grads->hidden_w.noalias() = dh * x.transpose();
  grads->hidden_b = dh.rowwise().sum();
  const Eigen::MatrixXd dx = lm.hidden_w.transpose() * dh;
  const int de = lm.dims.embed;
  for (Eigen::Index c = 0; c < n; ++c) {
    const auto ctx = ex.context(idx[static_cast<std::size_t>(c)]);
    for (int slot = 0; slot < lm.dims.window; ++slot) {
      const TokenId id = ctx[static_cast<std::size_t>(slot)];
      if (id == lm.pad_id()) continue;
      grads->embedding.row(id) += dx.block(slot * de, c, de, 1).transpose();
    }
  }
  return loss;
}

struct TrainStats {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_loss;
};

namespace detail {

inline std::vector<std::size_t> eval_subset(std::size_t n, std::uint64_t seed, std::size_t cap) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed ^ 0x5DEECE66DULL);
  rng.shuffle(idx);
  if (idx.size() > cap) idx.resize(cap);
  return idx;
}

template <typename Step>
void run_sgd(std::size_t n, const TrainConfig& cfg, std::vector<double>& epoch_loss, Step&& step) {
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const long steps_per_epoch = static_cast<long>((n + bs - 1) / bs);
  const long total = steps_per_epoch * cfg.epochs;
  long t = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double sum = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t len = std::min(bs, n - start);
      const double lr = learning_rate_at(cfg, t++, total);
      const double loss = step(std::span<const std::size_t>(order.data() + start, len), lr);
      if (!std::isfinite(loss)) throw Error("NaN loss at epoch " + std::to_string(epoch));
      sum += loss * static_cast<double>(len);
    }
    epoch_loss.push_back(sum / static_cast<double>(n));
  }
}

}  // namespace detail

inline TargetLM train_lm(std::span<const TokenSeq> docs, const LmDims& dims,
                         const TrainConfig& cfg, TrainStats* stats = nullptr) {
  cfg.validate();
  dims.validate();
  for (const auto& d : docs) check_tokens(d, dims.vocab);
  TargetLM lm = TargetLM::init(dims, cfg.seed);
  const LmExamples ex = make_lm_examples(docs, dims.window, lm.pad_id());
  if (ex.size() == 0) throw Error("corpus too short to train");

  const auto eval_idx = detail::eval_subset(ex.size(), cfg.seed, 4096);
  TrainStats local;
  local.initial_loss = lm_loss_grad(lm, ex, eval_idx, nullptr);
  TargetLM g;
  detail::run_sgd(ex.size(), cfg, local.epoch_loss,
                  [&](std::span<const std::size_t> batch, double lr) {
                    const double loss = lm_loss_grad(lm, ex, batch, &g);
                    lm.embedding -= lr * g.embedding;
                    lm.hidden_w -= lr * g.hidden_w;
                    lm.hidden_b -= lr * g.hidden_b;
                    lm.head_w -= lr * g.head_w;
                    lm.head_b -= lr * g.head_b;
                    return loss;
                  });
  local.final_loss = lm_loss_grad(lm, ex, eval_idx, nullptr);
  if (stats) *stats = std::move(local);
  return lm;
}

/// Teacher-forced draft objective over the selected examples:
///   alpha * ||f^_{i+1} - f_{i+1}||^2 + H(p_{i+1}, q_{i+1})
/// where f_i, f_{i+1}, p_{i+1} come from the frozen target. Returns the batch
/// mean; `grads` (if given) receives d(mean)/d(w, b).
inline double draft_loss_grad(const DraftHead& dh, const LmExamples& ex,
                              std::span<const std::size_t> idx, double alpha, DraftHead* grads) {
  const TargetLM& lm = *dh.target;
  const auto n = static_cast<Eigen::Index>(idx.size());
  if (n == 0) throw Error("empty batch");
  const int de = lm.dims.embed;
  const int df = lm.dims.feature;

  const Eigen::MatrixXd x_prev = detail::gather_inputs(lm, ex, idx, false);
  const Eigen::MatrixXd x_next = detail::gather_inputs(lm, ex, idx, true);
  const Eigen::MatrixXd f_prev =
      ((lm.hidden_w * x_prev).colwise() + lm.hidden_b).array().tanh().matrix();
  const Eigen::MatrixXd f_next =
      ((lm.hidden_w * x_next).colwise() + lm.hidden_b).array().tanh().matrix();
  const Eigen::MatrixXd p_next =
      detail::column_softmax((lm.head_w * f_next).colwise() + lm.head_b);

  Eigen::MatrixXd in(de + df, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    in.block(0, c, de, 1) = lm.embedding.row(ex.targets[idx[static_cast<std::size_t>(c)]]).transpose();
  }
  in.bottomRows(df) = f_prev;
  const Eigen::MatrixXd fh = ((dh.w * in).colwise() + dh.b).array().tanh().matrix();
  const Eigen::MatrixXd q = detail::column_softmax((lm.head_w * fh).colwise() + lm.head_b);

  const Eigen::MatrixXd feat_err = fh - f_next;
  double loss = alpha * feat_err.squaredNorm();
  loss -= (p_next.array() * q.array().max(1e-300).log()).sum();
  loss /= static_cast<double>(n);
  if (grads == nullptr) return loss;

  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::MatrixXd dfh = lm.head_w.transpose() * (q - p_next) + 2.0 * alpha * feat_err;
  dfh.array() *= (1.0 - fh.array().square());
  dfh *= inv_n;
  grads->target = dh.target;
  grads->w.noalias() = dfh * in.transpose();
  grads->b = dfh.rowwise().sum();
  return loss;
}

struct DraftTrainConfig {
  TrainConfig sgd;
  double alpha = 1.0;
};

inline DraftHead train_draft(std::span<const TokenSeq> docs, std::shared_ptr<const TargetLM> lm,
                             const DraftTrainConfig& cfg, TrainStats* stats = nullptr) {
  cfg.sgd.validate();
  if (!lm) throw Error("train_draft needs a target model");
  DraftHead dh = DraftHead::init(lm, cfg.sgd.seed ^ 0xD4AF7ULL);
  const LmExamples ex = make_lm_examples(docs, lm->dims.window, lm->pad_id());
  if (ex.size() == 0) throw Error("corpus too short to train");

  const auto eval_idx = detail::eval_subset(ex.size(), cfg.sgd.seed, 4096);
  TrainStats local;
  local.initial_loss = draft_loss_grad(dh, ex, eval_idx, cfg.alpha, nullptr);
  DraftHead g;
  detail::run_sgd(ex.size(), cfg.sgd, local.epoch_loss,
                  [&](std::span<const std::size_t> batch, double lr) {
                    const double loss = draft_loss_grad(dh, ex, batch, cfg.alpha, &g);
                    dh.w -= lr * g.w;
                    dh.b -= lr * g.b;
                    return loss;
                  });
  local.final_loss = draft_loss_grad(dh, ex, eval_idx, cfg.alpha, nullptr);
  if (stats) *stats = std::move(local);
  return dh;
}

/// Fraction of positions where the one-step draft from true target features
/// picks the target's greedy next token.
inline double draft_agreement(const DraftHead& dh, std::span<const TokenSeq> docs) {
  const TargetLM& lm = *dh.target;
  long agree = 0;
  long total = 0;
  for (const auto& doc : docs) {
    if (doc.size() < 2) continue;
    const auto fw = target_forward_batch(lm, doc);
    for (std::size_t i = 0; i + 1 < doc.size(); ++i) {
      const Eigen::VectorXd fh = dh.step_feature(doc[i + 1], fw[i].feature);
      agree += argmax(detail::head_dist(lm, fh)) == argmax(fw[i + 1].dist);
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(agree) / static_cast<double>(total);
}

}  // namespace sdlab
