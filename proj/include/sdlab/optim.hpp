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

// Minibatch SGD plumbing shared by the three trainers.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "sdlab/tokencore.hpp"

namespace sdlab {

enum class Schedule { cosine, constant };

inline Schedule parse_schedule(const std::string& s) {
  if (s == "cosine") return Schedule::cosine;
  if (s == "constant") return Schedule::constant;
  throw Error("unknown schedule '" + s + "'");
}

struct TrainConfig {
  double learning_rate = 0.1;
  int epochs = 1;
  int batch_size = 32;
  std::uint64_t seed = 1;
  Schedule schedule = Schedule::cosine;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
    if (epochs < 0) throw Error("epochs must be non-negative");
    if (batch_size < 1) throw Error("batch size must be positive");
  }
};

// Cosine decay from the base rate to zero over total_steps.
inline double learning_rate_at(const TrainConfig& cfg, long step, long total_steps) {
  if (cfg.schedule == Schedule::constant || total_steps <= 0) return cfg.learning_rate;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// Glorot-uniform fill drawn from the project generator.
inline void glorot_fill(Eigen::MatrixXd& m, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = (2.0 * rng.uniform() - 1.0) * a;
  }
}

inline void uniform_fill(Eigen::MatrixXd& m, Rng& rng, double scale) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = (2.0 * rng.uniform() - 1.0) * scale;
  }
}

/// Relative error between an analytic and a numeric gradient tensor:
/// ||a - n|| / (||a|| + ||n||), zero when both vanish.
inline double gradient_relative_error(const Eigen::MatrixXd& analytic,
                                      const Eigen::MatrixXd& numeric) {
  const double diff = (analytic - numeric).norm();
  const double denom = analytic.norm() + numeric.norm();
  if (denom == 0.0) return 0.0;
  return diff / denom;
}

}  // namespace sdlab
