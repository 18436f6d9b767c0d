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

#include <Eigen/Dense>
#include <optional>
#include <span>

#include "sdlab/ldlp.hpp"
#include "sdlab/toylm.hpp"

namespace sdlab {

/// Optimal draft length at a greedy decode state: the number of leading draft
/// tokens the target would accept, capped at k_max. `formal` ends with the
/// draft seed token and `feature` is the target feature one position earlier.
/// The look-ahead (k_max draft steps plus k_max target steps) is not part of
/// any cost accounting.
inline int opt_k(const DraftHead& dh, std::span<const TokenId> formal,
                 const Eigen::VectorXd& feature, int k_max,
                 std::optional<TokenId> terminator = std::nullopt) {
  if (k_max < 1) throw Error("k_max must be at least 1");
  if (formal.empty()) throw Error("opt_k needs a non-empty formal sequence");
  const auto draft = draft_autoregress(dh, formal.back(), feature, k_max);
  const auto formal_next = greedy_continuation(*dh.target, formal, k_max, terminator);
  return static_cast<int>(lcp_len(draft.tokens, formal_next));
}

}  // namespace sdlab
