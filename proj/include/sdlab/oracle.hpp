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

// Zero-waste decoding with the draft-length oracle, and an empirical probe of
// the "more target history gives better drafts" assumption behind it.

#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sdlab/draft_oracle.hpp"
#include "sdlab/specdec.hpp"

namespace sdlab {

inline DecodeResult oracle_decode(const DraftHead& dh, std::span<const TokenId> prompt,
                                  int max_tokens, int k_max = 10,
                                  std::optional<TokenId> terminator = std::nullopt) {
  Rng unused(0);
  DecodeOptions opt;
  opt.max_tokens = max_tokens;
  opt.mode = DecodeMode::greedy;
  opt.terminator = terminator;
  return decode(dh, OracleLen{k_max}, prompt, opt, unused);
}

struct ProbeRow {
  int m_minus_j = 0;
  long n = 0;
  long agree_count = 0;
};

struct ProbeReport {
  std::vector<ProbeRow> rows;  // one per draft distance 1..max_gap
  long triples = 0;
  long triples_more_history_not_worse = 0;

  [[nodiscard]] double monotone_fraction() const {
    return triples == 0 ? 0.0 : static_cast<double>(triples_more_history_not_worse) / static_cast<double>(triples);
  }

  [[nodiscard]] std::string to_csv() const {
    std::ostringstream os;
    os << "m_minus_j,n,agree_count\n";
    for (const auto& r : rows) os << r.m_minus_j << ',' << r.n << ',' << r.agree_count << '\n';
    return os.str();
  }
};

struct ProbeOptions {
  int n_positions = 2000;
  int max_gap = 8;
  int formal_len = 64;
  std::optional<TokenId> terminator;
};

/// Samples (m, j, j') with j' < j < m on greedy formal sequences grown from
/// `prompts`, drafts position m from both histories and records whether each
/// draft token equals the formal token. Rows count the history-j draft only,
/// so row counts sum to n_positions. Evidence only; nothing is asserted.
inline ProbeReport assumption1_probe(const DraftHead& dh, std::span<const TokenSeq> prompts,
                                     const ProbeOptions& opt, Rng& rng) {
  if (opt.max_gap < 2) throw Error("probe needs max_gap >= 2");
  const TargetLM& lm = *dh.target;

  struct Formal {
    TokenSeq tokens;
    std::vector<Forward> fw;
  };
  std::vector<Formal> formals;
  const auto min_len = static_cast<std::size_t>(opt.max_gap + 2);
  for (const auto& p : prompts) {
    if (p.empty()) continue;
    Formal f;
    f.tokens = p;
    const auto cont = greedy_continuation(lm, p, opt.formal_len, opt.terminator);
    f.tokens.insert(f.tokens.end(), cont.begin(), cont.end());
    if (f.tokens.size() < min_len) continue;
    f.fw = target_forward_batch(lm, f.tokens);
    formals.push_back(std::move(f));
  }
  if (formals.empty()) throw Error("corpus too short for the probe");

  ProbeReport rep;
  for (int g = 1; g <= opt.max_gap; ++g) rep.rows.push_back({g, 0, 0});

  // History h = number of known formal tokens (h >= 2 so a seed feature
  // exists). The draft token at distance g predicts index h + g - 1.
  auto agrees = [&](const Formal& f, std::size_t h, int g) {
    const auto d = draft_autoregress(dh, f.tokens[h - 1], f.fw[h - 2].feature, g);
    return d.tokens.back() == f.tokens[h + static_cast<std::size_t>(g) - 1];
  };

  for (int i = 0; i < opt.n_positions; ++i) {
    const auto& f = formals[rng.below(formals.size())];
    const int g = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(opt.max_gap - 1)));
    const int g_far = g + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(opt.max_gap - g)));
    // m ranges so that the far history still has h' >= 2.
    const std::size_t m_lo = static_cast<std::size_t>(g_far) + 1;
    const std::size_t m_hi = f.tokens.size() - 1;
    const std::size_t m = m_lo + rng.below(m_hi - m_lo + 1);
    const std::size_t h = m + 1 - static_cast<std::size_t>(g);
    const std::size_t h_far = m + 1 - static_cast<std::size_t>(g_far);
    const bool near_ok = agrees(f, h, g);
    const bool far_ok = agrees(f, h_far, g_far);
    auto& row = rep.rows[static_cast<std::size_t>(g - 1)];
    ++row.n;
    row.agree_count += near_ok;
    ++rep.triples;
    rep.triples_more_history_not_worse += (near_ok >= far_ok);
  }
  return rep;
}

}  // namespace sdlab
