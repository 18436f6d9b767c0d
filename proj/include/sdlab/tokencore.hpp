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

// Vocabulary, token sequences, probability vectors and the seeded generator
// shared by every other sdlab module.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace sdlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Document separator inserted by corpus preparation. It lives in the
// vocabulary like any other character.
inline constexpr char32_t kTerminatorSymbol = U'\x03';

namespace utf8 {

inline std::vector<char32_t> decode(std::string_view text) {
  std::vector<char32_t> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    int extra = 0;
    char32_t cp = 0;
    if (lead < 0x80) {
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      cp = lead & 0x1F;
      extra = 1;
    } else if ((lead & 0xF0) == 0xE0) {
      cp = lead & 0x0F;
      extra = 2;
    } else if ((lead & 0xF8) == 0xF0) {
      cp = lead & 0x07;
      extra = 3;
    } else {
      throw Error("invalid utf-8 lead byte at offset " + std::to_string(i));
    }
    for (int k = 1; k <= extra; ++k) {
      if (i + k >= text.size()) {
        throw Error("truncated utf-8 sequence at offset " + std::to_string(i));
      }
      const auto cont = static_cast<unsigned char>(text[i + k]);
      if ((cont & 0xC0) != 0x80) {
        throw Error("invalid utf-8 continuation at offset " +
                    std::to_string(i + k));
      }
      cp = (cp << 6) | (cont & 0x3F);
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(extra) + 1;
  }
  return out;
}

inline void append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

}  // namespace utf8

/// Character vocabulary. Index order is the sorted code-point order of the
/// symbols; the padding id is size() and never names a symbol.
class Vocab {
 public:
  Vocab() = default;

  explicit Vocab(std::vector<char32_t> symbols) : symbols_(std::move(symbols)) {
    if (symbols_.empty()) {
      throw Error("empty vocabulary");
    }
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      if (!index_.emplace(symbols_[i], static_cast<TokenId>(i)).second) {
        throw Error("duplicate vocabulary symbol");
      }
    }
  }

  [[nodiscard]] int size() const { return static_cast<int>(symbols_.size()); }
  [[nodiscard]] TokenId pad_id() const { return size(); }
  [[nodiscard]] char32_t symbol(TokenId id) const {
    if (id < 0 || id >= size()) {
      throw Error("token id " + std::to_string(id) + " out of range");
    }
    return symbols_[static_cast<std::size_t>(id)];
  }
  [[nodiscard]] std::optional<TokenId> find(char32_t c) const {
    auto it = index_.find(c);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  [[nodiscard]] std::optional<TokenId> terminator() const {
    return find(kTerminatorSymbol);
  }
  [[nodiscard]] const std::vector<char32_t>& symbols() const { return symbols_; }

  [[nodiscard]] TokenSeq encode(std::string_view text) const {
    TokenSeq out;
    for (char32_t c : utf8::decode(text)) {
      auto id = find(c);
      if (!id) {
        throw Error("character U+" + std::to_string(static_cast<unsigned>(c)) +
                    " not in vocabulary");
      }
      out.push_back(*id);
    }
    return out;
  }

  [[nodiscard]] std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) utf8::append(out, symbol(id));
    return out;
  }

  // One symbol per line, index = line number. Control characters and the
  // backslash are escaped so that every symbol stays on its own line.
  [[nodiscard]] std::string serialize() const {
    std::string out;
    for (char32_t c : symbols_) {
      if (c == U'\\') {
        out += "\\\\";
      } else if (c == U'\n') {
        out += "\\n";
      } else if (c == U'\t') {
        out += "\\t";
      } else if (c == U'\r') {
        out += "\\r";
      } else if (c < 0x20 || c == 0x7F) {
        static constexpr char hex[] = "0123456789abcdef";
        out += "\\x";
        out.push_back(hex[(c >> 4) & 0xF]);
        out.push_back(hex[c & 0xF]);
      } else {
        utf8::append(out, c);
      }
      out.push_back('\n');
    }
    return out;
  }

  static Vocab deserialize(std::string_view text) {
    std::vector<char32_t> symbols;
    std::size_t line_no = 0;
    while (!text.empty()) {
      ++line_no;
      const auto nl = text.find('\n');
      const std::string_view line = text.substr(0, nl);
      text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
      const auto cps = utf8::decode(line);
      char32_t sym = 0;
      if (cps.size() == 1 && cps[0] != U'\\') {
        sym = cps[0];
      } else if (cps.size() == 2 && cps[0] == U'\\') {
        switch (cps[1]) {
          case U'\\': sym = U'\\'; break;
          case U'n': sym = U'\n'; break;
          case U't': sym = U'\t'; break;
          case U'r': sym = U'\r'; break;
          default:
            throw Error("vocab line " + std::to_string(line_no) + ": bad escape");
        }
      } else if (cps.size() == 4 && cps[0] == U'\\' && cps[1] == U'x') {
        sym = static_cast<char32_t>(
            std::stoul(std::string{line.substr(2, 2)}, nullptr, 16));
      } else {
        throw Error("vocab line " + std::to_string(line_no) + ": malformed symbol");
      }
      symbols.push_back(sym);
    }
    return Vocab(std::move(symbols));
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path);
    os << serialize();
  }

  static Vocab load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read " + path);
    std::string text((std::istreambuf_iterator<char>(is)), {});
    return deserialize(text);
  }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.symbols_ == b.symbols_;
  }

 private:
  std::vector<char32_t> symbols_;
  std::unordered_map<char32_t, TokenId> index_;
};

inline Vocab build_char_vocab(std::string_view corpus) {
  if (corpus.empty()) throw Error("empty corpus");
  const auto cps = utf8::decode(corpus);
  std::set<char32_t> distinct(cps.begin(), cps.end());
  return Vocab(std::vector<char32_t>(distinct.begin(), distinct.end()));
}

inline void check_tokens(std::span<const TokenId> ids, int vocab_size) {
  for (TokenId id : ids) {
    if (id < 0 || id >= vocab_size) {
      throw Error("token id " + std::to_string(id) + " out of range for V=" +
                  std::to_string(vocab_size));
    }
  }
}

/// Probability vector over the vocabulary.
class Dist {
 public:
  static constexpr double kSumTolerance = 1e-9;

  Dist() = default;
  explicit Dist(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.empty()) throw Error("empty distribution");
    double sum = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw Error("negative or non-finite probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
      throw Error("distribution does not sum to 1");
    }
  }

  [[nodiscard]] int size() const { return static_cast<int>(probs_.size()); }
  [[nodiscard]] double operator[](TokenId i) const {
    return probs_[static_cast<std::size_t>(i)];
  }
  [[nodiscard]] std::span<const double> probs() const { return probs_; }

  friend bool operator==(const Dist&, const Dist&) = default;

 private:
  std::vector<double> probs_;
};

inline Dist normalize(std::span<const double> raw) {
  double sum = 0.0;
  for (double v : raw) {
    if (v < 0.0 || !std::isfinite(v)) throw Error("negative or non-finite weight");
    sum += v;
  }
  if (!(sum > 0.0)) throw Error("degenerate distribution");
  std::vector<double> out(raw.begin(), raw.end());
  for (double& v : out) v /= sum;
  return Dist(std::move(out));
}

/// norm(max(0, p - p_hat)): the resampling distribution after a rejection.
inline Dist residual_dist(const Dist& p, const Dist& p_hat) {
  if (p.size() != p_hat.size()) throw Error("distribution size mismatch");
  std::vector<double> diff(static_cast<std::size_t>(p.size()));
  bool any = false;
  for (int i = 0; i < p.size(); ++i) {
    diff[static_cast<std::size_t>(i)] = std::max(0.0, p[i] - p_hat[i]);
    any = any || diff[static_cast<std::size_t>(i)] > 0.0;
  }
  if (!any) throw Error("degenerate residual");
  return normalize(diff);
}

inline Dist softmax(std::span<const double> logits) {
  if (logits.empty()) throw Error("empty logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(mx)) throw Error("non-finite logits");
  std::vector<double> e(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) e[i] = std::exp(logits[i] - mx);
  return normalize(e);
}

/// Lowest index among the maxima.
inline TokenId argmax(const Dist& d) {
  const auto probs = d.probs();
  return static_cast<TokenId>(
      std::distance(probs.begin(), std::max_element(probs.begin(), probs.end())));
}

/// xoshiro256** seeded through splitmix64, written out so that draws are
/// identical on every platform and toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
  }

  std::uint64_t next() {
    const std::uint64_t result = std::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = std::rotl(state_[3], 45);
    return result;
  }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n) by rejection, no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw Error("Rng::below(0)");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % n;
  }

  // Box-Muller; consumes two uniforms per call.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
    }
  }

  // Independent stream for a sub-task (e.g. one decode session per prompt).
  [[nodiscard]] Rng fork(std::uint64_t stream) const {
    std::uint64_t mix = state_[0] ^ (stream * 0x9E3779B97F4A7C15ULL);
    return Rng(splitmix64(mix));
  }

 private:
  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_[4]{};
};

/// Inverse-CDF draw over index order using exactly one uniform.
inline TokenId sample(const Dist& d, Rng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  TokenId last_support = 0;
  for (int i = 0; i < d.size(); ++i) {
    if (d[i] > 0.0) last_support = i;
    cum += d[i];
    if (u < cum) return i;
  }
  return last_support;
}

}  // namespace sdlab
