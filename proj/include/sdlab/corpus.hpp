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

// Corpus handling: documents, deterministic splits, prompts, and two
// generators (short English-like stories, and periodic strings for exact
// tests).

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sdlab/tokencore.hpp"

namespace sdlab {

/// Documents are separated by one or more blank lines. Surrounding
/// whitespace is trimmed; empty documents are dropped.
inline std::vector<std::string> split_documents(std::string_view text) {
  std::vector<std::string> docs;
  std::string cur;
  auto flush = [&] {
    const auto b = cur.find_first_not_of(" \t\r\n");
    if (b != std::string::npos) {
      const auto e = cur.find_last_not_of(" \t\r\n");
      docs.push_back(cur.substr(b, e - b + 1));
    }
    cur.clear();
  };
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = text.substr(pos, nl - pos);
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      flush();
    } else {
      if (!cur.empty()) cur.push_back('\n');
      cur.append(line);
    }
    pos = nl + 1;
  }
  flush();
  return docs;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Vocabulary over the documents plus the terminator symbol.
inline Vocab corpus_vocab(const std::vector<std::string>& docs) {
  std::string all;
  for (const auto& d : docs) all += d;
  utf8::append(all, kTerminatorSymbol);
  return build_char_vocab(all);
}

/// Each document encoded and followed by the terminator.
inline std::vector<TokenSeq> encode_documents(const Vocab& vocab, const std::vector<std::string>& docs) {
  const TokenId term = vocab.terminator().value();
  std::vector<TokenSeq> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    auto ids = vocab.encode(d);
    ids.push_back(term);
    out.push_back(std::move(ids));
  }
  return out;
}

struct CorpusSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> ldlp;
  std::vector<std::size_t> eval;
};

/// Document-level split after a seeded shuffle. The first two parts get
/// round(ratio * n) documents; the third gets the rest.
inline CorpusSplit split_corpus(std::size_t n_docs, const std::array<double, 3>& ratios,
                                std::uint64_t seed) {
  double sum = 0.0;
  for (double r : ratios) {
    if (r < 0.0 || !std::isfinite(r)) throw Error("split ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error("split ratios must sum to 1");
  if (n_docs == 0) throw Error("too few documents");

  std::vector<std::size_t> idx(n_docs);
  for (std::size_t i = 0; i < n_docs; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);

  const auto n = static_cast<double>(n_docs);
  const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * n));
  const auto n_ldlp = std::min(n_docs - n_train, static_cast<std::size_t>(std::llround(ratios[1] * n)));
  const std::array<std::size_t, 3> sizes{n_train, n_ldlp, n_docs - n_train - n_ldlp};
  for (int i = 0; i < 3; ++i) {
    if (ratios[static_cast<std::size_t>(i)] > 0.0 && sizes[static_cast<std::size_t>(i)] == 0) {
      throw Error("too few documents");
    }
  }
  CorpusSplit s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.ldlp.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_ldlp));
  s.eval.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_ldlp), idx.end());
  return s;
}

template <typename T>
std::vector<T> pick(const std::vector<T>& all, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

/// First `len` tokens of each document, never including its terminator.
inline std::vector<TokenSeq> make_prompts(const std::vector<TokenSeq>& docs, std::size_t len) {
  std::vector<TokenSeq> out;
  for (const auto& d : docs) {
    const std::size_t body = d.empty() ? 0 : d.size() - 1;
    const std::size_t n = std::min(len, body);
    if (n == 0) continue;
    out.emplace_back(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n));
  }
  return out;
}

/// Synthetic documents that repeat `unit` to `length` characters.
inline std::string periodic_corpus(std::string_view unit, std::size_t length, std::size_t docs) {
  if (unit.empty()) throw Error("empty period");
  std::string out;
  for (std::size_t d = 0; d < docs; ++d) {
    if (d) out += "\n\n";
    for (std::size_t i = 0; i < length; ++i) out.push_back(unit[i % unit.size()]);
  }
  return out;
}

namespace detail {

struct Lexicon {
  std::vector<std::string_view> names{"Anna", "Ben", "Clara", "Daniel", "Ella", "Felix", "Grace",
                                      "Henry", "Iris", "Jack", "Lena", "Martin", "Nora", "Oscar",
                                      "Rose", "Samuel", "Tom", "Violet"};
  std::vector<std::string_view> animals{"cat", "dog", "fox", "horse", "rabbit", "owl", "goat",
                                        "sparrow", "duck", "mouse"};
  std::vector<std::string_view> things{"basket", "lantern", "letter", "boat", "garden", "kettle",
                                       "ribbon", "window", "blanket", "bicycle", "map", "bell",
                                       "apple", "candle", "hat", "book"};
  std::vector<std::string_view> places{"village", "forest", "river", "market", "hill", "harbor",
                                       "meadow", "kitchen", "station", "library", "orchard",
                                       "bridge"};
  std::vector<std::string_view> adjectives{"little", "old", "quiet", "bright", "small", "warm",
                                           "green", "red", "tired", "happy", "gentle", "strange",
                                           "golden", "cold"};
  std::vector<std::string_view> verbs{"found", "carried", "painted", "lost", "opened", "cleaned",
                                      "watched", "mended", "followed", "shared", "hid", "noticed"};
  std::vector<std::string_view> motions{"walked", "ran", "hurried", "wandered", "went", "rode"};
  std::vector<std::string_view> times{"morning", "evening", "afternoon", "night", "spring",
                                      "winter", "summer"};
  std::vector<std::string_view> feelings{"glad", "sleepy", "curious", "proud", "worried",
                                         "hungry", "calm"};
};

// Zipf-like choice: low indices are more frequent.
inline std::string_view choose(Rng& rng, const std::vector<std::string_view>& v) {
  const double u = rng.uniform();
  const auto i = static_cast<std::size_t>(std::floor(std::pow(u, 1.8) * static_cast<double>(v.size())));
  return v[std::min(i, v.size() - 1)];
}

}  // namespace detail

/// English-like short stories from a small template grammar.
inline std::string story_corpus(std::size_t n_docs, std::uint64_t seed) {
  const detail::Lexicon lx;
  Rng rng(seed);
  std::string out;
  auto w = [&](const std::vector<std::string_view>& v) { return std::string(detail::choose(rng, v)); };
  for (std::size_t d = 0; d < n_docs; ++d) {
    if (d) out += "\n\n";
    const std::string hero = w(lx.names);
    const std::string friend_name = w(lx.names);
    const std::string pet = w(lx.animals);
    const std::string place = w(lx.places);
    std::string doc = "Once upon a time, " + hero + " lived near the " + place + " with a " +
                      w(lx.adjectives) + " " + pet + ".";
    const auto sentences = 6 + rng.below(8);
    for (std::uint64_t s = 0; s < sentences; ++s) {
      doc += ' ';
      switch (rng.below(7)) {
        case 0:
          doc += "One " + w(lx.times) + ", " + hero + " " + w(lx.motions) + " to the " +
                 w(lx.places) + ".";
          break;
        case 1:
          doc += hero + " " + w(lx.verbs) + " the " + w(lx.adjectives) + " " + w(lx.things) +
                 " by the " + w(lx.places) + ".";
          break;
        case 2:
          doc += "The " + pet + " was " + w(lx.adjectives) + " and " + w(lx.feelings) + ".";
          break;
        case 3:
          doc += "\"Look at the " + w(lx.things) + "!\" said " + friend_name + ".";
          break;
        case 4:
          doc += hero + " and " + friend_name + " " + w(lx.verbs) + " a " + w(lx.things) +
                 " in the " + w(lx.places) + ".";
          break;
        case 5:
          doc += "In the " + w(lx.times) + ", the " + pet + " " + w(lx.motions) + " to the " +
                 w(lx.places) + ".";
          break;
        default:
          doc += hero + " felt " + w(lx.feelings) + " and went home.";
          break;
      }
    }
    out += doc;
  }
  out.push_back('\n');
  return out;
}

}  // namespace sdlab
