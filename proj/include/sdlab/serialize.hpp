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

// Flat little-endian model container:
//
//   "SDLB1" | kind (1 byte) | 4 x u32 dims | tensors as f64, row-major
//
// kind 1 = target LM, dims (window, embed, feature, vocab); tensors
//   embedding (vocab+1 x embed), hidden_w, hidden_b, head_w, head_b.
// kind 2 = draft head, dims of its target; tensors w, b.
// kind 3/4 = LDLP regression/classification, dims
//   (layers, embed, feature, outputs); tensors per layer w, b then out_w, out_b.

#include <Eigen/Dense>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "sdlab/toylm.hpp"

namespace sdlab {

inline constexpr char kModelMagic[5] = {'S', 'D', 'L', 'B', '1'};

enum class ModelKind : std::uint8_t {
  target = 1,
  draft = 2,
  ldlp_regression = 3,
  ldlp_classification = 4,
};

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) {
    std::array<unsigned char, 4> b{};
    for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b.data(), 4);
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    std::array<unsigned char, 8> b{};
    for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<unsigned char>(bits >> (8 * i));
    bytes(b.data(), 8);
  }
  template <typename Derived>
  void tensor(const Eigen::MatrixBase<Derived>& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
    }
  }

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& is) : is_(is) {}

  void bytes(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw Error("truncated binary file");
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::array<unsigned char, 4> b{};
    bytes(b.data(), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() {
    std::array<unsigned char, 8> b{};
    bytes(b.data(), 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
    return std::bit_cast<double>(bits);
  }
  template <typename Derived>
  void tensor(Eigen::MatrixBase<Derived>& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = f64();
    }
  }
  void expect_end() {
    if (is_.peek() != std::char_traits<char>::eof()) throw Error("trailing bytes in binary file");
  }

 private:
  std::istream& is_;
};

struct ContainerHeader {
  ModelKind kind;
  std::array<std::uint32_t, 4> dims;
};

inline void write_header(BinaryWriter& w, const ContainerHeader& h) {
  w.bytes(kModelMagic, sizeof kModelMagic);
  w.u8(static_cast<std::uint8_t>(h.kind));
  for (auto d : h.dims) w.u32(d);
}

inline ContainerHeader read_header(BinaryReader& r) {
  char magic[5];
  r.bytes(magic, 5);
  if (std::memcmp(magic, kModelMagic, 5) != 0) throw Error("bad model magic (expected SDLB1)");
  ContainerHeader h{};
  const auto kind = r.u8();
  if (kind < 1 || kind > 4) throw Error("unknown model kind " + std::to_string(kind));
  h.kind = static_cast<ModelKind>(kind);
  for (auto& d : h.dims) d = r.u32();
  return h;
}

inline void write_target(std::ostream& os, const TargetLM& lm) {
  BinaryWriter w(os);
  const auto& d = lm.dims;
  write_header(w, {ModelKind::target,
                   {static_cast<std::uint32_t>(d.window), static_cast<std::uint32_t>(d.embed),
                    static_cast<std::uint32_t>(d.feature), static_cast<std::uint32_t>(d.vocab)}});
  w.tensor(lm.embedding);
  w.tensor(lm.hidden_w);
  w.tensor(lm.hidden_b);
  w.tensor(lm.head_w);
  w.tensor(lm.head_b);
}

inline TargetLM read_target(std::istream& is) {
  BinaryReader r(is);
  const auto h = read_header(r);
  if (h.kind != ModelKind::target) throw Error("file does not hold a target model");
  LmDims dims{static_cast<int>(h.dims[0]), static_cast<int>(h.dims[1]),
              static_cast<int>(h.dims[2]), static_cast<int>(h.dims[3])};
  TargetLM lm = TargetLM::zeros(dims);
  r.tensor(lm.embedding);
  r.tensor(lm.hidden_w);
  r.tensor(lm.hidden_b);
  r.tensor(lm.head_w);
  r.tensor(lm.head_b);
  r.expect_end();
  if (!lm.embedding.row(dims.vocab).isZero(0.0)) throw Error("pad embedding row must be zero");
  return lm;
}

inline void write_draft(std::ostream& os, const DraftHead& dh) {
  BinaryWriter w(os);
  const auto& d = dh.target->dims;
  write_header(w, {ModelKind::draft,
                   {static_cast<std::uint32_t>(d.window), static_cast<std::uint32_t>(d.embed),
                    static_cast<std::uint32_t>(d.feature), static_cast<std::uint32_t>(d.vocab)}});
  w.tensor(dh.w);
  w.tensor(dh.b);
}

inline DraftHead read_draft(std::istream& is, std::shared_ptr<const TargetLM> target) {
  BinaryReader r(is);
  const auto h = read_header(r);
  if (h.kind != ModelKind::draft) throw Error("file does not hold a draft head");
  const auto& d = target->dims;
  if (h.dims != std::array<std::uint32_t, 4>{static_cast<std::uint32_t>(d.window),
                                             static_cast<std::uint32_t>(d.embed),
                                             static_cast<std::uint32_t>(d.feature),
                                             static_cast<std::uint32_t>(d.vocab)}) {
    throw Error("draft head dims do not match target model");
  }
  DraftHead dh = DraftHead::zeros(std::move(target));
  r.tensor(dh.w);
  r.tensor(dh.b);
  r.expect_end();
  return dh;
}

template <typename Fn>
void write_file(const std::string& path, Fn&& fn) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  fn(os);
  if (!os) throw Error("write failed for " + path);
}

template <typename Fn>
auto read_file(const std::string& path, Fn&& fn) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path);
  return fn(is);
}

}  // namespace sdlab
