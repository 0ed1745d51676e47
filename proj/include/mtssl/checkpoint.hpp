// mtssl/checkpoint.hpp

// Copyright 2026  mtssl authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.
#pragma once

// Checkpoint container:
//   "MTCK" | u32 version
//   u32 n_config  { str key, str value }*
//   str rng_state
//   u32 n_tensors { str name, u32 rows, u32 cols, rows*cols f64 little-endian }*
// where str = u32 byte length + bytes. Readers look tensors up by name, so
// fields may be added without breaking older files.

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "mtssl/common.hpp"
#include "mtssl/featext.hpp"
#include "mtssl/params.hpp"

namespace mtssl {

inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, std::string> config;
  std::string rng_state;
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix* Find(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return &m;
    return nullptr;
  }
  std::string ConfigOr(const std::string& key, const std::string& fallback) const {
    auto it = config.find(key);
    return it == config.end() ? fallback : it->second;
  }
};

inline Checkpoint CaptureCheckpoint(const ParameterSet& ps, std::map<std::string, std::string> config,
                                    std::string rng_state = {}) {
  Checkpoint ck;
  ck.config = std::move(config);
  ck.rng_state = std::move(rng_state);
  for (const auto& [name, v] : ps.items()) ck.tensors.emplace_back(name, v->value);
  return ck;
}

/// Copies every tensor whose name starts with one of `prefixes` (all when
/// empty) into `ps`. Returns the number of tensors restored.
inline int RestoreParameters(const Checkpoint& ck, const ParameterSet& ps, const std::vector<std::string>& prefixes = {}) {
  int restored = 0;
  for (const auto& [name, m] : ck.tensors) {
    bool wanted = prefixes.empty();
    for (const auto& p : prefixes) wanted |= name.rfind(p, 0) == 0;
    if (!wanted || !ps.Has(name)) continue;
    auto& dst = ps.Get(name)->value;
    if (dst.rows() != m.rows() || dst.cols() != m.cols())
      throw ConfigError(StrCat("checkpoint tensor ", name, " is ", m.rows(), "x", m.cols(), ", model expects ",
                               dst.rows(), "x", dst.cols()));
    dst = m;
    ++restored;
  }
  return restored;
}

namespace detail {
inline void PutStr(std::string& out, const std::string& s) {
  PutLe32(out, static_cast<uint32_t>(s.size()));
  out += s;
}
struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;
  void Need(std::size_t n) const {
    if (pos + n > bytes.size()) throw DataError("truncated checkpoint");
  }
  uint32_t U32() {
    Need(4);
    const uint32_t v = ReadLe32(reinterpret_cast<const unsigned char*>(bytes.data()) + pos);
    pos += 4;
    return v;
  }
  std::string Str() {
    const uint32_t n = U32();
    Need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
  double F64() {
    Need(8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= uint64_t(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 8;
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
};
}  // namespace detail

inline std::string EncodeCheckpoint(const Checkpoint& ck) {
  std::string out = "MTCK";
  detail::PutLe32(out, kCheckpointVersion);
  detail::PutLe32(out, static_cast<uint32_t>(ck.config.size()));
  for (const auto& [k, v] : ck.config) {
    detail::PutStr(out, k);
    detail::PutStr(out, v);
  }
  detail::PutStr(out, ck.rng_state);
  detail::PutLe32(out, static_cast<uint32_t>(ck.tensors.size()));
  for (const auto& [name, m] : ck.tensors) {
    detail::PutStr(out, name);
    detail::PutLe32(out, static_cast<uint32_t>(m.rows()));
    detail::PutLe32(out, static_cast<uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      uint64_t bits;
      std::memcpy(&bits, m.data() + i, 8);
      for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
  return out;
}

inline Checkpoint DecodeCheckpoint(const std::string& bytes) {
  if (bytes.size() < 8 || bytes.compare(0, 4, "MTCK") != 0) throw DataError("bad checkpoint magic");
  detail::Reader r{bytes, 4};
  const uint32_t version = r.U32();
  if (version == 0 || version > kCheckpointVersion) throw DataError(StrCat("unsupported checkpoint version ", version));
  Checkpoint ck;
  for (uint32_t n = r.U32(), i = 0; i < n; ++i) {
    std::string k = r.Str();
    ck.config[k] = r.Str();
  }
  ck.rng_state = r.Str();
  for (uint32_t n = r.U32(), i = 0; i < n; ++i) {
    std::string name = r.Str();
    const uint32_t rows = r.U32(), cols = r.U32();
    r.Need(std::size_t(rows) * cols * 8);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = r.F64();
    ck.tensors.emplace_back(std::move(name), std::move(m));
  }
  return ck;
}

inline void WriteCheckpoint(const std::string& path, const Checkpoint& ck) {
  detail::WriteFile(path, EncodeCheckpoint(ck));
}
inline Checkpoint ReadCheckpoint(const std::string& path) { return DecodeCheckpoint(detail::ReadFile(path)); }

}  // namespace mtssl
