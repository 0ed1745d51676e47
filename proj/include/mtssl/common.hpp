// mtssl/common.hpp

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

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace mtssl {

inline constexpr const char* kVersion = "0.3.0";

/// Row-major dense matrix used for feature frames and model tensors.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Error taxonomy. Each class maps onto one CLI exit code (see ExitCodeFor).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class UsageError : public Error {
 public:
  using Error::Error;
};
class DataError : public Error {
 public:
  using Error::Error;
};
class ShapeError : public DataError {
 public:
  using DataError::DataError;
};
class ConfigError : public DataError {
 public:
  using DataError::DataError;
};
class DependencyError : public DataError {
 public:
  using DataError::DataError;
};
class NumericalError : public Error {
 public:
  using Error::Error;
};

inline int ExitCodeFor(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return 1;
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  return 2;
}

template <typename... Args>
std::string StrCat(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

/// 64-bit Mersenne twister with explicitly defined conversions, so streams are
/// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t NextU64() { return engine_(); }

  /// Uniform in [0, 1).
  double Uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int64_t UniformInt(int64_t lo, int64_t hi) {
    if (hi <= lo) return lo;
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    // rejection sampling to avoid modulo bias
    const uint64_t limit = std::numeric_limits<uint64_t>::max() -
                           std::numeric_limits<uint64_t>::max() % span;
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return lo + static_cast<int64_t>(x % span);
  }

  bool Bernoulli(double p) { return Uniform() < p; }

  /// Box-Muller standard normal.
  double Normal() {
    double u1 = Uniform();
    while (u1 <= 0.0) u1 = Uniform();
    const double u2 = Uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  std::string SaveState() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }
  void LoadState(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (!is) throw DataError("corrupt RNG state");
  }

 private:
  std::mt19937_64 engine_;
};

/// Derives an independent seed for item `index` of a stream seeded by `master`
/// (splitmix64 finalizer), so workers can regenerate any element in isolation.
inline uint64_t DeriveSeed(uint64_t master, uint64_t index) {
  uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// FNV-1a 64-bit content hash.
inline uint64_t Fnv1a(std::string_view data, uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string HexU64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
  return s;
}

inline double LogSumExp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

inline bool AllFinite(const Matrix& m) { return m.allFinite(); }

}  // namespace mtssl
