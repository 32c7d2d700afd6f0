// Copyright (c) 2026 The RRLD Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace rrld {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matf = MatX<float>;
using Matd = MatX<double>;

// Error taxonomy. The CLI maps these onto its exit codes, so new failure
// modes should reuse one of the existing categories where possible.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

// splitmix64, used to derive independent seed streams from one root seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stable stream derivation: hash the root seed together with a label so that
// e.g. the split shuffle and the augmentation stream never collide.
inline std::uint64_t derive_seed(std::uint64_t root, const std::string& label) {
  std::uint64_t h = splitmix64(root);
  for (unsigned char c : label) h = splitmix64(h ^ c);
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t root, const std::string& label,
                                 std::uint64_t index) {
  return splitmix64(derive_seed(root, label) ^ splitmix64(index));
}

// Uniform double in [0,1). Hand-rolled on top of the engine's raw output so
// that streams are identical across standard library implementations.
template <typename Rng>
double uniform_real(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n).
template <typename Rng>
std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n == 0) throw ValueError("uniform_index: empty range");
  return rng() % n;
}

// Standard normal via Box-Muller (one value per call; the partner value is
// discarded to keep the stream layout trivial).
template <typename Rng>
double normal(Rng& rng) {
  double u1 = uniform_real(rng);
  double u2 = uniform_real(rng);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Truncated normal on [-2s, 2s] by rejection, as used for parameter init.
template <typename Rng>
double truncated_normal(Rng& rng, double stddev) {
  for (;;) {
    double z = normal(rng);
    if (std::fabs(z) <= 2.0) return z * stddev;
  }
}

}  // namespace rrld
