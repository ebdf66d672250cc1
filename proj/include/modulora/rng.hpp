// Copyright (c) 2026 modulora authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace modulora {

// Deterministic RNG with fully pinned-down derived distributions. mt19937_64
// output is identical everywhere; the uniform/gaussian mappings below avoid
// std::*_distribution, whose algorithms vary between standard libraries, so a
// seed reproduces the same stream on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller (cosine branch only, no cached spare: keeps the stream simple
  // to reason about).
  double gaussian() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double gaussian(double mean, double stddev) {
    return mean + stddev * gaussian();
  }

  // Index in [0, n). Modulo bias is irrelevant at the sizes used here.
  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(gen_() % n);
  }

 private:
  std::mt19937_64 gen_;
};

// Cheap stateless mix for deriving per-step / per-layer seeds from one root
// seed (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace modulora
