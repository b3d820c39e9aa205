// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic random source ("fp8q-rng-v1").
//
// Engine std::mt19937_64; distributions defined here bit-for-bit:
//   uniform()  = (next() >> 11) * 2^-53            in [0, 1)
//   normal()   = Box-Muller on two uniforms, cosine branch then sine branch
//   below(n)   = rejection sampling on next() to avoid modulo bias

#ifndef FP8Q_RANDOM_HPP_
#define FP8Q_RANDOM_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace fp8q {

class Rng {
 public:
  static constexpr const char* kName = "fp8q-rng-v1";

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (spare_) {
      const double s = *spare_;
      spare_.reset();
      return s;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next();
    while (v >= limit) v = next();
    return v % n;
  }

  bool coin() { return (next() >> 63) != 0; }

  // k distinct indices from [0, n), in selection order (partial Fisher-Yates).
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    k = std::min(k, n);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(n - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

  // Child stream for a labelled sub-task. Does not advance this one.
  Rng fork(std::uint64_t label) const {
    std::uint64_t z = seed_mix(label);
    return Rng(z);
  }

 private:
  std::uint64_t seed_mix(std::uint64_t label) const {
    // splitmix64 over (first engine output of a copy) ^ label.
    std::mt19937_64 copy = engine_;
    std::uint64_t z = copy() ^ (label * 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

}  // namespace fp8q

#endif  // FP8Q_RANDOM_HPP_
