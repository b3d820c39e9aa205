// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference implementations used only by tests. Deliberately slow and
// written from the bit-field definitions, sharing no code with the library.

#ifndef FP8Q_TESTS_ORACLES_HPP_
#define FP8Q_TESTS_ORACLES_HPP_

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "fp8q/format.hpp"

namespace fp8q::test {

struct OracleValue {
  std::uint8_t bits;
  double value;
};

// Finite values decoded from the field formula, NaN/inf slots excluded.
inline std::vector<OracleValue> oracle_values(const Fp8FormatSpec& f) {
  std::vector<OracleValue> out;
  const int eb = f.exp_bits(), mb = f.man_bits();
  const unsigned emax = (1u << eb) - 1;
  for (unsigned b = 0; b < 256; ++b) {
    const unsigned exp = (b >> mb) & emax;
    const unsigned man = b & ((1u << mb) - 1);
    if (f.has_infinity() && exp == emax) continue;
    if (!f.has_infinity() && (b & 0x7F) == 0x7F) continue;
    const double sign = (b & 0x80) ? -1.0 : 1.0;
    const double v = exp == 0 ? std::ldexp(static_cast<double>(man), 1 - f.bias() - mb)
                              : std::ldexp(static_cast<double>((1u << mb) + man), static_cast<int>(exp) - f.bias() - mb);
    out.push_back({static_cast<std::uint8_t>(b), sign * v});
  }
  return out;
}

// Nearest finite value by linear scan; ties go to the even code. Values
// beyond the max finite saturate. NaN maps to 0x7F (or the E5M2 quiet NaN).
inline Fp8Code brute_force_encode(double x, const Fp8FormatSpec& f) {
  if (std::isnan(x)) return canonical_nan(f);
  const bool neg = std::signbit(x);
  const double a = std::fabs(x);
  const auto vals = oracle_values(f);
  double best_err = std::numeric_limits<double>::infinity();
  std::uint8_t best = 0;
  for (const auto& v : vals) {
    if ((v.bits & 0x80) != 0) continue;
    const double err = std::fabs(v.value - a);
    if (err < best_err || (err == best_err && (v.bits & 1) == 0 && (best & 1) != 0)) {
      best_err = err;
      best = v.bits;
    }
  }
  return Fp8Code{static_cast<std::uint8_t>(best | (neg ? 0x80 : 0x00)), f};
}

}  // namespace fp8q::test

#endif  // FP8Q_TESTS_ORACLES_HPP_
