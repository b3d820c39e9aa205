// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0
//
// Bit-exact emulation of the E5M2, E4M3 and E3M4 8-bit floating-point
// formats. Codes are laid out as [sign | exponent | mantissa], MSB first.
//
// E5M2 follows IEEE-754 conventions (infinities, NaN for every nonzero
// mantissa under an all-ones exponent). E4M3 and E3M4 use the extended
// encoding: the all-ones exponent holds ordinary finite values and only the
// all-ones exponent+mantissa pattern (either sign) is NaN.

#ifndef FP8Q_FORMAT_HPP_
#define FP8Q_FORMAT_HPP_

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fp8q {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class EncodingClass { kIeeeLike, kExtended };

enum class Fp8Kind { kE5M2, kE4M3, kE3M4 };

class Fp8FormatSpec {
 public:
  static constexpr Fp8FormatSpec e5m2() {
    return {Fp8Kind::kE5M2, 5, 2, 15, EncodingClass::kIeeeLike};
  }
  static constexpr Fp8FormatSpec e4m3() {
    return {Fp8Kind::kE4M3, 4, 3, 7, EncodingClass::kExtended};
  }
  static constexpr Fp8FormatSpec e3m4() {
    return {Fp8Kind::kE3M4, 3, 4, 3, EncodingClass::kExtended};
  }
  static constexpr Fp8FormatSpec of(Fp8Kind kind) {
    switch (kind) {
      case Fp8Kind::kE5M2: return e5m2();
      case Fp8Kind::kE4M3: return e4m3();
      case Fp8Kind::kE3M4: return e3m4();
    }
    return e4m3();
  }
  static constexpr std::array<Fp8FormatSpec, 3> all() {
    return {e5m2(), e4m3(), e3m4()};
  }

  constexpr Fp8Kind kind() const { return kind_; }
  constexpr int exp_bits() const { return exp_bits_; }
  constexpr int man_bits() const { return man_bits_; }
  constexpr int bias() const { return bias_; }
  constexpr EncodingClass encoding() const { return encoding_; }
  constexpr bool has_infinity() const { return encoding_ == EncodingClass::kIeeeLike; }

  constexpr std::uint8_t exp_mask() const { return static_cast<std::uint8_t>((1u << exp_bits_) - 1u); }
  constexpr std::uint8_t man_mask() const { return static_cast<std::uint8_t>((1u << man_bits_) - 1u); }

  // Largest stored exponent field that encodes finite normal values.
  constexpr int max_normal_exp_field() const {
    return has_infinity() ? (1 << exp_bits_) - 2 : (1 << exp_bits_) - 1;
  }
  // Largest mantissa field usable at max_normal_exp_field().
  constexpr int max_normal_man_field() const {
    return has_infinity() ? (1 << man_bits_) - 1 : (1 << man_bits_) - 2;
  }

  std::string_view name() const {
    switch (kind_) {
      case Fp8Kind::kE5M2: return "E5M2";
      case Fp8Kind::kE4M3: return "E4M3";
      case Fp8Kind::kE3M4: return "E3M4";
    }
    return "?";
  }

  friend constexpr bool operator==(const Fp8FormatSpec& a, const Fp8FormatSpec& b) {
    return a.kind_ == b.kind_;
  }

 private:
  constexpr Fp8FormatSpec(Fp8Kind kind, int e, int m, int b, EncodingClass enc)
      : kind_(kind), exp_bits_(e), man_bits_(m), bias_(b), encoding_(enc) {}

  Fp8Kind kind_;
  int exp_bits_;
  int man_bits_;
  int bias_;
  EncodingClass encoding_;
};

static_assert(1 + Fp8FormatSpec::e5m2().exp_bits() + Fp8FormatSpec::e5m2().man_bits() == 8);
static_assert(1 + Fp8FormatSpec::e4m3().exp_bits() + Fp8FormatSpec::e4m3().man_bits() == 8);
static_assert(1 + Fp8FormatSpec::e3m4().exp_bits() + Fp8FormatSpec::e3m4().man_bits() == 8);

inline Fp8FormatSpec parse_fp8_format(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "e5m2") return Fp8FormatSpec::e5m2();
  if (lower == "e4m3") return Fp8FormatSpec::e4m3();
  if (lower == "e3m4") return Fp8FormatSpec::e3m4();
  throw Error("unknown FP8 format: " + std::string(name));
}

enum class Fp8Class { kZero, kSubnormal, kNormal, kInfinity, kNaN };

struct Fp8Code {
  std::uint8_t bits = 0;
  Fp8FormatSpec format = Fp8FormatSpec::e4m3();

  constexpr bool sign() const { return (bits & 0x80u) != 0; }
  constexpr int exp_field() const { return (bits >> format.man_bits()) & format.exp_mask(); }
  constexpr int man_field() const { return bits & format.man_mask(); }

  constexpr Fp8Class classify() const {
    const int e = exp_field();
    const int m = man_field();
    const int e_all = format.exp_mask();
    if (format.has_infinity()) {
      if (e == e_all) return m == 0 ? Fp8Class::kInfinity : Fp8Class::kNaN;
    } else if (e == e_all && m == format.man_mask()) {
      return Fp8Class::kNaN;
    }
    if (e == 0) return m == 0 ? Fp8Class::kZero : Fp8Class::kSubnormal;
    return Fp8Class::kNormal;
  }

  friend constexpr bool operator==(const Fp8Code& a, const Fp8Code& b) {
    return a.bits == b.bits && a.format == b.format;
  }
};

enum class Rounding { kNearestEven };
enum class OverflowPolicy { kSaturate, kToSpecial };

struct RoundingMode {
  Rounding rounding = Rounding::kNearestEven;
  OverflowPolicy overflow = OverflowPolicy::kSaturate;
};

struct FormatParams {
  double max_finite;
  double min_normal;
  double min_subnormal;
  int bias;
};

// Closed forms; tests check them against enumerate_values().
inline FormatParams format_params(const Fp8FormatSpec& f) {
  const int m = f.man_bits();
  const double top_mantissa = 1.0 + std::ldexp(static_cast<double>(f.max_normal_man_field()), -m);
  return FormatParams{
      .max_finite = std::ldexp(top_mantissa, f.max_normal_exp_field() - f.bias()),
      .min_normal = std::ldexp(1.0, 1 - f.bias()),
      .min_subnormal = std::ldexp(1.0, 1 - f.bias() - m),
      .bias = f.bias(),
  };
}

namespace detail {

inline std::uint8_t pack(const Fp8FormatSpec& f, bool sign, int exp_field, int man_field) {
  return static_cast<std::uint8_t>((sign ? 0x80u : 0u) |
                                   (static_cast<unsigned>(exp_field) << f.man_bits()) |
                                   static_cast<unsigned>(man_field));
}

inline std::uint8_t max_finite_bits(const Fp8FormatSpec& f, bool sign) {
  return pack(f, sign, f.max_normal_exp_field(), f.max_normal_man_field());
}

// Ties-to-even without depending on the floating-point environment.
inline double round_half_even(double y) {
  const double fl = std::floor(y);
  const double diff = y - fl;
  if (diff > 0.5) return fl + 1.0;
  if (diff < 0.5) return fl;
  return std::fmod(fl, 2.0) == 0.0 ? fl : fl + 1.0;
}

}  // namespace detail

inline Fp8Code canonical_nan(const Fp8FormatSpec& f) {
  // E5M2: quiet NaN 0.11111.10; extended formats: 0.1111.111 / 0.111.1111.
  const int man = f.has_infinity() ? (1 << (f.man_bits() - 1)) : f.man_mask();
  return {detail::pack(f, false, f.exp_mask(), man), f};
}

inline Fp8Code infinity_code(const Fp8FormatSpec& f, bool negative) {
  if (!f.has_infinity()) throw Error(std::string(f.name()) + " has no infinity encoding");
  return {detail::pack(f, negative, f.exp_mask(), 0), f};
}

inline double decode(const Fp8Code& code) {
  const Fp8FormatSpec& f = code.format;
  const double sign = code.sign() ? -1.0 : 1.0;
  switch (code.classify()) {
    case Fp8Class::kNaN: return std::numeric_limits<double>::quiet_NaN();
    case Fp8Class::kInfinity: return sign * std::numeric_limits<double>::infinity();
    case Fp8Class::kZero: return sign * 0.0;
    case Fp8Class::kSubnormal:
      return sign * std::ldexp(static_cast<double>(code.man_field()), 1 - f.bias() - f.man_bits());
    case Fp8Class::kNormal: {
      const double frac = static_cast<double>((1 << f.man_bits()) + code.man_field());
      return sign * std::ldexp(frac, code.exp_field() - f.bias() - f.man_bits());
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

inline Fp8Code encode(double x, const Fp8FormatSpec& f, RoundingMode mode = {}) {
  if (mode.overflow == OverflowPolicy::kToSpecial && !f.has_infinity()) {
    throw Error("to_special overflow requires a format with infinities");
  }
  if (std::isnan(x)) return canonical_nan(f);
  const bool neg = std::signbit(x);
  const double a = std::fabs(x);
  const auto overflow = [&]() -> Fp8Code {
    if (mode.overflow == OverflowPolicy::kToSpecial) return infinity_code(f, neg);
    return {detail::max_finite_bits(f, neg), f};
  };
  const Fp8Code zero{detail::pack(f, neg, 0, 0), f};
  if (std::isinf(a)) return overflow();
  if (a == 0.0) return zero;

  const int m = f.man_bits();
  const int min_exp = 1 - f.bias();
  const int max_exp = f.max_normal_exp_field() - f.bias();
  // floor(log2 a) straight from the binary64 exponent field.
  const int e = static_cast<int>(std::bit_cast<std::uint64_t>(a) >> 52) - 1023;
  if (e > max_exp + 1) return overflow();
  if (e < min_exp - m - 2) return zero;  // below half the smallest subnormal

  const int unbiased = std::max(e, min_exp);
  const int quantum_exp = unbiased - m;
  // Exact power-of-two scaling, then round half to even by the 2^52 trick
  // (valid for 0 <= y < 2^52 under the default rounding mode).
  const double y = a * std::bit_cast<double>(static_cast<std::uint64_t>(1023 - quantum_exp) << 52);
  const auto k = static_cast<int>((y + 0x1p52) - 0x1p52);
  if (k == 0) return zero;

  int stored = unbiased + f.bias();
  int man = k - (1 << m);
  if (unbiased == min_exp && k < (1 << m)) {
    stored = 0;
    man = k;
  } else if (k == (2 << m)) {
    ++stored;
    man = 0;
  }
  if (stored > f.max_normal_exp_field() || (stored == f.max_normal_exp_field() && man > f.max_normal_man_field())) {
    return overflow();
  }
  return {detail::pack(f, neg, stored, man), f};
}

inline double fake_quant_value(double x, const Fp8FormatSpec& f, RoundingMode mode = {}) {
  return decode(encode(x, f, mode));
}

struct CodeValue {
  std::uint8_t bits;
  double value;
};

// Every finite code (both zeros included), ascending by value, -0 before +0.
inline std::vector<CodeValue> enumerate_values(const Fp8FormatSpec& f) {
  std::vector<CodeValue> out;
  out.reserve(256);
  for (unsigned b = 0; b < 256; ++b) {
    const Fp8Code c{static_cast<std::uint8_t>(b), f};
    const Fp8Class cls = c.classify();
    if (cls == Fp8Class::kNaN || cls == Fp8Class::kInfinity) continue;
    out.push_back({c.bits, decode(c)});
  }
  std::sort(out.begin(), out.end(), [](const CodeValue& a, const CodeValue& b) {
    if (a.value != b.value) return a.value < b.value;
    return std::signbit(a.value) && !std::signbit(b.value);
  });
  return out;
}

struct CodeCensus {
  int finite = 0;
  int nan = 0;
  int infinity = 0;
  int subnormal = 0;
};

inline CodeCensus census(const Fp8FormatSpec& f) {
  CodeCensus c;
  for (unsigned b = 0; b < 256; ++b) {
    switch (Fp8Code{static_cast<std::uint8_t>(b), f}.classify()) {
      case Fp8Class::kNaN: ++c.nan; break;
      case Fp8Class::kInfinity: ++c.infinity; break;
      case Fp8Class::kSubnormal: ++c.subnormal; ++c.finite; break;
      default: ++c.finite; break;
    }
  }
  return c;
}

}  // namespace fp8q

#endif  // FP8Q_FORMAT_HPP_
