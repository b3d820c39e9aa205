// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tensor-level scaling quantizer.
//
// A tensor T is mapped into the target format's range with a multiplicative
// scale s = float_max / max_T, encoded elementwise, and decoded back with a
// division by s. max_T is either the tensor's own absmax or a calibrated
// override. Weights use one scale per output channel, activations one scale
// per tensor.

#ifndef FP8Q_QUANTIZER_HPP_
#define FP8Q_QUANTIZER_HPP_

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fp8q/format.hpp"
#include "fp8q/tensor.hpp"

namespace fp8q {

// FP8 formats plus the symmetric INT8 baseline.
enum class DType { kE5M2, kE4M3, kE3M4, kInt8 };

inline constexpr DType kAllDTypes[] = {DType::kE5M2, DType::kE4M3, DType::kE3M4, DType::kInt8};

inline constexpr bool is_fp8(DType d) { return d != DType::kInt8; }

inline Fp8FormatSpec fp8_spec(DType d) {
  switch (d) {
    case DType::kE5M2: return Fp8FormatSpec::e5m2();
    case DType::kE4M3: return Fp8FormatSpec::e4m3();
    case DType::kE3M4: return Fp8FormatSpec::e3m4();
    case DType::kInt8: break;
  }
  throw Error("INT8 has no FP8 format spec");
}

inline DType dtype_of(const Fp8FormatSpec& f) {
  switch (f.kind()) {
    case Fp8Kind::kE5M2: return DType::kE5M2;
    case Fp8Kind::kE4M3: return DType::kE4M3;
    case Fp8Kind::kE3M4: return DType::kE3M4;
  }
  return DType::kE4M3;
}

inline std::string_view dtype_name(DType d) {
  switch (d) {
    case DType::kE5M2: return "E5M2";
    case DType::kE4M3: return "E4M3";
    case DType::kE3M4: return "E3M4";
    case DType::kInt8: return "INT8";
  }
  return "?";
}

inline DType parse_dtype(std::string_view name) {
  std::string lower(name);
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "int8") return DType::kInt8;
  return dtype_of(parse_fp8_format(lower));
}

// Largest magnitude the scaled tensor is mapped onto.
inline double dtype_max(DType d) {
  return is_fp8(d) ? format_params(fp8_spec(d)).max_finite : 127.0;
}

struct QuantGranularity {
  enum class Kind { kPerTensor, kPerChannel };
  Kind kind = Kind::kPerTensor;
  std::size_t axis = 0;

  static QuantGranularity per_tensor() { return {}; }
  static QuantGranularity per_channel(std::size_t axis) { return {Kind::kPerChannel, axis}; }
  bool is_per_channel() const { return kind == Kind::kPerChannel; }

  friend bool operator==(const QuantGranularity&, const QuantGranularity&) = default;
};

struct QuantParams {
  DType dtype = DType::kE4M3;
  std::vector<double> scales;  // one entry per tensor, or one per channel
  QuantGranularity granularity;
};

struct QuantizedTensor {
  Shape shape;
  std::vector<std::uint8_t> codes;  // FP8 codes, or two's-complement INT8
  QuantParams params;
};

// s = float_max / max_T. An all-zero tensor gets scale 1.
inline double compute_scale(double max_t, DType dtype) {
  if (!std::isfinite(max_t)) throw Error("compute_scale: max_T must be finite");
  if (max_t < 0.0) throw Error("compute_scale: max_T must be non-negative");
  if (max_t == 0.0) return 1.0;
  return dtype_max(dtype) / max_t;
}

inline double compute_scale(double max_t, const Fp8FormatSpec& f) {
  return compute_scale(max_t, dtype_of(f));
}

namespace detail {

inline std::uint8_t quantize_element(double scaled, DType dtype) {
  if (is_fp8(dtype)) return encode(scaled, fp8_spec(dtype)).bits;
  double q = round_half_even(scaled);
  q = std::clamp(q, -127.0, 127.0);
  return static_cast<std::uint8_t>(static_cast<std::int8_t>(q));
}

inline double dequantize_element(std::uint8_t code, DType dtype) {
  if (is_fp8(dtype)) {
    const Fp8Code c{code, fp8_spec(dtype)};
    if (c.classify() == Fp8Class::kNaN) throw Error("dequantize: NaN code in quantized tensor");
    return decode(c);
  }
  return static_cast<double>(static_cast<std::int8_t>(code));
}

// Visits elements grouped by channel: fn(channel, flat_index).
template <typename Fn>
void for_each_channel_element(const Shape& shape, std::size_t axis, Fn&& fn) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t channels = shape[axis];
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (o * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) fn(c, base + i);
    }
  }
}

inline void check_granularity(const Tensor& t, const QuantGranularity& g) {
  if (g.is_per_channel() && g.axis >= t.rank()) {
    throw Error("per-channel axis " + std::to_string(g.axis) + " out of range for rank " +
                std::to_string(t.rank()));
  }
}

}  // namespace detail

// Per-channel absmax along `axis`.
inline std::vector<double> channel_abs_max(const Tensor& t, std::size_t axis) {
  std::vector<double> m(t.shape().at(axis), 0.0);
  detail::for_each_channel_element(t.shape(), axis, [&](std::size_t c, std::size_t i) {
    m[c] = std::max(m[c], static_cast<double>(std::fabs(t[i])));
  });
  return m;
}

// `max_override` replaces the observed absmax (per-tensor only); values past
// it saturate.
inline QuantizedTensor quantize_tensor(const Tensor& t, DType dtype,
                                       QuantGranularity granularity = QuantGranularity::per_tensor(),
                                       std::optional<double> max_override = std::nullopt) {
  detail::check_granularity(t, granularity);
  if (!all_finite(t)) throw Error("quantize_tensor: tensor contains non-finite values");
  QuantizedTensor q;
  q.shape = t.shape();
  q.codes.resize(t.size());
  q.params.dtype = dtype;
  q.params.granularity = granularity;
  if (max_override) {
    if (granularity.is_per_channel()) throw Error("max_override applies to per-tensor quantization only");
    if (!(*max_override > 0.0) || !std::isfinite(*max_override)) {
      throw Error("max_override must be positive and finite");
    }
  }
  if (!granularity.is_per_channel()) {
    const double s = compute_scale(max_override ? *max_override : abs_max(t), dtype);
    q.params.scales = {s};
    for (std::size_t i = 0; i < t.size(); ++i) {
      q.codes[i] = detail::quantize_element(static_cast<double>(t[i]) * s, dtype);
    }
    return q;
  }
  const std::vector<double> maxima = channel_abs_max(t, granularity.axis);
  q.params.scales.resize(maxima.size());
  for (std::size_t c = 0; c < maxima.size(); ++c) q.params.scales[c] = compute_scale(maxima[c], dtype);
  detail::for_each_channel_element(t.shape(), granularity.axis, [&](std::size_t c, std::size_t i) {
    q.codes[i] = detail::quantize_element(static_cast<double>(t[i]) * q.params.scales[c], dtype);
  });
  return q;
}

inline Tensor dequantize_tensor(const QuantizedTensor& q) {
  Tensor out(q.shape);
  const DType dtype = q.params.dtype;
  if (!q.params.granularity.is_per_channel()) {
    const double s = q.params.scales.at(0);
    for (std::size_t i = 0; i < q.codes.size(); ++i) {
      out[i] = static_cast<float>(detail::dequantize_element(q.codes[i], dtype) / s);
    }
    return out;
  }
  detail::for_each_channel_element(q.shape, q.params.granularity.axis, [&](std::size_t c, std::size_t i) {
    out[i] = static_cast<float>(detail::dequantize_element(q.codes[i], dtype) / q.params.scales[c]);
  });
  return out;
}

inline Tensor fake_quantize(const Tensor& t, DType dtype,
                            QuantGranularity granularity = QuantGranularity::per_tensor(),
                            std::optional<double> max_override = std::nullopt) {
  return dequantize_tensor(quantize_tensor(t, dtype, granularity, max_override));
}

inline Tensor fake_quantize(const Tensor& t, const Fp8FormatSpec& f,
                            QuantGranularity granularity = QuantGranularity::per_tensor(),
                            std::optional<double> max_override = std::nullopt) {
  return fake_quantize(t, dtype_of(f), granularity, max_override);
}

// Symmetric INT8: 127 levels each side, no -128, ties to even.
inline Tensor int8_fake_quantize(const Tensor& t,
                                 QuantGranularity granularity = QuantGranularity::per_tensor(),
                                 std::optional<double> max_override = std::nullopt) {
  return fake_quantize(t, DType::kInt8, granularity, max_override);
}

// Sequential summation in double; the order is fixed so results are
// reproducible.
inline double mse(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw Error("mse: size mismatch");
  if (a.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

inline double mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error("mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return mse(a.data(), b.data());
}

}  // namespace fp8q

#endif  // FP8Q_QUANTIZER_HPP_
