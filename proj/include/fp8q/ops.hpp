// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference operator kernels in working precision (float storage, double
// accumulation). Layouts: conv2d is NCHW cross-correlation; layernorm and
// softmax act on the last axis; batchnorm normalizes axis 1.

#ifndef FP8Q_OPS_HPP_
#define FP8Q_OPS_HPP_

#include <cmath>
#include <numbers>
#include <optional>
#include <string>

#include "fp8q/tensor.hpp"

namespace fp8q::ops {

namespace detail {
[[noreturn]] inline void shape_error(const std::string& op, const std::string& what) {
  throw Error(op + ": " + what);
}
}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t stride,
                     std::size_t padding) {
  if (x.rank() != 4 || w.rank() != 4) detail::shape_error("conv2d", "expects rank-4 input and weight");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != c) {
    detail::shape_error("conv2d", "input channels " + std::to_string(c) + " vs weight " + shape_str(w.shape()));
  }
  if (bias && bias->size() != o) detail::shape_error("conv2d", "bias length mismatch");
  if (stride == 0) detail::shape_error("conv2d", "stride must be positive");
  if (h + 2 * padding < kh || wd + 2 * padding < kw) detail::shape_error("conv2d", "kernel larger than padded input");
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (wd + 2 * padding - kw) / stride + 1;
  Tensor y({n, o, ho, wo});
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oc = 0; oc < o; ++oc) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = bias ? (*bias)[oc] : 0.0;
          for (std::size_t ic = 0; ic < c; ++ic) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                acc += static_cast<double>(x[((b * c + ic) * h + iy) * wd + ix]) *
                       w[((oc * c + ic) * kh + ky) * kw + kx];
              }
            }
          }
          y[((b * o + oc) * ho + oy) * wo + ox] = static_cast<float>(acc);
        }
      }
    }
  }
  return y;
}

// y[..., n] = sum_k x[..., k] * w[n, k] + b[n]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
  if (w.rank() != 2 || x.rank() < 1) detail::shape_error("linear", "expects rank-2 weight");
  const std::size_t k = w.dim(1), nout = w.dim(0);
  if (x.shape().back() != k) {
    detail::shape_error("linear", "input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  if (bias && bias->size() != nout) detail::shape_error("linear", "bias length mismatch");
  Shape out_shape = x.shape();
  out_shape.back() = nout;
  Tensor y(out_shape);
  const std::size_t rows = x.size() / k;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < nout; ++j) {
      double acc = bias ? (*bias)[j] : 0.0;
      for (std::size_t i = 0; i < k; ++i) acc += static_cast<double>(x[r * k + i]) * w[j * k + i];
      y[r * nout + j] = static_cast<float>(acc);
    }
  }
  return y;
}

// y[..., n] = sum_k x[..., k] * w[k, n]
inline Tensor matmul(const Tensor& x, const Tensor& w) {
  if (w.rank() != 2 || x.rank() < 1) detail::shape_error("matmul", "expects rank-2 right operand");
  const std::size_t k = w.dim(0), nout = w.dim(1);
  if (x.shape().back() != k) {
    detail::shape_error("matmul", "left " + shape_str(x.shape()) + " vs right " + shape_str(w.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = nout;
  Tensor y(out_shape);
  const std::size_t rows = x.size() / k;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < nout; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i) acc += static_cast<double>(x[r * k + i]) * w[i * nout + j];
      y[r * nout + j] = static_cast<float>(acc);
    }
  }
  return y;
}

// a: [B, M, K]; b: [B, K, N] (or [B, N, K] when transpose_b).
inline Tensor batch_matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3) detail::shape_error("batch_matmul", "expects rank-3 operands");
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  if (b.dim(0) != batch || bk != k) {
    detail::shape_error("batch_matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor y({batch, m, n});
  for (std::size_t bi = 0; bi < batch; ++bi) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t t = 0; t < k; ++t) {
          const float bv = transpose_b ? b[(bi * n + j) * k + t] : b[(bi * k + t) * n + j];
          acc += static_cast<double>(a[(bi * m + i) * k + t]) * bv;
        }
        y[(bi * m + i) * n + j] = static_cast<float>(acc);
      }
    }
  }
  return y;
}

// Row gather; ids are stored as floats and must be integral and in range.
inline Tensor embedding(const Tensor& ids, const Tensor& table) {
  if (table.rank() != 2) detail::shape_error("embedding", "expects rank-2 table");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  Shape out_shape = ids.shape();
  out_shape.push_back(d);
  Tensor y(out_shape);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const float v = ids[i];
    if (!(v >= 0.0f) || v != std::floor(v) || static_cast<std::size_t>(v) >= vocab) {
      detail::shape_error("embedding", "token id " + std::to_string(v) + " out of range");
    }
    const auto row = static_cast<std::size_t>(v);
    for (std::size_t j = 0; j < d; ++j) y[i * d + j] = table[row * d + j];
  }
  return y;
}

inline Tensor layernorm(const Tensor& x, const Tensor* gamma, const Tensor* beta, double eps) {
  const std::size_t d = x.shape().back();
  if ((gamma && gamma->size() != d) || (beta && beta->size() != d)) {
    detail::shape_error("layernorm", "affine parameter length mismatch");
  }
  Tensor y(x.shape());
  const std::size_t rows = x.size() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += x[r * d + i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double c = x[r * d + i] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      double v = (x[r * d + i] - mean) * inv;
      if (gamma) v *= (*gamma)[i];
      if (beta) v += (*beta)[i];
      y[r * d + i] = static_cast<float>(v);
    }
  }
  return y;
}

inline Tensor batchnorm(const Tensor& x, const Tensor& mean, const Tensor& var, const Tensor* gamma,
                        const Tensor* beta, double eps) {
  if (x.rank() < 2) detail::shape_error("batchnorm", "expects rank >= 2 input");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t inner = x.size() / (n * c);
  if (mean.size() != c || var.size() != c || (gamma && gamma->size() != c) || (beta && beta->size() != c)) {
    detail::shape_error("batchnorm", "parameter length mismatch for " + std::to_string(c) + " channels");
  }
  Tensor y(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(var[ch]) + eps);
    const double g = gamma ? (*gamma)[ch] : 1.0;
    const double bt = beta ? (*beta)[ch] : 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t base = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        y[base + i] = static_cast<float>((x[base + i] - mean[ch]) * inv * g + bt);
      }
    }
  }
  return y;
}

template <typename Fn>
Tensor elementwise(const Tensor& a, const Tensor& b, const char* name, Fn&& fn) {
  if (a.shape() != b.shape()) {
    detail::shape_error(name, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = fn(a[i], b[i]);
  return y;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise(a, b, "add", [](float x, float y) { return x + y; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise(a, b, "mul", [](float x, float y) { return x * y; });
}

inline Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  return y;
}

// Exact (erf) form.
inline Tensor gelu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    y[i] = static_cast<float>(0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)));
  }
  return y;
}

inline Tensor softmax(const Tensor& x) {
  const std::size_t d = x.shape().back();
  Tensor y(x.shape());
  const std::size_t rows = x.size() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = x[r * d];
    for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, static_cast<double>(x[r * d + i]));
    double sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) sum += std::exp(x[r * d + i] - mx);
    for (std::size_t i = 0; i < d; ++i) y[r * d + i] = static_cast<float>(std::exp(x[r * d + i] - mx) / sum);
  }
  return y;
}

inline Tensor flatten(const Tensor& x) {
  if (x.rank() < 1) detail::shape_error("flatten", "expects rank >= 1");
  return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

}  // namespace fp8q::ops

#endif  // FP8Q_OPS_HPP_
