// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef FP8Q_DATA_HPP_
#define FP8Q_DATA_HPP_

#include <string_view>
#include <vector>

#include "fp8q/graph.hpp"
#include "fp8q/random.hpp"

namespace fp8q {

// kTrain: per-sample random shift of up to one pixel (zero fill) plus a
// random horizontal flip. kInfer: the centered view, unchanged. Only rank-4
// (NCHW) inputs are augmented.
enum class TransformMode { kTrain, kInfer };

inline std::string_view transform_name(TransformMode m) { return m == TransformMode::kTrain ? "train" : "infer"; }

inline TransformMode parse_transform(std::string_view s) {
  if (s == "train") return TransformMode::kTrain;
  if (s == "infer") return TransformMode::kInfer;
  throw Error("unknown transform mode: " + std::string(s));
}

inline Tensor jitter_images(const Tensor& x, Rng& rng) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y(x.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const auto dy = static_cast<std::ptrdiff_t>(rng.below(3)) - 1;
    const auto dx = static_cast<std::ptrdiff_t>(rng.below(3)) - 1;
    const bool flip = rng.coin();
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t yy = 0; yy < h; ++yy) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(yy) + dy;
          std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(flip ? w - 1 - xx : xx) + dx;
          float v = 0.0f;
          if (sy >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx >= 0 && sx < static_cast<std::ptrdiff_t>(w)) {
            v = x[((b * c + ch) * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
          }
          y[((b * c + ch) * h + yy) * w + xx] = v;
        }
      }
    }
  }
  return y;
}

inline TensorMap apply_transform(const TensorMap& batch, TransformMode mode, Rng& rng) {
  if (mode == TransformMode::kInfer) return batch;
  TensorMap out;
  for (const auto& [name, t] : batch) out.emplace(name, t.rank() == 4 ? jitter_images(t, rng) : t);
  return out;
}

using Batches = std::vector<TensorMap>;

}  // namespace fp8q

#endif  // FP8Q_DATA_HPP_
