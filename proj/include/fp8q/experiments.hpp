// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale numerical experiments behind the CLI reports. Each one is a
// pure function of (seed, sample count) and returns plain data plus CSV.

#ifndef FP8Q_EXPERIMENTS_HPP_
#define FP8Q_EXPERIMENTS_HPP_

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "fp8q/calibration.hpp"
#include "fp8q/csv.hpp"
#include "fp8q/format.hpp"
#include "fp8q/ops.hpp"
#include "fp8q/quantizer.hpp"
#include "fp8q/random.hpp"

namespace fp8q {

// ---------------------------------------------------------------------------
// Format table

inline CsvTable format_table() {
  CsvTable t({"format", "exp_bits", "man_bits", "bias", "encoding", "max_finite", "min_normal", "min_subnormal",
              "nan_codes", "inf_codes", "finite_values"});
  for (const auto& f : Fp8FormatSpec::all()) {
    const FormatParams p = format_params(f);
    const CodeCensus c = census(f);
    t.add_row({std::string(f.name()), std::to_string(f.exp_bits()), std::to_string(f.man_bits()),
               std::to_string(p.bias), f.encoding() == EncodingClass::kIeeeLike ? "ieee_like" : "extended",
               csv_real(p.max_finite), csv_real(p.min_normal), csv_real(p.min_subnormal), std::to_string(c.nan),
               std::to_string(c.infinity), std::to_string(enumerate_values(f).size())});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Normal bulk plus a small uniform outlier fraction, quantized per tensor
// with absmax scaling under each 8-bit type.

struct MixtureConfig {
  std::size_t samples = 100000;
  double variance = 0.5;
  double outlier_fraction = 0.01;
  double outlier_bound = 6.0;
};

inline Tensor mixture_sample(std::uint64_t seed, const MixtureConfig& cfg = {}) {
  if (cfg.samples == 0) throw Error("sample count must be at least 1");
  Rng rng(seed);
  Tensor x({cfg.samples});
  const double sd = std::sqrt(cfg.variance);
  for (float& v : x.values()) v = static_cast<float>(sd * rng.normal());
  const auto k = static_cast<std::size_t>(std::llround(cfg.outlier_fraction * static_cast<double>(cfg.samples)));
  for (std::size_t i : rng.sample_indices(cfg.samples, k)) {
    x[i] = static_cast<float>(rng.uniform(-cfg.outlier_bound, cfg.outlier_bound));
  }
  return x;
}

struct Fig2Result {
  Tensor data;
  std::map<DType, Tensor> quantized;
  std::map<DType, double> mse;

  CsvTable mse_csv() const {
    CsvTable t({"format", "mse"});
    for (DType d : kAllDTypes) t.add_row({std::string(dtype_name(d)), csv_real(mse.at(d))});
    return t;
  }

  // Distinct output values per type with their occurrence counts.
  CsvTable values_csv() const {
    CsvTable t({"format", "value", "count"});
    for (DType d : kAllDTypes) {
      std::map<float, std::size_t> counts;
      for (float v : quantized.at(d).data()) ++counts[v == 0.0f ? 0.0f : v];
      for (const auto& [v, c] : counts) t.add_row({std::string(dtype_name(d)), csv_real(v), std::to_string(c)});
    }
    return t;
  }

  CsvTable data_histogram_csv(std::size_t bins = 120, double bound = 6.0) const {
    std::vector<std::size_t> h(bins, 0);
    const double w = 2.0 * bound / static_cast<double>(bins);
    for (float v : data.data()) {
      const double p = (v + bound) / w;
      if (p < 0.0 || v > bound) continue;
      h[std::min(bins - 1, static_cast<std::size_t>(p))]++;
    }
    CsvTable t({"bin_lo", "bin_hi", "count"});
    for (std::size_t i = 0; i < bins; ++i) {
      t.add_row({csv_real(-bound + w * static_cast<double>(i)), csv_real(-bound + w * static_cast<double>(i + 1)),
                 std::to_string(h[i])});
    }
    return t;
  }
};

inline Fig2Result fig2_experiment(std::uint64_t seed, const MixtureConfig& cfg = {}) {
  Fig2Result r;
  r.data = mixture_sample(seed, cfg);
  for (DType d : kAllDTypes) {
    Tensor q = fake_quantize(r.data, d);
    r.mse[d] = mse(r.data, q);
    r.quantized.emplace(d, std::move(q));
  }
  return r;
}

// ---------------------------------------------------------------------------
// KL clipping demo: a narrow bulk plus a handful of outliers near 6.

struct KlDemoConfig {
  std::size_t samples = 1000000;
  double bulk_sd = 0.5;
  std::size_t outliers = 4;
  double outlier_lo = 5.5;
  double outlier_hi = 6.5;
  DType format = DType::kE4M3;
};

inline Tensor kl_demo_tensor(std::uint64_t seed, const KlDemoConfig& cfg = {}) {
  if (cfg.samples == 0) throw Error("sample count must be at least 1");
  Rng rng(seed);
  Tensor x({cfg.samples + cfg.outliers});
  for (std::size_t i = 0; i < cfg.samples; ++i) x[i] = static_cast<float>(cfg.bulk_sd * rng.normal());
  for (std::size_t i = 0; i < cfg.outliers; ++i) {
    const double mag = rng.uniform(cfg.outlier_lo, cfg.outlier_hi);
    x[cfg.samples + i] = static_cast<float>(rng.coin() ? -mag : mag);
  }
  return x;
}

struct KlDemoResult {
  double absmax = 0.0;
  double kl_clip = 0.0;         // uniform-grid search
  double kl_clip_format = 0.0;  // search on the target format's own grid
  double mse_clip = 0.0;        // target format, clipped at kl_clip
  double mse_full = 0.0;        // target format, full range
  double int8_mse_clip = 0.0;
  double int8_mse_full = 0.0;

  CsvTable csv(DType format) const {
    CsvTable t({"quantity", "value"});
    const std::string f(dtype_name(format));
    t.add_row({"absmax", csv_real(absmax)});
    t.add_row({"kl_clip", csv_real(kl_clip)});
    t.add_row({"kl_clip_" + f + "_grid", csv_real(kl_clip_format)});
    t.add_row({"mse_" + f + "_clip", csv_real(mse_clip)});
    t.add_row({"mse_" + f + "_full", csv_real(mse_full)});
    t.add_row({"mse_INT8_clip", csv_real(int8_mse_clip)});
    t.add_row({"mse_INT8_full", csv_real(int8_mse_full)});
    return t;
  }
};

inline KlDemoResult kl_demo(std::uint64_t seed, const KlDemoConfig& cfg = {}) {
  const Tensor x = kl_demo_tensor(seed, cfg);
  Observer uniform(ObserverConfig::kl(128, KlGrid::kUniform));
  uniform.observe(x);
  Observer native(ObserverConfig::kl(128, KlGrid::kTargetFormat, cfg.format));
  native.observe(x);
  KlDemoResult r;
  r.absmax = uniform.absmax();
  r.kl_clip = uniform.finalize();
  r.kl_clip_format = native.finalize();
  const auto per_tensor = QuantGranularity::per_tensor();
  r.mse_clip = mse(x, fake_quantize(x, cfg.format, per_tensor, r.kl_clip));
  r.mse_full = mse(x, fake_quantize(x, cfg.format, per_tensor, r.absmax));
  r.int8_mse_clip = mse(x, int8_fake_quantize(x, per_tensor, r.kl_clip));
  r.int8_mse_full = mse(x, int8_fake_quantize(x, per_tensor, r.absmax));
  return r;
}

// ---------------------------------------------------------------------------
// Density: closed form vs. counting representable values, per binade.

struct DensityRow {
  std::string format;
  int binade = 0;
  double n = 0.0;
  double formula = 0.0;
  double counted = 0.0;
};

inline std::vector<DensityRow> density_rows() {
  std::vector<DensityRow> rows;
  for (const auto& f : Fp8FormatSpec::all()) {
    for (int b : normal_binades(f)) {
      const double n = std::ldexp(1.0, b);
      rows.push_back({std::string(f.name()), b, n, density(f, n), counted_density(f, b)});
    }
  }
  return rows;
}

inline CsvTable density_csv(const std::vector<DensityRow>& rows) {
  CsvTable t({"format", "binade", "N", "formula", "counted", "match"});
  for (const auto& r : rows) {
    t.add_row({r.format, std::to_string(r.binade), csv_real(r.n), csv_real(r.formula), csv_real(r.counted),
               r.formula == r.counted ? "1" : "0"});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Mixed-format study on one linear layer: activations with a few large
// outliers (range-bound), normal weights (precision-bound). Activations are
// quantized per tensor at absmax, weights per output channel.

inline constexpr std::array<DType, 3> kFp8DTypes = {DType::kE5M2, DType::kE4M3, DType::kE3M4};

struct MixedConfig {
  std::size_t rows = 1024;
  std::size_t features = 64;
  std::size_t outputs = 64;
  std::size_t outliers = 2;
  double outlier_magnitude = 1000.0;
  double weight_sd = 0.05;
};

struct MixedLayer {
  Tensor x;
  Tensor w;
};

inline MixedLayer mixed_layer(std::uint64_t seed, const MixedConfig& cfg = {}) {
  Rng rng(seed);
  MixedLayer l{Tensor({cfg.rows, cfg.features}), Tensor({cfg.outputs, cfg.features})};
  for (float& v : l.x.values()) v = static_cast<float>(rng.normal());
  for (std::size_t i : rng.sample_indices(l.x.size(), cfg.outliers)) {
    const double mag = cfg.outlier_magnitude * rng.uniform(0.8, 1.0);
    l.x[i] = static_cast<float>(rng.coin() ? -mag : mag);
  }
  for (float& v : l.w.values()) v = static_cast<float>(cfg.weight_sd * rng.normal());
  return l;
}

// Output MSE for one (activation, weight) format pair.
inline double mixed_cell(const MixedLayer& l, DType act, DType wt) {
  const Tensor ref = ops::linear(l.x, l.w, nullptr);
  const Tensor xq = fake_quantize(l.x, act);
  const Tensor wq = fake_quantize(l.w, wt, QuantGranularity::per_channel(0));
  return mse(ref, ops::linear(xq, wq, nullptr));
}

// mse[a][w] indexed as kFp8DTypes.
struct MixedMatrix {
  std::array<std::array<double, 3>, 3> mse{};

  double at(DType act, DType wt) const {
    const auto idx = [](DType d) {
      for (std::size_t i = 0; i < kFp8DTypes.size(); ++i) {
        if (kFp8DTypes[i] == d) return i;
      }
      throw Error("mixed matrix covers FP8 types only");
    };
    return mse[idx(act)][idx(wt)];
  }

  CsvTable csv() const {
    CsvTable t({"activation", "weight", "mse"});
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t w = 0; w < 3; ++w) {
        t.add_row({std::string(dtype_name(kFp8DTypes[a])), std::string(dtype_name(kFp8DTypes[w])),
                   csv_real(mse[a][w])});
      }
    }
    return t;
  }
};

inline MixedMatrix mixed_mse(std::uint64_t seed, const MixedConfig& cfg = {}) {
  const MixedLayer l = mixed_layer(seed, cfg);
  MixedMatrix m;
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t w = 0; w < 3; ++w) m.mse[a][w] = mixed_cell(l, kFp8DTypes[a], kFp8DTypes[w]);
  }
  return m;
}

}  // namespace fp8q

#endif  // FP8Q_EXPERIMENTS_HPP_
