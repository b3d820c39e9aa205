// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0
//
// Range calibration observers, FP8 value density, and BatchNorm statistics
// recalibration.

#ifndef FP8Q_CALIBRATION_HPP_
#define FP8Q_CALIBRATION_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fp8q/data.hpp"
#include "fp8q/format.hpp"
#include "fp8q/graph.hpp"
#include "fp8q/quantizer.hpp"
#include "fp8q/random.hpp"

namespace fp8q {

enum class ObserverKind { kAbsMax, kPercentile, kKl, kMseSweep };

inline std::string_view observer_name(ObserverKind k) {
  switch (k) {
    case ObserverKind::kAbsMax: return "absmax";
    case ObserverKind::kPercentile: return "percentile";
    case ObserverKind::kKl: return "kl";
    case ObserverKind::kMseSweep: return "mse_sweep";
  }
  return "?";
}

inline ObserverKind parse_observer_kind(std::string_view s) {
  for (ObserverKind k : {ObserverKind::kAbsMax, ObserverKind::kPercentile, ObserverKind::kKl, ObserverKind::kMseSweep}) {
    if (observer_name(k) == s) return k;
  }
  throw Error("unknown calibration method: " + std::string(s));
}

// Which level grid the KL search quantizes the reference histogram onto.
// kUniform is the classic INT8-style search (kl_bins evenly spaced levels);
// kTargetFormat maps bin centers through the FP8 format itself.
enum class KlGrid { kUniform, kTargetFormat };

inline constexpr std::size_t kHistogramBins = 2048;
inline constexpr std::size_t kKlCandidates = 128;
inline constexpr std::size_t kReservoirCapacity = 65536;

struct ObserverConfig {
  ObserverKind kind = ObserverKind::kAbsMax;
  double percentile = 99.99;
  int kl_bins = 128;
  KlGrid kl_grid = KlGrid::kUniform;
  int sweep_candidates = 100;
  DType dtype = DType::kE4M3;

  static ObserverConfig absmax() { return {}; }
  static ObserverConfig percentile_of(double p) {
    ObserverConfig c;
    c.kind = ObserverKind::kPercentile;
    c.percentile = p;
    return c;
  }
  static ObserverConfig kl(int bins = 128, KlGrid grid = KlGrid::kUniform, DType dtype = DType::kE4M3) {
    ObserverConfig c;
    c.kind = ObserverKind::kKl;
    c.kl_bins = bins;
    c.kl_grid = grid;
    c.dtype = dtype;
    return c;
  }
  static ObserverConfig mse_sweep(DType dtype, int candidates = 100) {
    ObserverConfig c;
    c.kind = ObserverKind::kMseSweep;
    c.dtype = dtype;
    c.sweep_candidates = candidates;
    return c;
  }
};

// Running absmax plus a magnitude histogram over [0, absmax]. The histogram
// is re-binned whenever the absmax grows, so its range always equals the
// absmax seen so far. mse_sweep observers also keep a bounded reservoir of
// raw values.
class Observer {
 public:
  explicit Observer(ObserverConfig cfg = {}, std::size_t bins = kHistogramBins)
      : cfg_(cfg), hist_(bins, 0.0), rng_(0x0b5e77e5ull) {
    if (bins < 128) throw Error("observer histogram needs at least 128 bins");
    if (cfg_.kind == ObserverKind::kPercentile && !(cfg_.percentile > 0.0 && cfg_.percentile <= 100.0)) {
      throw Error("percentile must lie in (0, 100]");
    }
    if (cfg_.kind == ObserverKind::kKl && cfg_.kl_bins < 2) throw Error("kl needs at least 2 levels");
    if (cfg_.kind == ObserverKind::kMseSweep && cfg_.sweep_candidates < 1) throw Error("mse sweep needs candidates");
  }

  const ObserverConfig& config() const { return cfg_; }
  double absmax() const { return absmax_; }
  std::uint64_t count() const { return count_; }
  const std::vector<double>& histogram() const { return hist_; }
  const std::vector<float>& reservoir() const { return reservoir_; }

  void observe(std::span<const float> values) {
    double batch_max = 0.0;
    for (float v : values) {
      if (!std::isfinite(v)) throw Error("observer: non-finite value");
      batch_max = std::max(batch_max, static_cast<double>(std::fabs(v)));
    }
    if (batch_max > absmax_) rebin(batch_max);
    for (float v : values) add_to_histogram(std::fabs(v));
    if (cfg_.kind == ObserverKind::kMseSweep) {
      for (float v : values) {
        ++seen_;
        if (reservoir_.size() < kReservoirCapacity) {
          reservoir_.push_back(v);
        } else {
          const std::uint64_t j = rng_.below(seen_);
          if (j < kReservoirCapacity) reservoir_[static_cast<std::size_t>(j)] = v;
        }
      }
    }
    count_ += values.size();
  }

  void observe(const Tensor& t) { observe(t.data()); }

  // Combines a shard observed independently (same config and bin count).
  void merge(const Observer& other) {
    if (other.hist_.size() != hist_.size() || other.cfg_.kind != cfg_.kind) {
      throw Error("observer merge: incompatible observers");
    }
    Observer rhs = other;
    const double top = std::max(absmax_, rhs.absmax_);
    if (top > absmax_) rebin(top);
    if (top > rhs.absmax_) rhs.rebin(top);
    for (std::size_t i = 0; i < hist_.size(); ++i) hist_[i] += rhs.hist_[i];
    count_ += rhs.count_;
    if (cfg_.kind == ObserverKind::kMseSweep) {
      reservoir_.insert(reservoir_.end(), rhs.reservoir_.begin(), rhs.reservoir_.end());
      seen_ += rhs.seen_;
      if (reservoir_.size() > kReservoirCapacity) {
        std::vector<float> kept;
        kept.reserve(kReservoirCapacity);
        const double step = static_cast<double>(reservoir_.size()) / kReservoirCapacity;
        for (std::size_t i = 0; i < kReservoirCapacity; ++i) {
          kept.push_back(reservoir_[static_cast<std::size_t>(static_cast<double>(i) * step)]);
        }
        reservoir_ = std::move(kept);
      }
    }
  }

  // Calibrated max_T.
  double finalize() const {
    if (count_ == 0) throw Error("observer: finalize called before any observation");
    if (absmax_ == 0.0) return 0.0;
    switch (cfg_.kind) {
      case ObserverKind::kAbsMax: return absmax_;
      case ObserverKind::kPercentile: return percentile_threshold();
      case ObserverKind::kKl: return kl_threshold();
      case ObserverKind::kMseSweep: return mse_threshold();
    }
    return absmax_;
  }

  // KL divergence between the clipped reference histogram and its quantized
  // expansion at clip threshold `clip`.
  double kl_divergence_at(double clip) const {
    const std::size_t nb = hist_.size();
    const double w = absmax_ / static_cast<double>(nb);
    const auto k = static_cast<std::size_t>(
        std::clamp(std::llround(clip / w), 1LL, static_cast<long long>(nb)));

    std::vector<double> p(hist_.begin(), hist_.begin() + static_cast<std::ptrdiff_t>(k));
    for (std::size_t i = k; i < nb; ++i) p[k - 1] += hist_[i];

    std::vector<double> level(k);
    const double fmax = cfg_.kl_grid == KlGrid::kTargetFormat ? dtype_max(cfg_.dtype) : 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double center = (static_cast<double>(i) + 0.5) * w;
      if (cfg_.kl_grid == KlGrid::kUniform) {
        level[i] = detail::round_half_even(std::min(center, clip) * (cfg_.kl_bins - 1) / clip);
      } else {
        const double s = fmax / clip;
        level[i] = is_fp8(cfg_.dtype) ? fake_quant_value(center * s, fp8_spec(cfg_.dtype))
                                      : std::clamp(detail::round_half_even(center * s), -127.0, 127.0);
      }
    }
    // Expand each level's mass uniformly over its nonempty source bins.
    std::vector<double> q(k, 0.0);
    for (std::size_t start = 0; start < k;) {
      std::size_t end = start;
      double mass = 0.0;
      std::size_t nonzero = 0;
      while (end < k && level[end] == level[start]) {
        mass += hist_[end];
        nonzero += hist_[end] > 0.0 ? 1 : 0;
        ++end;
      }
      if (nonzero > 0) {
        for (std::size_t i = start; i < end; ++i) {
          if (hist_[i] > 0.0) q[i] = mass / static_cast<double>(nonzero);
        }
      }
      start = end;
    }
    double psum = 0.0, qsum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      psum += p[i];
      qsum += q[i];
    }
    if (psum == 0.0) return 0.0;
    constexpr double kFloor = 1e-4;
    double kl = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      if (p[i] <= 0.0) continue;
      const double pi = p[i] / psum;
      double qi = qsum > 0.0 ? q[i] / qsum : 0.0;
      if (qi <= 0.0) qi = kFloor;
      kl += pi * std::log(pi / qi);
    }
    return kl;
  }

  std::vector<double> kl_candidates() const {
    std::vector<double> c(kKlCandidates);
    const double lo = absmax_ / 8.0;
    for (std::size_t i = 0; i < kKlCandidates; ++i) {
      c[i] = lo + (absmax_ - lo) * static_cast<double>(i) / static_cast<double>(kKlCandidates - 1);
    }
    return c;
  }

 private:
  void add_to_histogram(double a) {
    const std::size_t nb = hist_.size();
    if (absmax_ == 0.0) {
      hist_[0] += 1.0;
      return;
    }
    const auto bin = static_cast<std::size_t>(a / absmax_ * static_cast<double>(nb));
    hist_[std::min(bin, nb - 1)] += 1.0;
  }

  void rebin(double new_max) {
    const std::size_t nb = hist_.size();
    std::vector<double> fresh(nb, 0.0);
    const double old_w = absmax_ / static_cast<double>(nb);
    for (std::size_t i = 0; i < nb; ++i) {
      if (hist_[i] == 0.0) continue;
      const double center = (static_cast<double>(i) + 0.5) * old_w;
      const auto bin = static_cast<std::size_t>(center / new_max * static_cast<double>(nb));
      fresh[std::min(bin, nb - 1)] += hist_[i];
    }
    hist_ = std::move(fresh);
    absmax_ = new_max;
  }

  double percentile_threshold() const {
    if (cfg_.percentile >= 100.0) return absmax_;
    double total = 0.0;
    for (double h : hist_) total += h;
    const double target = cfg_.percentile / 100.0 * total;
    const double w = absmax_ / static_cast<double>(hist_.size());
    double cum = 0.0;
    for (std::size_t i = 0; i < hist_.size(); ++i) {
      if (hist_[i] > 0.0 && cum + hist_[i] >= target) {
        const double frac = (target - cum) / hist_[i];
        return std::min(absmax_, (static_cast<double>(i) + frac) * w);
      }
      cum += hist_[i];
    }
    return absmax_;
  }

  double kl_threshold() const {
    double best = std::numeric_limits<double>::infinity();
    double best_clip = absmax_;
    for (double c : kl_candidates()) {
      const double d = kl_divergence_at(c);
      if (d < best) {
        best = d;
        best_clip = c;
      }
    }
    return best_clip;
  }

  double mse_threshold() const {
    const Tensor ref({reservoir_.size()}, reservoir_);
    double best = std::numeric_limits<double>::infinity();
    double best_clip = absmax_;
    const int n = cfg_.sweep_candidates;
    for (int j = 1; j <= n; ++j) {
      const double c = absmax_ * j / n;
      const double e = mse(ref, fake_quantize(ref, cfg_.dtype, QuantGranularity::per_tensor(), c));
      if (e < best) {
        best = e;
        best_clip = c;
      }
    }
    return best_clip;
  }

  ObserverConfig cfg_;
  std::vector<double> hist_;
  double absmax_ = 0.0;
  std::uint64_t count_ = 0;
  std::vector<float> reservoir_;
  std::uint64_t seen_ = 0;
  Rng rng_;
};

// Value density of an FP8 format around N: 2^(m - floor(log2 N)).
inline double density(const Fp8FormatSpec& f, double n) {
  if (!(n > 0.0) || !std::isfinite(n)) throw Error("density: N must be positive and finite");
  int e = 0;
  std::frexp(n, &e);
  return std::ldexp(1.0, f.man_bits() - (e - 1));
}

// Representable values in [2^n, 2^(n+1)) divided by the interval length.
inline double counted_density(const Fp8FormatSpec& f, int binade) {
  const double lo = std::ldexp(1.0, binade), hi = std::ldexp(1.0, binade + 1);
  int count = 0;
  for (const auto& cv : enumerate_values(f)) {
    if (cv.value >= lo && cv.value < hi) ++count;
  }
  return count / (hi - lo);
}

// Exponents n whose binade [2^n, 2^(n+1)) contains normal values.
inline std::vector<int> normal_binades(const Fp8FormatSpec& f) {
  std::vector<int> out;
  for (int n = 1 - f.bias(); n <= f.max_normal_exp_field() - f.bias(); ++n) out.push_back(n);
  return out;
}

// ---------------------------------------------------------------------------
// BatchNorm recalibration

struct BnStats {
  std::vector<double> mean;
  std::vector<double> var;
  std::uint64_t count = 0;
};

using BnStatsMap = std::map<std::string, BnStats>;

namespace detail {

// Chan et al. pairwise combination of per-channel (count, mean, M2).
struct ChannelMoments {
  std::vector<double> mean, m2;
  std::uint64_t n = 0;

  void add_batch(const Tensor& x) {
    const std::size_t batch = x.dim(0), c = x.dim(1);
    const std::size_t inner = x.size() / (batch * c);
    if (mean.empty()) {
      mean.assign(c, 0.0);
      m2.assign(c, 0.0);
    }
    if (mean.size() != c) throw Error("bn_collect: channel count changed between batches");
    const std::uint64_t nb = batch * inner;
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < inner; ++i) s += x[(b * c + ch) * inner + i];
      }
      const double bm = s / static_cast<double>(nb);
      double bm2 = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = x[(b * c + ch) * inner + i] - bm;
          bm2 += d * d;
        }
      }
      const double total = static_cast<double>(n + nb);
      const double delta = bm - mean[ch];
      mean[ch] += delta * static_cast<double>(nb) / total;
      m2[ch] += bm2 + delta * delta * static_cast<double>(n) * static_cast<double>(nb) / total;
    }
    n += nb;
  }
};

inline std::vector<std::string> batchnorm_ids(const ModelBundle& m) {
  std::vector<std::string> ids;
  for (std::size_t i : m.graph.topological_order()) {
    if (m.graph.nodes[i].kind == OpKind::kBatchNorm) ids.push_back(m.graph.nodes[i].id);
  }
  return ids;
}

}  // namespace detail

namespace detail {

inline void bn_apply_node(ModelBundle& model, const Node& n, const BnStats& s) {
  Tensor& mean = model.mutable_param(n, "running_mean");
  Tensor& var = model.mutable_param(n, "running_var");
  if (s.mean.size() != mean.size() || s.var.size() != var.size()) {
    throw Error("bn_apply: channel count mismatch for node " + n.id);
  }
  for (std::size_t c = 0; c < mean.size(); ++c) {
    mean[c] = static_cast<float>(s.mean[c]);
    var[c] = static_cast<float>(std::max(0.0, s.var[c]));
  }
}

}  // namespace detail

// Writes collected statistics into every BatchNorm node's running buffers.
inline void bn_apply(ModelBundle& model, const BnStatsMap& stats) {
  for (const auto& n : model.graph.nodes) {
    if (n.kind != OpKind::kBatchNorm) continue;
    auto it = stats.find(n.id);
    if (it == stats.end()) throw Error("bn_apply: no statistics for BatchNorm node " + n.id);
    detail::bn_apply_node(model, n, it->second);
  }
}

// Population mean/variance of every BatchNorm node's consumed input over the
// calibration batches. BatchNorm nodes are processed in topological order
// and each one's new statistics are in effect while the next one is
// measured. `hooks` lets a quantized model run with its fake-quant points.
inline BnStatsMap bn_collect(const ModelBundle& model, const Batches& batches, TransformMode mode,
                             std::uint64_t seed, const ExecHooks& hooks = {}) {
  if (batches.empty()) throw Error("bn_collect: empty calibration set");
  const auto ids = detail::batchnorm_ids(model);
  if (ids.empty()) throw Error("bn_collect: model has no BatchNorm nodes");

  Batches views;
  Rng rng(seed);
  for (const auto& b : batches) views.push_back(apply_transform(b, mode, rng));

  ModelBundle work = model;
  BnStatsMap result;
  for (const auto& id : ids) {
    detail::ChannelMoments moments;
    ExecHooks h = hooks;
    h.observe_inputs = [&](const Node& n, const std::vector<const Tensor*>& in) {
      if (hooks.observe_inputs) hooks.observe_inputs(n, in);
      if (n.id == id) moments.add_batch(*in[0]);
    };
    for (const auto& b : views) forward(work, b, h);
    BnStats s;
    s.mean = moments.mean;
    s.var.resize(moments.m2.size());
    for (std::size_t c = 0; c < s.var.size(); ++c) s.var[c] = moments.m2[c] / static_cast<double>(moments.n);
    s.count = moments.n;
    result[id] = s;
    detail::bn_apply_node(work, work.graph.node(id), s);
  }
  return result;
}

}  // namespace fp8q

#endif  // FP8Q_CALIBRATION_HPP_
