// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0
//
// Accuracy-driven tuning: proxy metrics against the FP32 model, the
// relative-loss pass rule, a cumulative recipe ladder and greedy operator
// fallback.

#ifndef FP8Q_TUNER_HPP_
#define FP8Q_TUNER_HPP_

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fp8q/csv.hpp"
#include "fp8q/data.hpp"
#include "fp8q/graph.hpp"
#include "fp8q/workflow.hpp"

namespace fp8q {

enum class MetricKind { kArgmaxAgreement, kCosineSimilarity, kNegMse };

inline std::string_view metric_name(MetricKind k) {
  switch (k) {
    case MetricKind::kArgmaxAgreement: return "argmax_agreement";
    case MetricKind::kCosineSimilarity: return "cosine_similarity";
    case MetricKind::kNegMse: return "neg_mse";
  }
  return "?";
}

inline MetricKind parse_metric(std::string_view s) {
  for (MetricKind k : {MetricKind::kArgmaxAgreement, MetricKind::kCosineSimilarity, MetricKind::kNegMse}) {
    if (metric_name(k) == s) return k;
  }
  throw Error("unknown metric: " + std::string(s));
}

struct Metric {
  std::string name;
  double value = 0.0;
  bool higher_is_better = true;
};

// Evaluation inputs plus the FP32 model's outputs on them (first graph
// output), computed once.
struct EvalSet {
  Batches batches;
  std::vector<Tensor> reference;

  EvalSet(const ModelBundle& fp32, Batches b) : batches(std::move(b)) {
    if (batches.empty()) throw Error("evaluate: empty eval set");
    for (const auto& x : batches) reference.push_back(forward_outputs(fp32, x).at(fp32.graph.outputs.at(0)));
  }
};

namespace detail {

struct MetricAccumulator {
  MetricKind kind;
  double sum = 0.0;
  double count = 0.0;

  void add(const Tensor& ref, const Tensor& out) {
    if (ref.shape() != out.shape()) throw Error("evaluate: output shape mismatch");
    const std::size_t d = ref.shape().back();
    const std::size_t rows = ref.size() / d;
    if (kind == MetricKind::kNegMse) {
      for (std::size_t i = 0; i < ref.size(); ++i) {
        const double e = static_cast<double>(out[i]) - ref[i];
        sum += e * e;
      }
      count += static_cast<double>(ref.size());
      return;
    }
    for (std::size_t r = 0; r < rows; ++r) {
      const float* a = ref.data().data() + r * d;
      const float* b = out.data().data() + r * d;
      if (kind == MetricKind::kArgmaxAgreement) {
        sum += (std::max_element(a, a + d) - a) == (std::max_element(b, b + d) - b) ? 1.0 : 0.0;
      } else {
        double ab = 0.0, aa = 0.0, bb = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          ab += static_cast<double>(a[i]) * b[i];
          aa += static_cast<double>(a[i]) * a[i];
          bb += static_cast<double>(b[i]) * b[i];
        }
        if (aa == 0.0 && bb == 0.0) {
          sum += 1.0;
        } else if (aa > 0.0 && bb > 0.0) {
          sum += ab / std::sqrt(aa * bb);
        }
      }
      count += 1.0;
    }
  }

  Metric result() const {
    const double mean = sum / count;
    return {std::string(metric_name(kind)), kind == MetricKind::kNegMse ? (mean == 0.0 ? 0.0 : -mean) : mean, true};
  }
};

}  // namespace detail

// Metric of the FP32 model against itself.
inline Metric fp32_baseline(MetricKind kind) {
  return {std::string(metric_name(kind)), kind == MetricKind::kNegMse ? 0.0 : 1.0, true};
}

template <typename Run>
Metric evaluate_with(const EvalSet& eval, MetricKind kind, Run&& run) {
  detail::MetricAccumulator acc{kind};
  for (std::size_t i = 0; i < eval.batches.size(); ++i) acc.add(eval.reference[i], run(eval.batches[i]));
  return acc.result();
}

inline Metric evaluate(const EvalSet& eval, const QuantizedModel& qm, MetricKind kind) {
  const auto hooks = quant_hooks(qm);
  const std::string out = qm.quantized.graph.outputs.at(0);
  return evaluate_with(eval, kind, [&](const TensorMap& x) { return forward_outputs(qm.quantized, x, hooks).at(out); });
}

inline Metric evaluate(const EvalSet& eval, const ModelBundle& model, MetricKind kind) {
  const std::string out = model.graph.outputs.at(0);
  return evaluate_with(eval, kind, [&](const TensorMap& x) { return forward_outputs(model, x).at(out); });
}

// Relative loss against the FP32 metric must not exceed `threshold`. With
// an FP32 value of exactly 0 the loss is taken in absolute terms.
inline bool pass_criterion(const Metric& fp32, const Metric& quant, double threshold = 0.01) {
  if (fp32.name != quant.name || fp32.higher_is_better != quant.higher_is_better) {
    throw Error("pass_criterion: metrics of different kinds");
  }
  if (!std::isfinite(fp32.value) || !std::isfinite(quant.value)) throw Error("pass_criterion: non-finite metric");
  const double drop = fp32.higher_is_better ? fp32.value - quant.value : quant.value - fp32.value;
  const double loss = fp32.value == 0.0 ? drop : drop / std::fabs(fp32.value);
  return loss <= threshold + 1e-12;
}

inline bool pass_criterion(double fp32, double quant, double threshold = 0.01) {
  return pass_criterion(Metric{"accuracy", fp32, true}, Metric{"accuracy", quant, true}, threshold);
}

struct TuneOptions {
  MetricKind metric = MetricKind::kArgmaxAgreement;
  double threshold = 0.01;
  bool recalibrate_bn = false;
  TransformMode bn_transform = TransformMode::kTrain;
  std::uint64_t seed = 42;
};

struct TuneStep {
  std::string candidate;
  QuantRecipe recipe;
  double metric = 0.0;
  bool pass = false;
};

struct TuneResult {
  QuantRecipe recipe;
  std::vector<TuneStep> history;
  bool pass = false;
  std::set<std::string> fallback;
  Metric baseline;
  Metric final_metric;

  // Cost proxy: operators left in FP32 by the search.
  std::size_t fallback_count() const { return fallback.size(); }

  CsvTable history_csv() const {
    CsvTable t({"candidate", "recipe", "metric", "pass"});
    for (const auto& s : history) {
      std::string desc = s.recipe.describe();
      std::replace(desc.begin(), desc.end(), ',', ';');
      t.add_row({s.candidate, desc, csv_real(s.metric), s.pass ? "1" : "0"});
    }
    return t;
  }
};

// Calibrates (static), applies and optionally recalibrates BatchNorm, then
// scores the result.
inline Metric evaluate_recipe(const ModelBundle& m, const QuantRecipe& r, const EvalSet& eval, const Batches& calib,
                              const TuneOptions& opt) {
  QuantizedModel qm = quantize_model(m, r, calib);
  if (opt.recalibrate_bn && !qm.nodes.empty()) recalibrate_bn(qm, calib, opt.bn_transform, opt.seed);
  return evaluate(eval, qm, opt.metric);
}

struct FallbackResult {
  std::set<std::string> fallback;
  QuantRecipe recipe;
  Metric metric;
  bool pass = false;
};

// Greedy operator fallback. Each quantized node's sensitivity is the metric
// gain from reverting it alone; nodes are reverted in descending order of
// sensitivity (ties in graph order) until the criterion passes.
inline FallbackResult fallback_search(const ModelBundle& m, const QuantRecipe& recipe, const EvalSet& eval,
                                      const Batches& calib, const TuneOptions& opt = {}) {
  const Metric base_line = fp32_baseline(opt.metric);
  FallbackResult res{{}, recipe, evaluate_recipe(m, recipe, eval, calib, opt), false};
  res.pass = pass_criterion(base_line, res.metric, opt.threshold);
  if (res.pass) return res;

  const auto plan = plan_nodes(m, recipe);
  std::vector<std::pair<double, std::size_t>> ranked;
  std::vector<std::string> ids;
  for (const auto& n : m.graph.nodes) {
    if (!plan.count(n.id)) continue;
    QuantRecipe r = recipe;
    r.per_node_overrides[n.id].fallback_fp32 = true;
    const double gain = evaluate_recipe(m, r, eval, calib, opt).value - res.metric.value;
    ranked.emplace_back(gain, ids.size());
    ids.push_back(n.id);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (const auto& [gain, idx] : ranked) {
    res.recipe.per_node_overrides[ids[idx]].fallback_fp32 = true;
    res.fallback.insert(ids[idx]);
    res.metric = evaluate_recipe(m, res.recipe, eval, calib, opt);
    res.pass = pass_criterion(base_line, res.metric, opt.threshold);
    if (res.pass) break;
  }
  return res;
}

// Cumulative candidate ladder, cheapest change first:
//   base -> first/last exemption on -> extended ops off -> mixed E4M3/E3M4
//   -> dynamic activations -> operator fallback.
// Steps that would not change the recipe are skipped. The first passing
// candidate is accepted. Fallback starts from the best-scoring candidate.
inline TuneResult tune(const ModelBundle& m, const QuantRecipe& base, const EvalSet& eval, const Batches& calib,
                       const TuneOptions& opt = {}) {
  TuneResult out;
  out.baseline = fp32_baseline(opt.metric);

  std::vector<std::pair<std::string, QuantRecipe>> ladder;
  QuantRecipe cur = base;
  ladder.emplace_back("base", cur);
  if (cur.quantize_first_last) {
    cur.quantize_first_last = false;
    ladder.emplace_back("first_last_off", cur);
  }
  if (cur.scheme == Scheme::kExtended && cur.extended_ops_enabled && !cur.quantize_ops) {
    cur.extended_ops_enabled = false;
    ladder.emplace_back("extended_ops_off", cur);
  }
  if (!cur.mixed_formats) {
    if (cur.scheme == Scheme::kStandard) cur.extended_ops_enabled = false;
    cur.scheme = Scheme::kExtended;
    cur.mixed_formats = MixedFormats{DType::kE4M3, DType::kE3M4};
    ladder.emplace_back("mixed_formats", cur);
  }
  if (cur.activation_mode == ActivationMode::kStatic) {
    cur.activation_mode = ActivationMode::kDynamic;
    ladder.emplace_back("dynamic", cur);
  }

  std::size_t best = 0;
  for (const auto& [name, r] : ladder) {
    const Metric mt = evaluate_recipe(m, r, eval, calib, opt);
    const bool ok = pass_criterion(out.baseline, mt, opt.threshold);
    out.history.push_back({name, r, mt.value, ok});
    if (mt.value > out.history[best].metric) best = out.history.size() - 1;
    if (ok) {
      out.recipe = r;
      out.pass = true;
      out.final_metric = mt;
      return out;
    }
  }

  FallbackResult fb = fallback_search(m, out.history[best].recipe, eval, calib, opt);
  out.history.push_back({"fallback", fb.recipe, fb.metric.value, fb.pass});
  out.recipe = fb.recipe;
  out.pass = fb.pass;
  out.fallback = fb.fallback;
  out.final_metric = fb.metric;
  return out;
}

}  // namespace fp8q

#endif  // FP8Q_TUNER_HPP_
