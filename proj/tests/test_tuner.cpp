// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <string>

#include "fp8q/models.hpp"
#include "fp8q/tuner.hpp"

namespace fp8q {
namespace {

ModelBundle linear_model(const Tensor& w) {
  ModelBundle m;
  m.name = "lin";
  m.domain = Domain::kNlp;
  Node n;
  n.id = "fc";
  n.kind = OpKind::kLinear;
  n.inputs = {"x"};
  n.output = "y";
  n.params = {{"weight", "w"}};
  m.graph.nodes = {n};
  m.graph.inputs = {"x"};
  m.graph.outputs = {"y"};
  m.params["w"] = w;
  m.validate();
  return m;
}

Batches random_batches(std::size_t n, std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Batches out;
  for (std::size_t b = 0; b < n; ++b) {
    Tensor x({rows, cols});
    for (float& v : x.values()) v = static_cast<float>(rng.normal());
    out.push_back({{"x", x}});
  }
  return out;
}

TEST(PassCriterion, Examples) {
  EXPECT_TRUE(pass_criterion(1.0, 0.995));
  EXPECT_FALSE(pass_criterion(1.0, 0.985));
  EXPECT_TRUE(pass_criterion(0.7615, 0.7544));
  EXPECT_TRUE(pass_criterion(1.0, 0.99));  // boundary is inclusive
  EXPECT_TRUE(pass_criterion(0.8, 0.9));   // gains always pass
  EXPECT_FALSE(pass_criterion(0.7615, 0.7544, 0.005));
}

TEST(PassCriterion, OrientationAndZeroBaseline) {
  const Metric lo_fp{"loss", 1.0, false};
  EXPECT_TRUE(pass_criterion(lo_fp, Metric{"loss", 1.005, false}));
  EXPECT_FALSE(pass_criterion(lo_fp, Metric{"loss", 1.02, false}));
  EXPECT_TRUE(pass_criterion(lo_fp, Metric{"loss", 0.5, false}));
  // FP32 value 0: absolute loss.
  const Metric zero{"neg_mse", 0.0, true};
  EXPECT_TRUE(pass_criterion(zero, Metric{"neg_mse", -0.005, true}));
  EXPECT_FALSE(pass_criterion(zero, Metric{"neg_mse", -0.02, true}));
  EXPECT_TRUE(pass_criterion(zero, Metric{"neg_mse", 0.0, true}, 0.0));
  // Negative baselines use |fp32|.
  EXPECT_TRUE(pass_criterion(Metric{"m", -2.0, true}, Metric{"m", -2.01, true}));
  EXPECT_FALSE(pass_criterion(Metric{"m", -2.0, true}, Metric{"m", -2.05, true}));
}

TEST(PassCriterion, Errors) {
  EXPECT_THROW(pass_criterion(Metric{"a", 1.0, true}, Metric{"b", 1.0, true}), Error);
  EXPECT_THROW(pass_criterion(Metric{"a", 1.0, true}, Metric{"a", 1.0, false}), Error);
  EXPECT_THROW(pass_criterion(1.0, std::numeric_limits<double>::quiet_NaN()), Error);
}

TEST(Evaluate, MetricsAgainstIndependentComputation) {
  Rng rng(1);
  Tensor w({5, 6});
  for (float& v : w.values()) v = static_cast<float>(rng.normal());
  const ModelBundle m = linear_model(w);
  const Batches b = random_batches(3, 10, 6, 2);
  const EvalSet eval(m, b);
  for (MetricKind k : {MetricKind::kArgmaxAgreement, MetricKind::kCosineSimilarity, MetricKind::kNegMse}) {
    EXPECT_EQ(evaluate(eval, m, k).value, fp32_baseline(k).value) << metric_name(k);
  }
  Tensor w2 = w;
  for (float& v : w2.values()) v *= 2.0f;
  const ModelBundle doubled = linear_model(w2);
  EXPECT_EQ(evaluate(eval, doubled, MetricKind::kArgmaxAgreement).value, 1.0);
  EXPECT_NEAR(evaluate(eval, doubled, MetricKind::kCosineSimilarity).value, 1.0, 1e-12);
  double sq = 0.0, n = 0.0;
  for (const auto& t : eval.reference) {
    for (float v : t.data()) sq += static_cast<double>(v) * v;
    n += static_cast<double>(t.size());
  }
  EXPECT_NEAR(evaluate(eval, doubled, MetricKind::kNegMse).value, -sq / n, 1e-9 * sq / n);
  Tensor wn = w;
  for (float& v : wn.values()) v = -v;
  EXPECT_EQ(evaluate(eval, linear_model(wn), MetricKind::kArgmaxAgreement).value, 0.0);
  EXPECT_NEAR(evaluate(eval, linear_model(wn), MetricKind::kCosineSimilarity).value, -1.0, 1e-12);
  EXPECT_THROW(EvalSet(m, {}), Error);
  EXPECT_EQ(parse_metric("cosine_similarity"), MetricKind::kCosineSimilarity);
  EXPECT_THROW(parse_metric("top5"), Error);
}

TEST(Evaluate, NoOpRecipeAgreesFully) {
  const ModelBundle m = build_tiny_transformer_block(3);
  const Batches b = transformer_batches(32, 16, 1);
  const EvalSet eval(m, b);
  const QuantizedModel qm = quantize_model(m, QuantRecipe::empty(), b);
  EXPECT_EQ(evaluate(eval, qm, MetricKind::kArgmaxAgreement).value, 1.0);
  EXPECT_EQ(evaluate(eval, qm, MetricKind::kNegMse).value, 0.0);
}

TEST(Tune, PassingBaseGivesSingleStep) {
  const ModelBundle m = build_tiny_cnn(42);
  const Batches calib = cnn_batches(42, 128, 64, 1);
  const EvalSet eval(m, cnn_batches(42, 256, 64, 2));
  const TuneResult r = tune(m, QuantRecipe::standard(DType::kE4M3), eval, calib);
  ASSERT_TRUE(r.pass);
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.history[0].candidate, "base");
  EXPECT_TRUE(r.recipe == QuantRecipe::standard(DType::kE4M3));
  EXPECT_TRUE(r.fallback.empty());
  EXPECT_EQ(r.fallback_count(), 0u);
  EXPECT_TRUE(pass_criterion(r.baseline, r.final_metric));
}

TEST(Tune, LadderSkipsNoOpSteps) {
  // Tolerance 0 on neg_mse: only an exact FP32 match passes, so every step
  // runs and the fallback reverts everything.
  const ModelBundle m = build_tiny_transformer_block(2);
  const Batches calib = transformer_batches(16, 8, 1);
  const EvalSet eval(m, transformer_batches(16, 8, 2));
  TuneOptions opt;
  opt.metric = MetricKind::kNegMse;
  opt.threshold = 0.0;
  QuantRecipe base = QuantRecipe::extended(DType::kE4M3);
  base.quantize_first_last = true;
  const TuneResult r = tune(m, base, eval, calib, opt);
  std::vector<std::string> names;
  for (const auto& s : r.history) names.push_back(s.candidate);
  EXPECT_EQ(names, (std::vector<std::string>{"base", "first_last_off", "extended_ops_off", "mixed_formats", "dynamic",
                                             "fallback"}));
  for (std::size_t i = 0; i + 1 < r.history.size(); ++i) EXPECT_FALSE(r.history[i].pass);
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.final_metric.value, 0.0);
  // Standard base: no first/last toggle (already off), no extended_ops step.
  const TuneResult s = tune(m, QuantRecipe::standard(DType::kE4M3), eval, calib, opt);
  names.clear();
  for (const auto& st : s.history) names.push_back(st.candidate);
  EXPECT_EQ(names, (std::vector<std::string>{"base", "mixed_formats", "dynamic", "fallback"}));
  // The mixed step keeps standard operator coverage.
  const QuantRecipe& mixed = s.history[1].recipe;
  EXPECT_EQ(mixed.op_set(), QuantRecipe::standard(DType::kE4M3).op_set());
  ASSERT_TRUE(mixed.mixed_formats);
  EXPECT_EQ(mixed.mixed_formats->activation, DType::kE4M3);
  EXPECT_EQ(mixed.mixed_formats->weight, DType::kE3M4);
}

TEST(Tune, FirstPassingCandidateIsAccepted) {
  const ModelBundle m = build_tiny_transformer_block(5);
  const Batches calib = transformer_batches(32, 16, 1, 4.0);
  const EvalSet eval(m, transformer_batches(64, 16, 2, 4.0));
  const TuneResult r = tune(m, QuantRecipe::extended(DType::kE3M4), eval, calib);
  ASSERT_FALSE(r.history.empty());
  for (std::size_t i = 0; i + 1 < r.history.size(); ++i) EXPECT_FALSE(r.history[i].pass);
  EXPECT_EQ(r.history.back().pass, r.pass);
  if (r.pass) {
    EXPECT_TRUE(r.recipe == r.history.back().recipe);
    EXPECT_EQ(r.final_metric.value, r.history.back().metric);
  }
}

class HostileMlp : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(HostileMlp, FallbackIsolatesTheHostileNode) {
  const std::uint64_t seed = GetParam();
  const ModelBundle m = build_hostile_mlp(seed);
  const Batches calib = mlp_batches(seed, 256, 64, 1);
  const EvalSet eval(m, mlp_batches(seed, 512, 128, 2));
  const QuantRecipe base = QuantRecipe::standard(DType::kE4M3);
  EXPECT_FALSE(pass_criterion(fp32_baseline(MetricKind::kArgmaxAgreement),
                              evaluate_recipe(m, base, eval, calib, {})));
  const TuneResult r = tune(m, base, eval, calib);
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.history.back().candidate, "fallback");
  EXPECT_EQ(r.fallback, (std::set<std::string>{"fc2"}));
  EXPECT_EQ(r.history_csv().header(), (std::vector<std::string>{"candidate", "recipe", "metric", "pass"}));
}

INSTANTIATE_TEST_SUITE_P(Seeds, HostileMlp, ::testing::Values(42u, 43u, 44u));

TEST(FallbackSearch, PassingRecipeNeedsNothing) {
  const ModelBundle m = build_hostile_mlp(42);
  const Batches calib = mlp_batches(42, 128, 64, 1);
  const EvalSet eval(m, mlp_batches(42, 128, 64, 2));
  const FallbackResult fb = fallback_search(m, QuantRecipe::empty(), eval, calib);
  EXPECT_TRUE(fb.pass);
  EXPECT_TRUE(fb.fallback.empty());
}

TEST(FallbackSearch, RevertingEverythingReproducesFp32) {
  const ModelBundle m = build_tiny_transformer_block(6);
  const Batches calib = transformer_batches(16, 8, 1);
  const EvalSet eval(m, transformer_batches(16, 8, 2));
  TuneOptions opt;
  opt.metric = MetricKind::kNegMse;
  opt.threshold = 0.0;
  const QuantRecipe r = QuantRecipe::extended(DType::kE5M2);
  const FallbackResult fb = fallback_search(m, r, eval, calib, opt);
  std::set<std::string> all;
  for (const auto& [id, p] : plan_nodes(m, r)) all.insert(id);
  EXPECT_EQ(fb.fallback, all);
  EXPECT_TRUE(fb.pass);
  EXPECT_EQ(fb.metric.value, 0.0);
  const QuantizedModel qm = quantize_model(m, fb.recipe, calib);
  EXPECT_TRUE(qm.nodes.empty());
}

TEST(FallbackSearch, Deterministic) {
  const ModelBundle m = build_hostile_mlp(7);
  const Batches calib = mlp_batches(7, 128, 64, 1);
  const EvalSet eval(m, mlp_batches(7, 256, 64, 2));
  const TuneOptions opt;
  const FallbackResult a = fallback_search(m, QuantRecipe::standard(DType::kE3M4), eval, calib, opt);
  const FallbackResult b = fallback_search(m, QuantRecipe::standard(DType::kE3M4), eval, calib, opt);
  EXPECT_EQ(a.fallback, b.fallback);
  EXPECT_EQ(a.metric.value, b.metric.value);
  const TuneResult ta = tune(m, QuantRecipe::standard(DType::kE3M4), eval, calib, opt);
  const TuneResult tb = tune(m, QuantRecipe::standard(DType::kE3M4), eval, calib, opt);
  EXPECT_EQ(ta.history_csv().str(), tb.history_csv().str());
}

}  // namespace
}  // namespace fp8q
