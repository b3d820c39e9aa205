// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <string>

#include "fp8q/models.hpp"
#include "fp8q/workflow.hpp"

namespace fp8q {
namespace {

std::set<std::string> quantized_ids(const QuantizedModel& qm) {
  std::set<std::string> s;
  for (const auto& [id, nq] : qm.nodes) s.insert(id);
  return s;
}

// x[B,8] -> linear(8->4)
ModelBundle single_linear(std::uint64_t seed) {
  Rng rng(seed);
  ModelBundle m;
  m.name = "lin";
  m.domain = Domain::kNlp;
  Node n;
  n.id = "fc";
  n.kind = OpKind::kLinear;
  n.inputs = {"x"};
  n.output = "y";
  n.params = {{"weight", "fc.w"}};
  m.graph.nodes = {n};
  m.graph.inputs = {"x"};
  m.graph.outputs = {"y"};
  Tensor w({4, 8});
  for (float& v : w.values()) v = static_cast<float>(rng.normal());
  m.params["fc.w"] = w;
  m.validate();
  return m;
}

Batches linear_batches(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Batches out;
  for (std::size_t b = 0; b < n; ++b) {
    Tensor x({16, 8});
    for (float& v : x.values()) v = static_cast<float>(scale * rng.normal());
    out.push_back({{"x", x}});
  }
  return out;
}

TEST(FirstLast, Identification) {
  EXPECT_EQ(identify_first_last(build_tiny_cnn(1)), (std::set<std::string>{"conv1", "fc"}));
  EXPECT_TRUE(identify_first_last(build_tiny_transformer_block(1)).empty());
  EXPECT_TRUE(identify_first_last(build_hostile_mlp(1)).empty());
  ModelBundle cnn = build_tiny_cnn(1);
  // Drop the classifier: conv layers only.
  cnn.graph.nodes.erase(cnn.graph.nodes.end() - 2, cnn.graph.nodes.end());
  cnn.graph.outputs = {"relu2.out"};
  EXPECT_EQ(identify_first_last(cnn), (std::set<std::string>{"conv1"}));
}

TEST(ApplyRecipe, EmptyRecipeIsBitExact) {
  for (const std::string builder : {"tiny_cnn", "tiny_transformer", "hostile_mlp"}) {
    const ModelBundle m = build_model(builder, 3);
    const Batches b = model_batches(m, 8, 8, 4);
    const QuantizedModel qm = quantize_model(m, QuantRecipe::empty(), b);
    EXPECT_TRUE(qm.nodes.empty());
    const std::string out = m.graph.outputs[0];
    EXPECT_TRUE(bit_equal(run_quantized(qm, b[0]).at(out), forward_outputs(m, b[0]).at(out))) << builder;
  }
}

TEST(ApplyRecipe, StandardCnnExemptsFirstAndLast) {
  const ModelBundle m = build_tiny_cnn(5);
  const Batches b = cnn_batches(5, 32, 16, 1);
  const QuantizedModel qm = quantize_model(m, QuantRecipe::standard(DType::kE4M3), b);
  EXPECT_EQ(quantized_ids(qm), (std::set<std::string>{"conv2"}));
  EXPECT_TRUE(bit_equal(qm.quantized.params.at("conv1.weight"), m.params.at("conv1.weight")));
  EXPECT_TRUE(bit_equal(qm.quantized.params.at("fc.weight"), m.params.at("fc.weight")));
  EXPECT_FALSE(bit_equal(qm.quantized.params.at("conv2.weight"), m.params.at("conv2.weight")));
  EXPECT_TRUE(bit_equal(qm.quantized.params.at("conv2.weight"),
                        fake_quantize(m.params.at("conv2.weight"), DType::kE4M3, QuantGranularity::per_channel(0))));
  QuantRecipe all = QuantRecipe::standard(DType::kE4M3);
  all.quantize_first_last = true;
  EXPECT_EQ(quantized_ids(quantize_model(m, all, b)), (std::set<std::string>{"conv1", "conv2", "fc"}));
}

TEST(ApplyRecipe, ExtendedCoversTransformerOps) {
  const ModelBundle m = build_tiny_transformer_block(2);
  const Batches b = transformer_batches(16, 8, 1);
  const QuantizedModel std_qm = quantize_model(m, QuantRecipe::standard(DType::kE4M3), b);
  EXPECT_EQ(quantized_ids(std_qm), (std::set<std::string>{"embed", "out_proj", "head"}));
  const QuantizedModel ext = quantize_model(m, QuantRecipe::extended(DType::kE4M3), b);
  for (const std::string id : {"ln", "scores", "context", "add_in", "residual", "q_proj", "k_proj", "v_proj"}) {
    ASSERT_TRUE(ext.is_quantized(id)) << id;
    EXPECT_FALSE(ext.nodes.at(id).inputs.empty()) << id;
  }
  EXPECT_EQ(ext.nodes.at("scores").inputs.size(), 2u);
  EXPECT_EQ(ext.nodes.at("q_proj").inputs.size(), 1u);
  EXPECT_FALSE(ext.is_quantized("attn_softmax"));
  // Token ids are never quantized; the table is, over the embedding dim.
  EXPECT_TRUE(ext.nodes.at("embed").inputs.empty());
  ASSERT_TRUE(ext.nodes.at("embed").weight);
  EXPECT_EQ(ext.nodes.at("embed").weight->scales.size(), kTfDim);
  // matmul weights [K,N] are scaled per output column.
  EXPECT_EQ(ext.nodes.at("q_proj").weight->scales.size(), kTfDim);
  EXPECT_EQ(ext.nodes.at("q_proj").weight->granularity, QuantGranularity::per_channel(1));
  EXPECT_EQ(coverage_count(ext, OpKind::kBatchMatMul), 2u);
  EXPECT_EQ(coverage_count(ext, OpKind::kLayerNorm), 1u);
  QuantRecipe off = QuantRecipe::extended(DType::kE4M3);
  off.extended_ops_enabled = false;
  EXPECT_EQ(quantized_ids(quantize_model(m, off, b)), quantized_ids(std_qm));
}

TEST(ApplyRecipe, ExtendedIsStrictSupersetOfStandard) {
  for (const std::string builder : {"tiny_cnn", "tiny_transformer", "hostile_mlp"}) {
    const ModelBundle m = build_model(builder, 9);
    const Batches b = model_batches(m, 8, 8, 2);
    for (DType d : kAllDTypes) {
      const auto s = quantized_ids(quantize_model(m, QuantRecipe::standard(d), b));
      const auto e = quantized_ids(quantize_model(m, QuantRecipe::extended(d), b));
      EXPECT_TRUE(std::includes(e.begin(), e.end(), s.begin(), s.end())) << builder;
      bool has_extended_kind = false;
      for (const auto& n : m.graph.nodes) {
        const auto& x = extended_only_ops();
        has_extended_kind |= std::find(x.begin(), x.end(), n.kind) != x.end();
      }
      if (has_extended_kind) {
        EXPECT_GT(e.size(), s.size()) << builder;
      }
    }
  }
}

TEST(ApplyRecipe, MixedFormatsSplitWeightAndActivation) {
  const ModelBundle m = build_tiny_transformer_block(4);
  const Batches b = transformer_batches(16, 8, 2);
  QuantRecipe r = QuantRecipe::extended(DType::kE4M3);
  r.mixed_formats = MixedFormats{DType::kE4M3, DType::kE3M4};
  const QuantizedModel qm = quantize_model(m, r, b);
  const NodeQuant& nq = qm.nodes.at("out_proj");
  EXPECT_EQ(nq.weight->dtype, DType::kE3M4);
  EXPECT_EQ(nq.inputs.at(0).dtype, DType::kE4M3);
  EXPECT_TRUE(bit_equal(qm.quantized.params.at("wo.weight"),
                        fake_quantize(m.params.at("wo.weight"), DType::kE3M4, QuantGranularity::per_channel(0))));
  QuantRecipe bad = QuantRecipe::standard(DType::kE4M3);
  bad.mixed_formats = MixedFormats{};
  EXPECT_THROW(quantize_model(m, bad, b), Error);
}

TEST(ApplyRecipe, OverridesAndFallback) {
  const ModelBundle m = build_tiny_transformer_block(4);
  const Batches b = transformer_batches(16, 8, 2);
  QuantRecipe r = QuantRecipe::extended(DType::kE4M3);
  r.per_node_overrides["ln"].fallback_fp32 = true;
  r.per_node_overrides["head"].weight = DType::kE5M2;
  r.per_node_overrides["head"].activation = DType::kE3M4;
  const QuantizedModel qm = quantize_model(m, r, b);
  EXPECT_FALSE(qm.is_quantized("ln"));
  EXPECT_EQ(qm.nodes.at("head").weight->dtype, DType::kE5M2);
  EXPECT_EQ(qm.nodes.at("head").inputs.at(0).dtype, DType::kE3M4);
  QuantRecipe unknown = r;
  unknown.per_node_overrides["nope"].fallback_fp32 = true;
  EXPECT_THROW(quantize_model(m, unknown, b), Error);
}

TEST(Calibrate, ConstantInputGivesConstantRange) {
  const ModelBundle m = single_linear(1);
  const Batches b = {{{"x", Tensor::full({4, 8}, -2.5f)}}, {{"x", Tensor::full({4, 8}, 1.0f)}}};
  const CalibrationMap c = calibrate(m, QuantRecipe::standard(DType::kE4M3), b);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.at("x").max_t, 2.5);
  EXPECT_EQ(c.at("x").absmax, 2.5);
}

TEST(Calibrate, BatchSplitInvariant) {
  const ModelBundle m = build_tiny_cnn(6);
  const QuantRecipe r = QuantRecipe::standard(DType::kE3M4);
  const Batches split = cnn_batches(6, 64, 16, 3);
  const Batches merged = cnn_batches(6, 64, 64, 3);
  const CalibrationMap a = calibrate(m, r, split), c = calibrate(m, r, merged);
  ASSERT_EQ(a.size(), c.size());
  for (const auto& [edge, er] : a) {
    EXPECT_EQ(er.max_t, c.at(edge).max_t) << edge;
    EXPECT_EQ(er.absmax, c.at(edge).absmax) << edge;
  }
}

TEST(Calibrate, TransformerAttentionInputReflectsOutlierChannel) {
  const ModelBundle m = build_tiny_transformer_block(8);
  const Batches b = transformer_batches(32, 8, 5);
  const CalibrationMap c = calibrate(m, QuantRecipe::extended(DType::kE4M3), b);
  double direct = 0.0, col0 = 0.0, rest = 0.0;
  for (const auto& x : b) {
    const Tensor h = forward(m, x).at("h");
    direct = std::max(direct, abs_max(h));
    for (std::size_t i = 0; i < h.size(); ++i) {
      double& target = (i % kTfDim == 0) ? col0 : rest;
      target = std::max(target, static_cast<double>(std::fabs(h[i])));
    }
  }
  EXPECT_EQ(c.at("h").max_t, direct);
  EXPECT_EQ(direct, col0);
  EXPECT_GT(col0, 2.0 * rest);
}

TEST(Calibrate, E5M2ConsumersSkipClippingSearch) {
  const ModelBundle m = build_tiny_transformer_block(8);
  const Batches b = transformer_batches(16, 8, 5);
  QuantRecipe r = QuantRecipe::extended(DType::kE5M2);
  r.calibration = ObserverConfig::kl();
  const CalibrationMap c = calibrate(m, r, b);
  for (const auto& [edge, er] : c) {
    EXPECT_EQ(er.method, ObserverKind::kAbsMax) << edge;
    EXPECT_EQ(er.max_t, er.absmax) << edge;
  }
  QuantRecipe r4 = QuantRecipe::extended(DType::kE4M3);
  r4.calibration = ObserverConfig::kl();
  const CalibrationMap c4 = calibrate(m, r4, b);
  bool clipped = false;
  for (const auto& [edge, er] : c4) {
    EXPECT_EQ(er.method, ObserverKind::kKl);
    EXPECT_LE(er.max_t, er.absmax);
    clipped |= er.max_t < er.absmax;
  }
  EXPECT_TRUE(clipped);
}

TEST(Calibrate, Errors) {
  const ModelBundle m = single_linear(1);
  EXPECT_THROW(calibrate(m, QuantRecipe::standard(DType::kE4M3), {}), Error);
  QuantRecipe dyn = QuantRecipe::standard(DType::kE4M3);
  dyn.activation_mode = ActivationMode::kDynamic;
  EXPECT_THROW(calibrate(m, dyn, linear_batches(1, 1)), Error);
  EXPECT_THROW(apply_recipe(m, QuantRecipe::standard(DType::kE4M3)), Error);
  EXPECT_THROW(apply_recipe(m, QuantRecipe::standard(DType::kE4M3), CalibrationMap{}), Error);
  EXPECT_NO_THROW(apply_recipe(m, dyn));
}

TEST(Calibrate, ReportColumns) {
  const ModelBundle m = single_linear(1);
  QuantRecipe r = QuantRecipe::standard(DType::kE4M3);
  r.calibration = ObserverConfig::percentile_of(99.0);
  const CsvTable t = calibration_report(calibrate(m, r, linear_batches(4, 2)));
  EXPECT_EQ(t.header(), (std::vector<std::string>{"tensor_name", "method", "max_T", "clip_ratio"}));
  ASSERT_EQ(t.rows().size(), 1u);
  EXPECT_EQ(t.rows()[0][0], "x");
  EXPECT_EQ(t.rows()[0][1], "percentile");
  EXPECT_LT(std::stod(t.rows()[0][3]), 1.0);
}

TEST(RunQuantized, StaticVersusDynamicScales) {
  const ModelBundle m = single_linear(2);
  const Batches calib = linear_batches(4, 3);
  double calib_max = 0.0;
  for (const auto& b : calib) calib_max = std::max(calib_max, abs_max(b.at("x")));
  QuantRecipe st = QuantRecipe::standard(DType::kE4M3);
  QuantRecipe dy = st;
  dy.activation_mode = ActivationMode::kDynamic;
  const QuantizedModel qs = quantize_model(m, st, calib);
  const QuantizedModel qd = quantize_model(m, dy, calib);
  const Node& fc = m.graph.node("fc");
  const auto hs = quant_hooks(qs), hd = quant_hooks(qd);
  for (double k : {0.25, 1.0, 3.0}) {
    Tensor x = calib[0].at("x");
    for (float& v : x.values()) v = static_cast<float>(v * k);
    const Tensor ideal = fake_quantize(x, DType::kE4M3, QuantGranularity::per_tensor(), abs_max(x));
    const Tensor stale = fake_quantize(x, DType::kE4M3, QuantGranularity::per_tensor(), calib_max);
    EXPECT_TRUE(bit_equal(*hd.transform_input(fc, 0, x), ideal)) << k;
    EXPECT_TRUE(bit_equal(*hs.transform_input(fc, 0, x), stale)) << k;
    // Static scale is off from the ideal one by the input shift.
    const double s_static = compute_scale(calib_max, DType::kE4M3);
    const double s_ideal = compute_scale(abs_max(x), DType::kE4M3);
    EXPECT_NEAR(s_static / s_ideal, k * abs_max(calib[0].at("x")) / calib_max, 1e-6);
  }
  // Same data as calibration and a single batch: identical.
  const Batches one = {calib[0]};
  const QuantizedModel q1 = quantize_model(m, st, one);
  EXPECT_TRUE(bit_equal(run_quantized(q1, one[0]).at("y"), run_quantized(qd, one[0]).at("y")));
}

TEST(RunQuantized, ZeroRangeEdgeUsesUnitScale) {
  const ModelBundle m = single_linear(2);
  const Batches zero = {{{"x", Tensor({4, 8})}}};
  const QuantizedModel qm = quantize_model(m, QuantRecipe::standard(DType::kE3M4), zero);
  EXPECT_EQ(qm.nodes.at("fc").inputs.at(0).max_t, 0.0);
  const Tensor x = Tensor::full({1, 8}, 0.3f);
  const Tensor seen = *quant_hooks(qm).transform_input(m.graph.node("fc"), 0, x);
  // scale 1: 0.3 rounds on the unscaled E3M4 grid
  EXPECT_EQ(seen[0], static_cast<float>(fake_quant_value(0.3f, Fp8FormatSpec::e3m4())));
}

TEST(RunQuantized, QuantizedCnnShiftsBatchNormStatistics) {
  const ModelBundle m = build_tiny_cnn(42, TinyCnnOptions{3072.0});
  const Batches b = cnn_batches(42, 256, 64, 7);
  QuantizedModel qm = quantize_model(m, QuantRecipe::standard(DType::kE3M4), b);
  const BnStatsMap s = bn_collect(qm, b, TransformMode::kInfer, 1);
  const Tensor& stored = m.params.at("bn2.running_var");
  double max_rel = 0.0;
  for (std::size_t c = 0; c < stored.size(); ++c) {
    max_rel = std::max(max_rel, std::fabs(s.at("bn2").var[c] - stored[c]) / stored[c]);
  }
  EXPECT_GT(max_rel, 0.05);
  // bn1 is upstream of every quantized node, so its input is unchanged.
  const BnStatsMap fp = bn_collect(m, b, TransformMode::kInfer, 1);
  EXPECT_EQ(s.at("bn1").mean, fp.at("bn1").mean);
  recalibrate_bn(qm, b, TransformMode::kInfer, 1);
  for (std::size_t c = 0; c < stored.size(); ++c) {
    EXPECT_FLOAT_EQ(qm.quantized.params.at("bn2.running_var")[c], static_cast<float>(s.at("bn2").var[c]));
  }
  EXPECT_TRUE(bit_equal(qm.original.params.at("bn2.running_var"), stored));
}

TEST(Recipe, JsonRoundTrip) {
  std::vector<QuantRecipe> recipes = {QuantRecipe::standard(DType::kE4M3), QuantRecipe::extended(DType::kE3M4),
                                      QuantRecipe::empty(), QuantRecipe::standard(DType::kInt8)};
  QuantRecipe full = QuantRecipe::extended(DType::kE5M2);
  full.mixed_formats = MixedFormats{DType::kE5M2, DType::kE3M4};
  full.activation_mode = ActivationMode::kDynamic;
  full.quantize_first_last = true;
  full.extended_ops_enabled = false;
  full.per_node_overrides["a"].fallback_fp32 = true;
  full.per_node_overrides["b"].weight = DType::kE4M3;
  full.quantize_ops = std::vector<OpKind>{OpKind::kLinear, OpKind::kAdd};
  full.calibration = ObserverConfig::percentile_of(99.5);
  recipes.push_back(full);
  for (const auto& r : recipes) {
    const QuantRecipe back = recipe_from_json(nlohmann::json::parse(recipe_to_json(r).dump()));
    EXPECT_TRUE(back == r) << r.describe();
    EXPECT_EQ(back.describe(), r.describe());
  }
  const auto path = std::filesystem::temp_directory_path() / "fp8q_recipe.json";
  save_recipe(path.string(), full);
  EXPECT_TRUE(load_recipe(path.string()) == full);
  std::filesystem::remove(path);
}

TEST(Recipe, Rejections) {
  EXPECT_THROW(recipe_from_json(nlohmann::json::parse(R"({"weight_fmt": "E4M3"})")), Error);
  EXPECT_THROW(recipe_from_json(nlohmann::json::parse(R"({"weight_format": "E2M5"})")), Error);
  EXPECT_THROW(recipe_from_json(nlohmann::json::parse(R"({"scheme": "turbo"})")), Error);
  EXPECT_THROW(recipe_from_json(nlohmann::json::parse(R"([1, 2])")), Error);
  EXPECT_THROW(recipe_from_json(nlohmann::json::parse(R"({"weight_format": 3})")), Error);
  EXPECT_THROW(recipe_from_json(nlohmann::json::parse(
                   R"({"scheme": "standard", "mixed_formats": {"activation": "E4M3", "weight": "E3M4"}})")),
               Error);
  EXPECT_THROW(recipe_from_json(nlohmann::json::parse(R"({"calibration": {"method": "percentile", "percentile": 0}})")),
               Error);
  EXPECT_THROW(load_recipe("/nonexistent/recipe.json"), Error);
  const QuantRecipe r = recipe_from_json(nlohmann::json::parse(R"({"activation_format": "E3M4"})"));
  EXPECT_EQ(r.activation_format, DType::kE3M4);
  EXPECT_EQ(r.weight_format, DType::kE4M3);
}

}  // namespace
}  // namespace fp8q
