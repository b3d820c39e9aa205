// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0

// fp8q: experiment and quantization driver. Every subcommand prints a CSV
// report to stdout, or writes it to --out.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "fp8q/fp8q.hpp"

namespace {

using namespace fp8q;

void emit(const CsvTable& t, const std::string& out) {
  if (out.empty()) {
    t.write(std::cout);
    return;
  }
  t.save(out);
  std::cout << "wrote " << out << "\n";
}

struct RunArgs {
  std::string model;
  std::string recipe;
  std::string format;
  std::string metric = "argmax_agreement";
  std::string out;
  std::uint64_t seed = 42;
  std::size_t samples = 1000;
  std::size_t calib_samples = 256;
  std::size_t bn_samples = 0;
  std::size_t batch = 100;
  double threshold = 0.01;
  double input_scale = 1.0;
};

void add_run_options(CLI::App* sc, RunArgs& a) {
  sc->add_option("--model", a.model, "model file (.fp8m)")->required()->check(CLI::ExistingFile);
  sc->add_option("--recipe", a.recipe, "recipe file (JSON)")->check(CLI::ExistingFile);
  sc->add_option("--format", a.format, "E5M2|E4M3|E3M4|INT8; overrides the recipe's formats");
  sc->add_option("--metric", a.metric, "argmax_agreement|cosine_similarity|neg_mse")->capture_default_str();
  sc->add_option("--threshold", a.threshold, "relative loss tolerance")->capture_default_str();
  sc->add_option("--seed", a.seed, "data seed")->capture_default_str();
  sc->add_option("--samples", a.samples, "evaluation samples")->capture_default_str();
  sc->add_option("--calib-samples", a.calib_samples, "calibration samples")->capture_default_str();
  sc->add_option("--bn-samples", a.bn_samples, "BatchNorm recalibration samples (0 = off)")->capture_default_str();
  sc->add_option("--input-scale", a.input_scale, "multiplier on evaluation inputs")->capture_default_str();
}

QuantRecipe resolve_recipe(const RunArgs& a) {
  QuantRecipe r = a.recipe.empty() ? QuantRecipe::standard(DType::kE4M3) : load_recipe(a.recipe);
  if (!a.format.empty()) {
    const DType d = parse_dtype(a.format);
    r.weight_format = r.activation_format = d;
    if (r.mixed_formats) r.mixed_formats = MixedFormats{d, d};
  }
  r.validate();
  return r;
}

struct RunData {
  ModelBundle model;
  Batches calib;
  EvalSet eval;
  TuneOptions opt;
};

RunData load_run(const RunArgs& a) {
  ModelBundle m = load_model(a.model);
  Batches calib = model_batches(m, a.calib_samples, std::min(a.batch, a.calib_samples), a.seed);
  EvalSet eval(m, model_batches(m, a.samples, std::min(a.batch, a.samples), a.seed + 1000, a.input_scale));
  TuneOptions opt;
  opt.metric = parse_metric(a.metric);
  opt.threshold = a.threshold;
  opt.seed = a.seed + 2000;
  return {std::move(m), std::move(calib), std::move(eval), opt};
}

void maybe_recalibrate(QuantizedModel& qm, const RunArgs& a) {
  if (a.bn_samples == 0) return;
  recalibrate_bn(qm, model_batches(qm.original, a.bn_samples, std::min(a.batch, a.bn_samples), a.seed + 3000),
                 TransformMode::kTrain, a.seed + 2000);
}

int cmd_quantize(const RunArgs& a) {
  const QuantRecipe r = resolve_recipe(a);
  RunData d = load_run(a);
  QuantizedModel qm = quantize_model(d.model, r, d.calib);
  maybe_recalibrate(qm, a);
  CsvTable t({"metric", "fp32", "quantized", "pass"});
  bool pass = false;
  double value = 0.0;
  for (MetricKind k : {MetricKind::kArgmaxAgreement, MetricKind::kCosineSimilarity, MetricKind::kNegMse}) {
    const Metric base = fp32_baseline(k), q = evaluate(d.eval, qm, k);
    const bool ok = pass_criterion(base, q, a.threshold);
    if (k == d.opt.metric) {
      pass = ok;
      value = q.value;
    }
    t.add_row({std::string(metric_name(k)), csv_real(base.value), csv_real(q.value), ok ? "1" : "0"});
  }
  std::printf("%s %s [%s] %s=%.6f\n", pass ? "PASS" : "FAIL", d.model.name.c_str(), r.describe().c_str(),
              a.metric.c_str(), value);
  for (OpKind k : kAllOpKinds) {
    if (const std::size_t c = coverage_count(qm, k)) {
      std::printf("coverage %s %zu\n", std::string(op_name(k)).c_str(), c);
    }
  }
  emit(t, a.out);
  return 0;
}

int cmd_tune(const RunArgs& a) {
  const QuantRecipe r = resolve_recipe(a);
  RunData d = load_run(a);
  d.opt.recalibrate_bn = a.bn_samples > 0;
  const TuneResult res = tune(d.model, r, d.eval, d.calib, d.opt);
  std::printf("%s %s [%s] %s=%.6f fallback=%zu\n", res.pass ? "PASS" : "FAIL", d.model.name.c_str(),
              res.recipe.describe().c_str(), a.metric.c_str(), res.final_metric.value, res.fallback_count());
  if (a.out.empty()) {
    res.history_csv().write(std::cout);
    return 0;
  }
  std::filesystem::create_directories(a.out);
  emit(res.history_csv(), a.out + "/tune_history.csv");
  save_recipe(a.out + "/tuned_recipe.json", res.recipe);
  std::cout << "wrote " << a.out << "/tuned_recipe.json\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fp8q: FP8 post-training quantization toolkit"};
  app.require_subcommand(1);

  std::string out;
  std::uint64_t seed = 42;
  std::size_t samples = 0;
  std::string format = "E4M3";

  auto* ft = app.add_subcommand("format-table", "format parameters and code census");
  ft->add_option("--out", out, "CSV path");

  auto* fig2 = app.add_subcommand("fig2-mse", "quantization error on a normal + outlier mixture");
  fig2->add_option("--seed", seed)->capture_default_str();
  fig2->add_option("--samples", samples, "sample count (default 100000)");
  fig2->add_option("--out", out, "output directory for the MSE and histogram CSVs");

  auto* kl = app.add_subcommand("kl-demo", "KL clipping on a narrow bulk with outliers near 6");
  kl->add_option("--seed", seed)->capture_default_str();
  kl->add_option("--samples", samples, "bulk sample count (default 1000000)");
  kl->add_option("--format", format, "FP8 format under test")->capture_default_str();
  kl->add_option("--out", out, "CSV path");

  auto* dt = app.add_subcommand("density-table", "per-binade value density, formula vs counted");
  dt->add_option("--out", out, "CSV path");

  auto* mx = app.add_subcommand("mixed-mse", "output MSE over activation/weight format pairs");
  mx->add_option("--seed", seed)->capture_default_str();
  mx->add_option("--samples", samples, "activation rows (default 1024)");
  mx->add_option("--out", out, "CSV path");

  std::string builder;
  double gain = 1.0;
  auto* bm = app.add_subcommand("build-model", "write a reference model file");
  bm->add_option("--builder", builder, "tiny_cnn|tiny_transformer|hostile_mlp")->required();
  bm->add_option("--seed", seed)->capture_default_str();
  bm->add_option("--channel-gain", gain, "tiny_cnn activation channel gain")->capture_default_str();
  bm->add_option("--out", out, "model path")->required();

  RunArgs qa, ta;
  auto* q = app.add_subcommand("quantize", "calibrate, quantize and evaluate a model");
  add_run_options(q, qa);
  q->add_option("--out", qa.out, "metrics CSV path");
  auto* tn = app.add_subcommand("tune", "accuracy-driven recipe search");
  add_run_options(tn, ta);
  tn->add_option("--out", ta.out, "output directory for history CSV and tuned recipe");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ft->parsed()) {
      emit(format_table(), out);
    } else if (fig2->parsed()) {
      MixtureConfig cfg;
      if (samples) cfg.samples = samples;
      const Fig2Result r = fig2_experiment(seed, cfg);
      r.mse_csv().write(std::cout);
      if (!out.empty()) {
        std::filesystem::create_directories(out);
        emit(r.mse_csv(), out + "/fig2_mse.csv");
        emit(r.values_csv(), out + "/fig2_values.csv");
        emit(r.data_histogram_csv(), out + "/fig2_data_histogram.csv");
      }
    } else if (kl->parsed()) {
      KlDemoConfig cfg;
      if (samples) cfg.samples = samples;
      cfg.format = parse_dtype(format);
      if (cfg.format == DType::kInt8) throw Error("kl-demo: --format must be an FP8 type");
      emit(kl_demo(seed, cfg).csv(cfg.format), out);
    } else if (dt->parsed()) {
      emit(density_csv(density_rows()), out);
    } else if (mx->parsed()) {
      MixedConfig cfg;
      if (samples) cfg.rows = samples;
      emit(mixed_mse(seed, cfg).csv(), out);
    } else if (bm->parsed()) {
      ModelBundle m = builder == "tiny_cnn" ? build_tiny_cnn(seed, TinyCnnOptions{gain}) : build_model(builder, seed);
      save_model(out, m);
      std::printf("wrote %s (%s, %zu nodes, checksum %016llx)\n", out.c_str(), m.name.c_str(), m.graph.nodes.size(),
                  static_cast<unsigned long long>(parameter_checksum(m)));
    } else if (q->parsed()) {
      return cmd_quantize(qa);
    } else if (tn->parsed()) {
      return cmd_tune(ta);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
