// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0
//
// Quantization recipes and their application to a ModelBundle: operator
// selection, first/last exemption, per-channel weight and per-tensor
// activation fake quantization, mixed formats, static or dynamic scales.

#ifndef FP8Q_WORKFLOW_HPP_
#define FP8Q_WORKFLOW_HPP_

#include <algorithm>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fp8q/calibration.hpp"
#include "fp8q/csv.hpp"
#include "fp8q/data.hpp"
#include "fp8q/graph.hpp"
#include "fp8q/quantizer.hpp"

namespace fp8q {

enum class Scheme { kStandard, kExtended };
enum class ActivationMode { kStatic, kDynamic };

inline std::string_view scheme_name(Scheme s) { return s == Scheme::kStandard ? "standard" : "extended"; }
inline Scheme parse_scheme(std::string_view s) {
  if (s == "standard") return Scheme::kStandard;
  if (s == "extended") return Scheme::kExtended;
  throw Error("unknown scheme: " + std::string(s));
}
inline std::string_view activation_mode_name(ActivationMode m) {
  return m == ActivationMode::kStatic ? "static" : "dynamic";
}
inline ActivationMode parse_activation_mode(std::string_view s) {
  if (s == "static") return ActivationMode::kStatic;
  if (s == "dynamic") return ActivationMode::kDynamic;
  throw Error("unknown activation mode: " + std::string(s));
}

inline const std::vector<OpKind>& standard_ops() {
  static const std::vector<OpKind> ops = {OpKind::kConv2d, OpKind::kLinear, OpKind::kEmbedding};
  return ops;
}

inline const std::vector<OpKind>& extended_only_ops() {
  static const std::vector<OpKind> ops = {OpKind::kLayerNorm, OpKind::kBatchNorm, OpKind::kAdd,
                                          OpKind::kMul,       OpKind::kMatMul,    OpKind::kBatchMatMul};
  return ops;
}

struct MixedFormats {
  DType activation = DType::kE4M3;
  DType weight = DType::kE3M4;

  friend bool operator==(const MixedFormats&, const MixedFormats&) = default;
};

struct NodeOverride {
  bool fallback_fp32 = false;
  std::optional<DType> activation;
  std::optional<DType> weight;

  friend bool operator==(const NodeOverride&, const NodeOverride&) = default;
};

struct QuantRecipe {
  DType weight_format = DType::kE4M3;
  DType activation_format = DType::kE4M3;
  Scheme scheme = Scheme::kStandard;
  bool extended_ops_enabled = true;
  std::optional<MixedFormats> mixed_formats;
  ActivationMode activation_mode = ActivationMode::kStatic;
  bool quantize_first_last = false;
  std::map<std::string, NodeOverride> per_node_overrides;
  // Explicit operator set; replaces the scheme's set when present.
  std::optional<std::vector<OpKind>> quantize_ops;
  ObserverConfig calibration;

  static QuantRecipe standard(DType format) {
    QuantRecipe r;
    r.weight_format = r.activation_format = format;
    return r;
  }
  static QuantRecipe extended(DType format) {
    QuantRecipe r = standard(format);
    r.scheme = Scheme::kExtended;
    return r;
  }
  // Quantizes nothing.
  static QuantRecipe empty() {
    QuantRecipe r;
    r.quantize_ops = std::vector<OpKind>{};
    return r;
  }

  std::set<OpKind> op_set() const {
    if (quantize_ops) return {quantize_ops->begin(), quantize_ops->end()};
    std::set<OpKind> s(standard_ops().begin(), standard_ops().end());
    if (scheme == Scheme::kExtended && extended_ops_enabled) s.insert(extended_only_ops().begin(), extended_only_ops().end());
    return s;
  }

  void validate() const {
    if (mixed_formats && scheme != Scheme::kExtended) {
      throw Error("recipe: mixed_formats requires the extended scheme");
    }
    if (calibration.kind == ObserverKind::kPercentile &&
        !(calibration.percentile > 0.0 && calibration.percentile <= 100.0)) {
      throw Error("recipe: percentile must lie in (0, 100]");
    }
  }

  std::string describe() const {
    std::ostringstream os;
    if (quantize_ops && quantize_ops->empty()) return "empty";
    os << scheme_name(scheme);
    if (mixed_formats) {
      os << " act=" << dtype_name(mixed_formats->activation) << " wt=" << dtype_name(mixed_formats->weight);
    } else {
      os << " act=" << dtype_name(activation_format) << " wt=" << dtype_name(weight_format);
    }
    if (scheme == Scheme::kExtended) os << " extended_ops=" << (extended_ops_enabled ? "on" : "off");
    os << " first_last=" << (quantize_first_last ? "on" : "off") << " " << activation_mode_name(activation_mode);
    std::vector<std::string> fb;
    for (const auto& [id, o] : per_node_overrides) {
      if (o.fallback_fp32) fb.push_back(id);
    }
    if (!fb.empty()) {
      os << " fallback=";
      for (std::size_t i = 0; i < fb.size(); ++i) os << (i ? "+" : "") << fb[i];
    }
    return os.str();
  }

  friend bool operator==(const QuantRecipe& a, const QuantRecipe& b) {
    return a.weight_format == b.weight_format && a.activation_format == b.activation_format &&
           a.scheme == b.scheme && a.extended_ops_enabled == b.extended_ops_enabled &&
           a.mixed_formats == b.mixed_formats && a.activation_mode == b.activation_mode &&
           a.quantize_first_last == b.quantize_first_last && a.per_node_overrides == b.per_node_overrides &&
           a.quantize_ops == b.quantize_ops && a.calibration.kind == b.calibration.kind &&
           a.calibration.percentile == b.calibration.percentile && a.calibration.kl_bins == b.calibration.kl_bins &&
           a.calibration.sweep_candidates == b.calibration.sweep_candidates;
  }
};

// ---------------------------------------------------------------------------
// Recipe file (JSON), see docs/recipe_format.md.

inline nlohmann::json recipe_to_json(const QuantRecipe& r) {
  nlohmann::json j;
  j["weight_format"] = dtype_name(r.weight_format);
  j["activation_format"] = dtype_name(r.activation_format);
  j["scheme"] = scheme_name(r.scheme);
  j["extended_ops_enabled"] = r.extended_ops_enabled;
  j["mixed_formats"] = r.mixed_formats ? nlohmann::json{{"activation", dtype_name(r.mixed_formats->activation)},
                                                        {"weight", dtype_name(r.mixed_formats->weight)}}
                                       : nlohmann::json(nullptr);
  j["activation_mode"] = activation_mode_name(r.activation_mode);
  j["quantize_first_last"] = r.quantize_first_last;
  nlohmann::json ov = nlohmann::json::object();
  for (const auto& [id, o] : r.per_node_overrides) {
    nlohmann::json e = {{"fallback_fp32", o.fallback_fp32}};
    if (o.activation) e["activation"] = dtype_name(*o.activation);
    if (o.weight) e["weight"] = dtype_name(*o.weight);
    ov[id] = e;
  }
  j["per_node_overrides"] = ov;
  if (r.quantize_ops) {
    nlohmann::json ops = nlohmann::json::array();
    for (OpKind k : *r.quantize_ops) ops.push_back(op_name(k));
    j["quantize_ops"] = ops;
  }
  nlohmann::json cal = {{"method", observer_name(r.calibration.kind)}};
  if (r.calibration.kind == ObserverKind::kPercentile) cal["percentile"] = r.calibration.percentile;
  if (r.calibration.kind == ObserverKind::kKl) cal["bins"] = r.calibration.kl_bins;
  if (r.calibration.kind == ObserverKind::kMseSweep) cal["candidates"] = r.calibration.sweep_candidates;
  j["calibration"] = cal;
  return j;
}

inline QuantRecipe recipe_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"weight_format",   "activation_format",   "scheme",
                                              "extended_ops_enabled", "mixed_formats", "activation_mode",
                                              "quantize_first_last",  "per_node_overrides", "quantize_ops",
                                              "calibration"};
  if (!j.is_object()) throw Error("recipe: top level must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw Error("recipe: unknown field " + k);
  }
  QuantRecipe r;
  try {
    if (j.contains("weight_format")) r.weight_format = parse_dtype(j["weight_format"].get<std::string>());
    if (j.contains("activation_format")) r.activation_format = parse_dtype(j["activation_format"].get<std::string>());
    if (j.contains("scheme")) r.scheme = parse_scheme(j["scheme"].get<std::string>());
    r.extended_ops_enabled = j.value("extended_ops_enabled", r.extended_ops_enabled);
    if (j.contains("mixed_formats") && !j["mixed_formats"].is_null()) {
      const auto& mf = j["mixed_formats"];
      MixedFormats m;
      m.activation = parse_dtype(mf.at("activation").get<std::string>());
      m.weight = parse_dtype(mf.at("weight").get<std::string>());
      r.mixed_formats = m;
    }
    if (j.contains("activation_mode")) r.activation_mode = parse_activation_mode(j["activation_mode"].get<std::string>());
    r.quantize_first_last = j.value("quantize_first_last", r.quantize_first_last);
    if (j.contains("per_node_overrides")) {
      for (const auto& [id, e] : j["per_node_overrides"].items()) {
        NodeOverride o;
        o.fallback_fp32 = e.value("fallback_fp32", false);
        if (e.contains("activation")) o.activation = parse_dtype(e["activation"].get<std::string>());
        if (e.contains("weight")) o.weight = parse_dtype(e["weight"].get<std::string>());
        r.per_node_overrides[id] = o;
      }
    }
    if (j.contains("quantize_ops")) {
      std::vector<OpKind> ops;
      for (const auto& s : j["quantize_ops"]) ops.push_back(parse_op_kind(s.get<std::string>()));
      r.quantize_ops = ops;
    }
    if (j.contains("calibration")) {
      const auto& c = j["calibration"];
      r.calibration.kind = parse_observer_kind(c.value("method", std::string("absmax")));
      r.calibration.percentile = c.value("percentile", r.calibration.percentile);
      r.calibration.kl_bins = c.value("bins", r.calibration.kl_bins);
      r.calibration.sweep_candidates = c.value("candidates", r.calibration.sweep_candidates);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("recipe: ") + e.what());
  }
  r.validate();
  return r;
}

inline QuantRecipe load_recipe(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open recipe " + path);
  try {
    return recipe_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("recipe " + path + ": " + e.what());
  }
}

inline void save_recipe(const std::string& path, const QuantRecipe& r) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path + " for writing");
  os << recipe_to_json(r).dump(2) << "\n";
}

// ---------------------------------------------------------------------------

// First conv2d and last linear in topological order; empty for NLP models.
inline std::set<std::string> identify_first_last(const ModelBundle& m) {
  std::set<std::string> out;
  if (m.domain != Domain::kCv) return out;
  const auto order = m.graph.topological_order();
  for (std::size_t i : order) {
    if (m.graph.nodes[i].kind == OpKind::kConv2d) {
      out.insert(m.graph.nodes[i].id);
      break;
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (m.graph.nodes[*it].kind == OpKind::kLinear) {
      out.insert(m.graph.nodes[*it].id);
      break;
    }
  }
  return out;
}

// Edge input positions that receive activation fake quantization.
inline std::vector<std::size_t> quantized_input_slots(const Node& n) {
  switch (n.kind) {
    case OpKind::kEmbedding: return {};
    case OpKind::kAdd:
    case OpKind::kMul:
    case OpKind::kBatchMatMul: return {0, 1};
    case OpKind::kMatMul: return n.has_param("weight") ? std::vector<std::size_t>{0} : std::vector<std::size_t>{0, 1};
    default: return {0};
  }
}

// Per-channel axis of a node's weight, if the kind has a quantizable one.
inline std::optional<std::size_t> weight_axis(const Node& n) {
  switch (n.kind) {
    case OpKind::kConv2d:
    case OpKind::kLinear: return 0;
    case OpKind::kMatMul: return n.has_param("weight") ? std::optional<std::size_t>(1) : std::nullopt;
    case OpKind::kEmbedding: return 1;
    default: return std::nullopt;
  }
}

struct NodePlan {
  DType activation;
  DType weight;
};

// Which nodes a recipe quantizes, and with which formats.
inline std::map<std::string, NodePlan> plan_nodes(const ModelBundle& m, const QuantRecipe& r) {
  r.validate();
  for (const auto& [id, o] : r.per_node_overrides) {
    if (!m.graph.has_node(id)) throw Error("recipe override names unknown node " + id);
  }
  const auto ops = r.op_set();
  const auto exempt = r.quantize_first_last ? std::set<std::string>{} : identify_first_last(m);
  std::map<std::string, NodePlan> plan;
  for (const auto& n : m.graph.nodes) {
    if (!ops.count(n.kind) || exempt.count(n.id)) continue;
    NodePlan p{r.activation_format, r.weight_format};
    if (r.mixed_formats) p = {r.mixed_formats->activation, r.mixed_formats->weight};
    if (auto it = r.per_node_overrides.find(n.id); it != r.per_node_overrides.end()) {
      if (it->second.fallback_fp32) continue;
      if (it->second.activation) p.activation = *it->second.activation;
      if (it->second.weight) p.weight = *it->second.weight;
    }
    plan.emplace(n.id, p);
  }
  return plan;
}

// Calibrated ranges per edge. `max_t` is the configured method's result,
// `absmax` the plain running maximum (used for E5M2 consumers).
struct EdgeRange {
  double max_t = 0.0;
  double absmax = 0.0;
  ObserverKind method = ObserverKind::kAbsMax;
};

using CalibrationMap = std::map<std::string, EdgeRange>;

// Runs the FP32 model over the calibration batches with an observer on every
// edge feeding a to-be-quantized node.
inline CalibrationMap calibrate(const ModelBundle& m, const QuantRecipe& r, const Batches& batches) {
  if (r.activation_mode != ActivationMode::kStatic) throw Error("calibrate: recipe uses dynamic activations");
  if (batches.empty()) throw Error("calibrate: empty calibration set");
  const auto plan = plan_nodes(m, r);
  // edge -> format of a consumer that wants a clipping search, if any
  std::map<std::string, std::optional<DType>> search_format;
  for (const auto& n : m.graph.nodes) {
    auto it = plan.find(n.id);
    if (it == plan.end()) continue;
    for (std::size_t slot : quantized_input_slots(n)) {
      auto& f = search_format[n.inputs[slot]];
      if (it->second.activation != DType::kE5M2 && !f) f = it->second.activation;
    }
  }
  std::map<std::string, Observer> observers;
  for (const auto& [edge, fmt] : search_format) {
    ObserverConfig cfg = fmt ? r.calibration : ObserverConfig::absmax();
    if (fmt) cfg.dtype = *fmt;
    observers.emplace(edge, Observer(cfg));
  }
  ExecHooks hooks;
  std::set<std::string> seen;
  hooks.observe_inputs = [&](const Node& n, const std::vector<const Tensor*>& in) {
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      auto it = observers.find(n.inputs[i]);
      if (it != observers.end() && seen.insert(n.inputs[i]).second) it->second.observe(*in[i]);
    }
  };
  for (const auto& b : batches) {
    seen.clear();
    forward(m, b, hooks);
  }
  CalibrationMap out;
  for (const auto& [edge, obs] : observers) out[edge] = {obs.finalize(), obs.absmax(), obs.config().kind};
  return out;
}

struct ActivationQuant {
  DType dtype = DType::kE4M3;
  std::optional<double> max_t;  // static only
};

struct NodeQuant {
  NodePlan formats;
  std::optional<QuantParams> weight;
  std::map<std::size_t, ActivationQuant> inputs;  // slot -> activation quant
};

struct QuantizedModel {
  ModelBundle original;
  ModelBundle quantized;  // weights replaced by their fake-quantized values
  QuantRecipe recipe;
  std::map<std::string, NodeQuant> nodes;

  bool is_quantized(const std::string& id) const { return nodes.count(id) != 0; }
};

inline QuantizedModel apply_recipe(const ModelBundle& m, const QuantRecipe& r,
                                   const std::optional<CalibrationMap>& calib = std::nullopt) {
  const auto plan = plan_nodes(m, r);
  const bool is_static = r.activation_mode == ActivationMode::kStatic;
  QuantizedModel qm{m, m, r, {}};
  for (const auto& n : m.graph.nodes) {
    auto pit = plan.find(n.id);
    if (pit == plan.end()) continue;
    NodeQuant nq;
    nq.formats = pit->second;
    if (auto axis = weight_axis(n)) {
      const Tensor& w = m.param(n, "weight");
      const auto gran = QuantGranularity::per_channel(*axis);
      QuantizedTensor q = quantize_tensor(w, nq.formats.weight, gran);
      nq.weight = q.params;
      qm.quantized.mutable_param(n, "weight") = dequantize_tensor(q);
    }
    for (std::size_t slot : quantized_input_slots(n)) {
      ActivationQuant aq{nq.formats.activation, std::nullopt};
      if (is_static) {
        const std::string& edge = n.inputs[slot];
        if (!calib || !calib->count(edge)) throw Error("apply_recipe: missing static max_T for edge " + edge);
        const EdgeRange& er = calib->at(edge);
        aq.max_t = aq.dtype == DType::kE5M2 ? er.absmax : er.max_t;
      }
      nq.inputs.emplace(slot, aq);
    }
    qm.nodes.emplace(n.id, std::move(nq));
  }
  return qm;
}

// Fake-quant hooks for a QuantizedModel's activation points.
inline ExecHooks quant_hooks(const QuantizedModel& qm) {
  ExecHooks h;
  h.transform_input = [&qm](const Node& n, std::size_t slot, const Tensor& t) -> std::optional<Tensor> {
    auto it = qm.nodes.find(n.id);
    if (it == qm.nodes.end()) return std::nullopt;
    auto st = it->second.inputs.find(slot);
    if (st == it->second.inputs.end()) return std::nullopt;
    const ActivationQuant& aq = st->second;
    const double max_t = aq.max_t ? *aq.max_t : abs_max(t);
    // A zero range means scale 1, i.e. the format's own max.
    return fake_quantize(t, aq.dtype, QuantGranularity::per_tensor(), max_t == 0.0 ? dtype_max(aq.dtype) : max_t);
  };
  return h;
}

inline TensorMap run_quantized_all(const QuantizedModel& qm, const TensorMap& inputs) {
  return forward(qm.quantized, inputs, quant_hooks(qm));
}

inline TensorMap run_quantized(const QuantizedModel& qm, const TensorMap& inputs) {
  return forward_outputs(qm.quantized, inputs, quant_hooks(qm));
}

// Calibrate (static only) then apply.
inline QuantizedModel quantize_model(const ModelBundle& m, const QuantRecipe& r, const Batches& calib_batches) {
  if (r.activation_mode == ActivationMode::kDynamic) return apply_recipe(m, r);
  return apply_recipe(m, r, calibrate(m, r, calib_batches));
}

// BatchNorm statistics of the quantized model as it actually executes.
inline BnStatsMap bn_collect(const QuantizedModel& qm, const Batches& batches, TransformMode mode, std::uint64_t seed) {
  return bn_collect(qm.quantized, batches, mode, seed, quant_hooks(qm));
}

// Collects BatchNorm statistics through the quantized model and writes them
// into it. Activation ranges are kept.
inline void recalibrate_bn(QuantizedModel& qm, const Batches& batches, TransformMode mode, std::uint64_t seed) {
  const BnStatsMap stats = bn_collect(qm, batches, mode, seed);
  bn_apply(qm.quantized, stats);
}

// Nodes whose kind is `kind` and that carry activation quant on some input.
inline std::size_t coverage_count(const QuantizedModel& qm, OpKind kind) {
  std::size_t c = 0;
  for (const auto& [id, nq] : qm.nodes) {
    if (qm.original.graph.node(id).kind == kind) ++c;
  }
  return c;
}

// Calibration report rows: tensor_name, method, max_T, clip_ratio.
inline CsvTable calibration_report(const CalibrationMap& calib) {
  CsvTable t({"tensor_name", "method", "max_T", "clip_ratio"});
  for (const auto& [edge, er] : calib) {
    t.add_row({edge, std::string(observer_name(er.method)), csv_real(er.max_t),
               csv_real(er.absmax > 0.0 ? er.max_t / er.absmax : 1.0)});
  }
  return t;
}

}  // namespace fp8q

#endif  // FP8Q_WORKFLOW_HPP_
