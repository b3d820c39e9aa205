// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal dataflow graph and forward executor.
//
// Edges are named tensors. Each node reads its input edges, looks up its
// parameters by role ("weight", "bias", ...) in the owning ModelBundle and
// writes exactly one output edge. The executor exposes hooks so callers can
// rewrite node inputs (fake quantization) or observe them (calibration)
// without the graph knowing about either.

#ifndef FP8Q_GRAPH_HPP_
#define FP8Q_GRAPH_HPP_

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fp8q/ops.hpp"
#include "fp8q/tensor.hpp"

namespace fp8q {

enum class OpKind {
  kConv2d,
  kLinear,
  kMatMul,
  kBatchMatMul,
  kEmbedding,
  kLayerNorm,
  kBatchNorm,
  kAdd,
  kMul,
  kRelu,
  kGelu,
  kSoftmax,
  kFlatten,
};

inline constexpr OpKind kAllOpKinds[] = {
    OpKind::kConv2d,    OpKind::kLinear,    OpKind::kMatMul, OpKind::kBatchMatMul, OpKind::kEmbedding,
    OpKind::kLayerNorm, OpKind::kBatchNorm, OpKind::kAdd,    OpKind::kMul,         OpKind::kRelu,
    OpKind::kGelu,      OpKind::kSoftmax,   OpKind::kFlatten,
};

inline std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kLinear: return "linear";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kBatchMatMul: return "batch_matmul";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kLayerNorm: return "layernorm";
    case OpKind::kBatchNorm: return "batchnorm";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kRelu: return "relu";
    case OpKind::kGelu: return "gelu";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kFlatten: return "flatten";
  }
  return "?";
}

inline OpKind parse_op_kind(std::string_view name) {
  for (OpKind k : kAllOpKinds) {
    if (op_name(k) == name) return k;
  }
  throw Error("unknown operator kind: " + std::string(name));
}

struct NodeAttrs {
  std::size_t stride = 1;
  std::size_t padding = 0;
  double eps = 1e-5;
  bool transpose_b = false;

  friend bool operator==(const NodeAttrs&, const NodeAttrs&) = default;
};

struct Node {
  std::string id;
  OpKind kind = OpKind::kRelu;
  std::vector<std::string> inputs;
  std::string output;
  std::map<std::string, std::string> params;  // role -> parameter tensor name
  NodeAttrs attrs;

  bool has_param(const std::string& role) const { return params.count(role) != 0; }
};

// Number of activation (edge) inputs each kind consumes. matmul takes one
// edge when its right operand is a "weight" parameter, two otherwise.
inline std::size_t expected_inputs(const Node& n) {
  switch (n.kind) {
    case OpKind::kBatchMatMul:
    case OpKind::kAdd:
    case OpKind::kMul: return 2;
    case OpKind::kMatMul: return n.has_param("weight") ? 1 : 2;
    default: return 1;
  }
}

class Graph {
 public:
  std::vector<Node> nodes;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  const Node& node(const std::string& id) const {
    for (const auto& n : nodes) {
      if (n.id == id) return n;
    }
    throw Error("no node with id " + id);
  }
  bool has_node(const std::string& id) const {
    return std::any_of(nodes.begin(), nodes.end(), [&](const Node& n) { return n.id == id; });
  }

  // Kahn's algorithm, stable with respect to declaration order.
  std::vector<std::size_t> topological_order() const {
    std::map<std::string, std::size_t> producer;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!producer.emplace(nodes[i].output, i).second) {
        throw Error("edge " + nodes[i].output + " produced by more than one node");
      }
    }
    std::set<std::string> graph_inputs(inputs.begin(), inputs.end());
    std::vector<std::size_t> indegree(nodes.size(), 0);
    std::vector<std::vector<std::size_t>> consumers(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      for (const auto& e : nodes[i].inputs) {
        if (graph_inputs.count(e)) continue;
        auto it = producer.find(e);
        if (it == producer.end()) throw Error("node " + nodes[i].id + ": unresolved input edge " + e);
        ++indegree[i];
        consumers[it->second].push_back(i);
      }
    }
    std::vector<std::size_t> order;
    std::set<std::size_t> ready;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (indegree[i] == 0) ready.insert(i);
    }
    while (!ready.empty()) {
      const std::size_t i = *ready.begin();
      ready.erase(ready.begin());
      order.push_back(i);
      for (std::size_t c : consumers[i]) {
        if (--indegree[c] == 0) ready.insert(c);
      }
    }
    if (order.size() != nodes.size()) throw Error("graph contains a cycle");
    return order;
  }

  void validate() const {
    std::set<std::string> ids;
    for (const auto& n : nodes) {
      if (!ids.insert(n.id).second) throw Error("duplicate node id " + n.id);
      if (n.inputs.size() != expected_inputs(n)) {
        throw Error("node " + n.id + " (" + std::string(op_name(n.kind)) + ") expects " +
                    std::to_string(expected_inputs(n)) + " inputs, has " + std::to_string(n.inputs.size()));
      }
      if ((n.kind == OpKind::kLayerNorm || n.kind == OpKind::kBatchNorm) && !(n.attrs.eps > 0.0)) {
        throw Error("node " + n.id + ": eps must be positive");
      }
    }
    topological_order();
    std::set<std::string> produced(inputs.begin(), inputs.end());
    for (const auto& n : nodes) produced.insert(n.output);
    for (const auto& o : outputs) {
      if (!produced.count(o)) throw Error("graph output " + o + " is never produced");
    }
  }
};

enum class Domain { kCv, kNlp };

inline std::string_view domain_name(Domain d) { return d == Domain::kCv ? "cv" : "nlp"; }

inline Domain parse_domain(std::string_view s) {
  if (s == "cv") return Domain::kCv;
  if (s == "nlp") return Domain::kNlp;
  throw Error("unknown domain: " + std::string(s));
}

struct ModelBundle {
  std::string name;
  Graph graph;
  std::map<std::string, Tensor> params;
  Domain domain = Domain::kCv;
  std::map<std::string, std::string> metadata;

  const Tensor& param(const Node& n, const std::string& role) const {
    auto it = n.params.find(role);
    if (it == n.params.end()) throw Error("node " + n.id + " has no parameter role " + role);
    auto pt = params.find(it->second);
    if (pt == params.end()) throw Error("node " + n.id + ": missing parameter tensor " + it->second);
    return pt->second;
  }
  const Tensor* optional_param(const Node& n, const std::string& role) const {
    auto it = n.params.find(role);
    if (it == n.params.end()) return nullptr;
    return &param(n, role);
  }
  Tensor& mutable_param(const Node& n, const std::string& role) {
    return const_cast<Tensor&>(static_cast<const ModelBundle&>(*this).param(n, role));
  }

  void validate() const {
    graph.validate();
    std::map<std::string, int> refs;
    for (const auto& n : graph.nodes) {
      for (const auto& [role, name] : n.params) {
        if (!params.count(name)) throw Error("node " + n.id + " references missing parameter " + name);
        ++refs[name];
      }
    }
    for (const auto& [name, t] : params) {
      const int r = refs[name];
      if (r != 1) {
        throw Error("parameter " + name + " referenced by " + std::to_string(r) + " nodes (expected exactly 1)");
      }
    }
  }
};

using TensorMap = std::map<std::string, Tensor>;

// Optional executor callbacks. transform_input may return a replacement for
// a node's i-th edge input; observe_inputs sees the inputs actually consumed.
struct ExecHooks {
  std::function<std::optional<Tensor>(const Node&, std::size_t, const Tensor&)> transform_input;
  std::function<void(const Node&, const std::vector<const Tensor*>&)> observe_inputs;
};

namespace detail {

inline Tensor run_node(const ModelBundle& m, const Node& n, const std::vector<const Tensor*>& in) {
  const auto& a = n.attrs;
  switch (n.kind) {
    case OpKind::kConv2d:
      return ops::conv2d(*in[0], m.param(n, "weight"), m.optional_param(n, "bias"), a.stride, a.padding);
    case OpKind::kLinear: return ops::linear(*in[0], m.param(n, "weight"), m.optional_param(n, "bias"));
    case OpKind::kMatMul:
      return n.has_param("weight") ? ops::matmul(*in[0], m.param(n, "weight")) : ops::matmul(*in[0], *in[1]);
    case OpKind::kBatchMatMul: return ops::batch_matmul(*in[0], *in[1], a.transpose_b);
    case OpKind::kEmbedding: return ops::embedding(*in[0], m.param(n, "weight"));
    case OpKind::kLayerNorm:
      return ops::layernorm(*in[0], m.optional_param(n, "weight"), m.optional_param(n, "bias"), a.eps);
    case OpKind::kBatchNorm:
      return ops::batchnorm(*in[0], m.param(n, "running_mean"), m.param(n, "running_var"),
                            m.optional_param(n, "weight"), m.optional_param(n, "bias"), a.eps);
    case OpKind::kAdd: return ops::add(*in[0], *in[1]);
    case OpKind::kMul: return ops::mul(*in[0], *in[1]);
    case OpKind::kRelu: return ops::relu(*in[0]);
    case OpKind::kGelu: return ops::gelu(*in[0]);
    case OpKind::kSoftmax: return ops::softmax(*in[0]);
    case OpKind::kFlatten: return ops::flatten(*in[0]);
  }
  throw Error("unhandled operator");
}

}  // namespace detail

// Runs every node in topological order and returns all edge values
// (graph inputs included). Shape errors are rethrown with the node id.
inline TensorMap forward(const ModelBundle& model, const TensorMap& inputs, const ExecHooks& hooks = {}) {
  TensorMap edges;
  for (const auto& name : model.graph.inputs) {
    auto it = inputs.find(name);
    if (it == inputs.end()) throw Error("graph input " + name + " is not bound");
    edges.emplace(name, it->second);
  }
  for (std::size_t idx : model.graph.topological_order()) {
    const Node& n = model.graph.nodes[idx];
    std::vector<std::optional<Tensor>> replaced(n.inputs.size());
    std::vector<const Tensor*> in(n.inputs.size());
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      const Tensor& src = edges.at(n.inputs[i]);
      if (hooks.transform_input) replaced[i] = hooks.transform_input(n, i, src);
      in[i] = replaced[i] ? &*replaced[i] : &src;
    }
    if (hooks.observe_inputs) hooks.observe_inputs(n, in);
    try {
      edges.insert_or_assign(n.output, detail::run_node(model, n, in));
    } catch (const Error& e) {
      throw Error("node " + n.id + ": " + e.what());
    }
  }
  return edges;
}

// Convenience: graph outputs only.
inline TensorMap forward_outputs(const ModelBundle& model, const TensorMap& inputs, const ExecHooks& hooks = {}) {
  TensorMap all = forward(model, inputs, hooks);
  TensorMap out;
  for (const auto& name : model.graph.outputs) out.emplace(name, std::move(all.at(name)));
  return out;
}

}  // namespace fp8q

#endif  // FP8Q_GRAPH_HPP_
