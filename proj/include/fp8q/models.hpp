// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded reference models and their synthetic datasets. The models are not
// trained; their heads are built from class (or token) prototypes so the
// FP32 model has a clear decision margin that quantization can erode.

#ifndef FP8Q_MODELS_HPP_
#define FP8Q_MODELS_HPP_

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fp8q/calibration.hpp"
#include "fp8q/data.hpp"
#include "fp8q/graph.hpp"
#include "fp8q/random.hpp"

namespace fp8q {

namespace detail {

inline Tensor random_normal(Shape shape, Rng& rng, double sd, double mean = 0.0) {
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = static_cast<float>(rng.normal(mean, sd));
  return t;
}

inline Tensor random_uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline Node make_node(std::string id, OpKind kind, std::vector<std::string> inputs, std::string output,
                      std::map<std::string, std::string> params = {}, NodeAttrs attrs = {}) {
  Node n;
  n.id = std::move(id);
  n.kind = kind;
  n.inputs = std::move(inputs);
  n.output = std::move(output);
  n.params = std::move(params);
  n.attrs = attrs;
  return n;
}

// Rows of `features` centered across rows and scaled to unit norm times `gain`.
inline Tensor prototype_head(const Tensor& features, double gain) {
  const std::size_t rows = features.dim(0), d = features.dim(1);
  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += features[r * d + j];
  }
  for (double& m : mean) m /= static_cast<double>(rows);
  Tensor w({rows, d});
  for (std::size_t r = 0; r < rows; ++r) {
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) norm += (features[r * d + j] - mean[j]) * (features[r * d + j] - mean[j]);
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < d; ++j) {
      w[r * d + j] = static_cast<float>(norm > 0.0 ? gain * (features[r * d + j] - mean[j]) / norm : 0.0);
    }
  }
  return w;
}

// Nearest-centroid readout: logit_c = 2 f_c.a - |f_c|^2, whose argmax is the
// centroid closest to a.
inline std::pair<Tensor, Tensor> centroid_head(const Tensor& centroids) {
  const std::size_t rows = centroids.dim(0), d = centroids.dim(1);
  Tensor w({rows, d});
  Tensor b({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      w[r * d + j] = 2.0f * centroids[r * d + j];
      sq += static_cast<double>(centroids[r * d + j]) * centroids[r * d + j];
    }
    b[r] = static_cast<float>(-sq);
  }
  return {w, b};
}

inline std::uint64_t metadata_seed(const ModelBundle& m) {
  auto it = m.metadata.find("seed");
  if (it == m.metadata.end()) throw Error("model " + m.name + " has no seed metadata");
  return std::stoull(it->second);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// tiny_cnn: [B,3,8,8] -> conv1(3->8,3x3,p1) -> bn1 -> relu -> conv2(8->16,
// 3x3,s2,p1) -> bn2 -> relu -> flatten(256) -> fc(256->10)

inline constexpr std::size_t kCnnChannels = 3;
inline constexpr std::size_t kCnnSize = 8;
inline constexpr std::size_t kCnnClasses = 10;
inline constexpr double kCnnNoise = 0.5;

struct TinyCnnOptions {
  // Gain injected into bn1's channel 0 (and divided back out of conv2's
  // matching input weights). FP32 output is unchanged; the relu1 activation
  // gets one channel far wider than the rest.
  double channel_gain = 1.0;
};

inline Tensor cnn_prototypes(std::uint64_t model_seed) {
  Rng rng = Rng(model_seed).fork(0x70726f746fULL);
  return detail::random_normal({kCnnClasses, kCnnChannels, kCnnSize, kCnnSize}, rng, 1.0);
}

// `samples` images of prototype + noise; class labels are uniform.
inline Batches cnn_batches(std::uint64_t model_seed, std::size_t samples, std::size_t batch, std::uint64_t seed) {
  if (samples == 0 || batch == 0) throw Error("cnn_batches: samples and batch size must be positive");
  const Tensor protos = cnn_prototypes(model_seed);
  const std::size_t per = kCnnChannels * kCnnSize * kCnnSize;
  Rng rng(seed);
  Batches out;
  for (std::size_t start = 0; start < samples; start += batch) {
    const std::size_t n = std::min(batch, samples - start);
    Tensor x({n, kCnnChannels, kCnnSize, kCnnSize});
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t cls = static_cast<std::size_t>(rng.below(kCnnClasses));
      for (std::size_t i = 0; i < per; ++i) {
        x[b * per + i] = static_cast<float>(protos[cls * per + i] + kCnnNoise * rng.normal());
      }
    }
    out.push_back({{"image", std::move(x)}});
  }
  return out;
}

inline ModelBundle build_tiny_cnn(std::uint64_t seed, const TinyCnnOptions& opt = {}) {
  if (!(opt.channel_gain > 0.0)) throw Error("build_tiny_cnn: channel_gain must be positive");
  Rng rng = Rng(seed).fork(0x636e6eULL);
  ModelBundle m;
  m.name = "tiny_cnn";
  m.domain = Domain::kCv;
  m.metadata = {{"builder", "tiny_cnn"}, {"seed", std::to_string(seed)}};
  if (opt.channel_gain != 1.0) m.metadata["channel_gain"] = std::to_string(opt.channel_gain);

  const auto he = [](std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
  m.params["conv1.weight"] = detail::random_normal({8, 3, 3, 3}, rng, he(27));
  m.params["conv1.bias"] = detail::random_normal({8}, rng, 0.05);
  m.params["bn1.running_mean"] = Tensor::full({8}, 0.0f);
  m.params["bn1.running_var"] = Tensor::full({8}, 1.0f);
  m.params["bn1.weight"] = detail::random_uniform({8}, rng, 0.8, 1.2);
  m.params["bn1.bias"] = detail::random_normal({8}, rng, 0.1);
  m.params["conv2.weight"] = detail::random_normal({16, 8, 3, 3}, rng, he(72));
  m.params["conv2.bias"] = detail::random_normal({16}, rng, 0.05);
  m.params["bn2.running_mean"] = Tensor::full({16}, 0.0f);
  m.params["bn2.running_var"] = Tensor::full({16}, 1.0f);
  m.params["bn2.weight"] = detail::random_uniform({16}, rng, 0.8, 1.2);
  m.params["bn2.bias"] = detail::random_normal({16}, rng, 0.1);
  m.params["fc.weight"] = Tensor({kCnnClasses, 256});
  m.params["fc.bias"] = Tensor::full({kCnnClasses}, 0.0f);

  NodeAttrs c1;
  c1.padding = 1;
  NodeAttrs c2;
  c2.padding = 1;
  c2.stride = 2;
  auto& g = m.graph;
  g.inputs = {"image"};
  g.outputs = {"logits"};
  g.nodes = {
      detail::make_node("conv1", OpKind::kConv2d, {"image"}, "conv1.out",
                        {{"weight", "conv1.weight"}, {"bias", "conv1.bias"}}, c1),
      detail::make_node("bn1", OpKind::kBatchNorm, {"conv1.out"}, "bn1.out",
                        {{"running_mean", "bn1.running_mean"},
                         {"running_var", "bn1.running_var"},
                         {"weight", "bn1.weight"},
                         {"bias", "bn1.bias"}}),
      detail::make_node("relu1", OpKind::kRelu, {"bn1.out"}, "relu1.out"),
      detail::make_node("conv2", OpKind::kConv2d, {"relu1.out"}, "conv2.out",
                        {{"weight", "conv2.weight"}, {"bias", "conv2.bias"}}, c2),
      detail::make_node("bn2", OpKind::kBatchNorm, {"conv2.out"}, "bn2.out",
                        {{"running_mean", "bn2.running_mean"},
                         {"running_var", "bn2.running_var"},
                         {"weight", "bn2.weight"},
                         {"bias", "bn2.bias"}}),
      detail::make_node("relu2", OpKind::kRelu, {"bn2.out"}, "relu2.out"),
      detail::make_node("flatten", OpKind::kFlatten, {"relu2.out"}, "features"),
      detail::make_node("fc", OpKind::kLinear, {"features"}, "logits", {{"weight", "fc.weight"}, {"bias", "fc.bias"}}),
  };

  // Running statistics from an FP32 pass over a build-time sample.
  bn_apply(m, bn_collect(m, cnn_batches(seed, 512, 128, Rng(seed).fork(0x626eULL).next()), TransformMode::kInfer, 0));

  // Head: nearest-prototype readout over the prototype feature vectors.
  const Tensor protos = cnn_prototypes(seed);
  const Tensor feats = forward(m, {{"image", protos}}).at("features");
  m.params["fc.weight"] = detail::prototype_head(feats, 4.0);

  if (opt.channel_gain != 1.0) {
    const auto gain = static_cast<float>(opt.channel_gain);
    m.params.at("bn1.weight")[0] *= gain;
    m.params.at("bn1.bias")[0] *= gain;
    Tensor& w2 = m.params.at("conv2.weight");
    for (std::size_t o = 0; o < 16; ++o) {
      for (std::size_t k = 0; k < 9; ++k) w2[(o * 8 + 0) * 9 + k] /= gain;
    }
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// tiny transformer block (single head):
//   h = embedding(tokens) + features
//   q,k,v = h Wq, h Wk, h Wv
//   a = softmax(q k^T) v
//   logits = linear(layernorm(h + linear(a)))
// Embedding column 0 carries an injected outlier gain.

inline constexpr std::size_t kTfVocab = 64;
inline constexpr std::size_t kTfDim = 32;
inline constexpr std::size_t kTfSeq = 8;
inline constexpr double kTfOutlierGain = 8.0;
inline constexpr double kTfFeatureScale = 0.3;

struct TinyTransformerOptions {
  double outlier_gain = kTfOutlierGain;
};

// Each sample is one sequence of kTfSeq tokens.
inline Batches transformer_batches(std::size_t samples, std::size_t batch, std::uint64_t seed,
                                   double feature_scale = 1.0) {
  if (samples == 0 || batch == 0) throw Error("transformer_batches: samples and batch size must be positive");
  Rng rng(seed);
  Batches out;
  for (std::size_t start = 0; start < samples; start += batch) {
    const std::size_t n = std::min(batch, samples - start);
    Tensor tokens({n, kTfSeq});
    Tensor feats({n, kTfSeq, kTfDim});
    for (float& t : tokens.values()) t = static_cast<float>(rng.below(kTfVocab));
    for (float& f : feats.values()) f = static_cast<float>(feature_scale * kTfFeatureScale * rng.normal());
    out.push_back({{"tokens", std::move(tokens)}, {"features", std::move(feats)}});
  }
  return out;
}

inline ModelBundle build_tiny_transformer_block(std::uint64_t seed, const TinyTransformerOptions& opt = {}) {
  Rng rng = Rng(seed).fork(0x74666d72ULL);
  const std::size_t d = kTfDim, v = kTfVocab;
  ModelBundle m;
  m.name = "tiny_transformer";
  m.domain = Domain::kNlp;
  m.metadata = {{"builder", "tiny_transformer"}, {"seed", std::to_string(seed)}};

  Tensor emb = detail::random_normal({v, d}, rng, 1.0);
  for (std::size_t r = 0; r < v; ++r) emb[r * d] *= static_cast<float>(opt.outlier_gain);
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor wq = detail::random_normal({d, d}, rng, proj);
  for (float& x : wq.values()) x *= static_cast<float>(proj);
  m.params["emb.weight"] = emb;
  m.params["wq.weight"] = wq;
  m.params["wk.weight"] = detail::random_normal({d, d}, rng, proj);
  m.params["wv.weight"] = detail::random_normal({d, d}, rng, proj);
  m.params["wo.weight"] = detail::random_normal({d, d}, rng, 0.3 * proj);
  m.params["wo.bias"] = detail::random_normal({d}, rng, 0.02);
  m.params["ln.weight"] = detail::random_uniform({d}, rng, 0.9, 1.1);
  m.params["ln.bias"] = detail::random_normal({d}, rng, 0.02);

  // Head rows: layer-normalized embedding rows, so the block reads back the
  // current token's identity.
  const Tensor normed = ops::layernorm(emb, &m.params.at("ln.weight"), &m.params.at("ln.bias"), 1e-5);
  m.params["head.weight"] = detail::prototype_head(normed, 8.0);
  m.params["head.bias"] = Tensor::full({v}, 0.0f);

  NodeAttrs tb;
  tb.transpose_b = true;
  auto& g = m.graph;
  g.inputs = {"tokens", "features"};
  g.outputs = {"logits"};
  g.nodes = {
      detail::make_node("embed", OpKind::kEmbedding, {"tokens"}, "emb.out", {{"weight", "emb.weight"}}),
      detail::make_node("add_in", OpKind::kAdd, {"emb.out", "features"}, "h"),
      detail::make_node("q_proj", OpKind::kMatMul, {"h"}, "q", {{"weight", "wq.weight"}}),
      detail::make_node("k_proj", OpKind::kMatMul, {"h"}, "k", {{"weight", "wk.weight"}}),
      detail::make_node("v_proj", OpKind::kMatMul, {"h"}, "v", {{"weight", "wv.weight"}}),
      detail::make_node("scores", OpKind::kBatchMatMul, {"q", "k"}, "s", {}, tb),
      detail::make_node("attn_softmax", OpKind::kSoftmax, {"s"}, "p"),
      detail::make_node("context", OpKind::kBatchMatMul, {"p", "v"}, "a"),
      detail::make_node("out_proj", OpKind::kLinear, {"a"}, "o", {{"weight", "wo.weight"}, {"bias", "wo.bias"}}),
      detail::make_node("residual", OpKind::kAdd, {"h", "o"}, "r"),
      detail::make_node("ln", OpKind::kLayerNorm, {"r"}, "n", {{"weight", "ln.weight"}, {"bias", "ln.bias"}}),
      detail::make_node("head", OpKind::kLinear, {"n"}, "logits", {{"weight", "head.weight"}, {"bias", "head.bias"}}),
  };
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// hostile MLP: x[B,16] -> fc1(16->32) -> relu -> fc2(32->32) -> relu ->
// fc3(32->10). fc1's last unit is dead (always 0) and fc2 carries a huge
// weight on it in every row, so per-channel weight scaling flushes fc2's
// useful weights to zero while FP32 output is unaffected.

inline constexpr std::size_t kMlpIn = 16;
inline constexpr std::size_t kMlpHidden = 32;
inline constexpr std::size_t kMlpClasses = 10;
inline constexpr double kMlpHostileWeight = 1e6;
inline constexpr double kMlpNoise = 0.15;

inline Tensor mlp_prototypes(std::uint64_t model_seed) {
  Rng rng = Rng(model_seed).fork(0x70726f746fULL);
  return detail::random_normal({kMlpClasses, kMlpIn}, rng, 1.0);
}

inline Batches mlp_batches(std::uint64_t model_seed, std::size_t samples, std::size_t batch, std::uint64_t seed) {
  if (samples == 0 || batch == 0) throw Error("mlp_batches: samples and batch size must be positive");
  const Tensor protos = mlp_prototypes(model_seed);
  Rng rng(seed);
  Batches out;
  for (std::size_t start = 0; start < samples; start += batch) {
    const std::size_t n = std::min(batch, samples - start);
    Tensor x({n, kMlpIn});
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t cls = static_cast<std::size_t>(rng.below(kMlpClasses));
      for (std::size_t i = 0; i < kMlpIn; ++i) {
        x[b * kMlpIn + i] = static_cast<float>(protos[cls * kMlpIn + i] + kMlpNoise * rng.normal());
      }
    }
    out.push_back({{"x", std::move(x)}});
  }
  return out;
}

inline ModelBundle build_hostile_mlp(std::uint64_t seed) {
  Rng rng = Rng(seed).fork(0x6d6c70ULL);
  const std::size_t h = kMlpHidden;
  ModelBundle m;
  m.name = "hostile_mlp";
  m.domain = Domain::kNlp;
  m.metadata = {{"builder", "hostile_mlp"}, {"seed", std::to_string(seed)}};

  Tensor w1 = detail::random_normal({h, kMlpIn}, rng, std::sqrt(2.0 / kMlpIn));
  Tensor b1 = detail::random_normal({h}, rng, 0.05);
  for (std::size_t i = 0; i < kMlpIn; ++i) w1[(h - 1) * kMlpIn + i] = 0.0f;
  b1[h - 1] = -1.0f;
  Tensor w2 = detail::random_normal({h, h}, rng, std::sqrt(2.0 / h));
  for (std::size_t r = 0; r < h; ++r) w2[r * h + (h - 1)] = static_cast<float>(kMlpHostileWeight);
  m.params["fc1.weight"] = w1;
  m.params["fc1.bias"] = b1;
  m.params["fc2.weight"] = w2;
  m.params["fc2.bias"] = detail::random_normal({h}, rng, 0.05);
  m.params["fc3.weight"] = Tensor({kMlpClasses, h});
  m.params["fc3.bias"] = Tensor::full({kMlpClasses}, 0.0f);

  auto& g = m.graph;
  g.inputs = {"x"};
  g.outputs = {"logits"};
  g.nodes = {
      detail::make_node("fc1", OpKind::kLinear, {"x"}, "h1", {{"weight", "fc1.weight"}, {"bias", "fc1.bias"}}),
      detail::make_node("relu1", OpKind::kRelu, {"h1"}, "a1"),
      detail::make_node("fc2", OpKind::kLinear, {"a1"}, "h2", {{"weight", "fc2.weight"}, {"bias", "fc2.bias"}}),
      detail::make_node("relu2", OpKind::kRelu, {"h2"}, "a2"),
      detail::make_node("fc3", OpKind::kLinear, {"a2"}, "logits", {{"weight", "fc3.weight"}, {"bias", "fc3.bias"}}),
  };
  auto [w3, b3] = detail::centroid_head(forward(m, {{"x", mlp_prototypes(seed)}}).at("a2"));
  m.params["fc3.weight"] = std::move(w3);
  m.params["fc3.bias"] = std::move(b3);
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------

// Synthetic data matched to a model built by one of the builders above.
// `input_scale` multiplies the continuous inputs (not token ids).
inline Batches model_batches(const ModelBundle& m, std::size_t samples, std::size_t batch, std::uint64_t seed,
                             double input_scale = 1.0) {
  auto it = m.metadata.find("builder");
  if (it == m.metadata.end()) throw Error("model " + m.name + " has no builder metadata; no synthetic data");
  Batches out;
  if (it->second == "tiny_cnn") {
    out = cnn_batches(detail::metadata_seed(m), samples, batch, seed);
  } else if (it->second == "hostile_mlp") {
    out = mlp_batches(detail::metadata_seed(m), samples, batch, seed);
  } else if (it->second == "tiny_transformer") {
    return transformer_batches(samples, batch, seed, input_scale);
  } else {
    throw Error("unknown model builder: " + it->second);
  }
  if (input_scale != 1.0) {
    for (auto& b : out) {
      for (auto& [name, t] : b) {
        for (float& x : t.values()) x = static_cast<float>(x * input_scale);
      }
    }
  }
  return out;
}

inline ModelBundle build_model(const std::string& builder, std::uint64_t seed) {
  if (builder == "tiny_cnn") return build_tiny_cnn(seed);
  if (builder == "tiny_transformer") return build_tiny_transformer_block(seed);
  if (builder == "hostile_mlp") return build_hostile_mlp(seed);
  throw Error("unknown model builder: " + builder);
}

}  // namespace fp8q

#endif  // FP8Q_MODELS_HPP_
