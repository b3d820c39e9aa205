// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0
//
// Model container (".fp8m"), see docs/model_format.md:
//
//   "FP8M" | u32 version | u64 manifest_bytes | manifest (JSON text)
//   | one FPT1 blob per entry of manifest["tensors"], in order
//
// All integers little-endian.

#ifndef FP8Q_MODEL_IO_HPP_
#define FP8Q_MODEL_IO_HPP_

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>
#include <string>

#include "fp8q/graph.hpp"
#include "fp8q/tensor.hpp"

namespace fp8q {

inline constexpr char kModelMagic[4] = {'F', 'P', '8', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

inline nlohmann::json attrs_to_json(const NodeAttrs& a) {
  return {{"stride", a.stride}, {"padding", a.padding}, {"eps", a.eps}, {"transpose_b", a.transpose_b}};
}

inline NodeAttrs attrs_from_json(const nlohmann::json& j) {
  NodeAttrs a;
  a.stride = j.value("stride", a.stride);
  a.padding = j.value("padding", a.padding);
  a.eps = j.value("eps", a.eps);
  a.transpose_b = j.value("transpose_b", a.transpose_b);
  return a;
}

}  // namespace detail

inline nlohmann::json manifest_of(const ModelBundle& m) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : m.graph.nodes) {
    nodes.push_back({{"id", n.id},
                     {"kind", op_name(n.kind)},
                     {"inputs", n.inputs},
                     {"output", n.output},
                     {"params", n.params},
                     {"attrs", detail::attrs_to_json(n.attrs)}});
  }
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : m.params) tensors.push_back({{"name", name}, {"shape", t.shape()}});
  return {{"format", "fp8m"},
          {"version", kModelVersion},
          {"name", m.name},
          {"domain", domain_name(m.domain)},
          {"metadata", m.metadata},
          {"inputs", m.graph.inputs},
          {"outputs", m.graph.outputs},
          {"nodes", nodes},
          {"tensors", tensors}};
}

inline void write_model(std::ostream& os, const ModelBundle& m) {
  m.validate();
  const std::string manifest = manifest_of(m).dump(2);
  os.write(kModelMagic, 4);
  fpt1::detail::put_le<std::uint32_t>(os, kModelVersion);
  fpt1::detail::put_le<std::uint64_t>(os, manifest.size());
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  for (const auto& [name, t] : m.params) fpt1::write(os, t);
  if (!os) throw Error("model write failed");
}

inline ModelBundle read_model(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) throw Error("model file: truncated header");
  if (std::memcmp(magic, kModelMagic, 4) != 0) throw Error("model file: bad magic");
  const auto version = fpt1::detail::get_le<std::uint32_t>(is);
  if (version != kModelVersion) throw Error("model file: unsupported version " + std::to_string(version));
  const auto len = fpt1::detail::get_le<std::uint64_t>(is);
  if (len > (std::uint64_t{1} << 28)) throw Error("model file: manifest too large");
  std::string text(static_cast<std::size_t>(len), '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw Error("model file: truncated manifest");

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("model file: malformed manifest: ") + e.what());
  }
  ModelBundle m;
  try {
    if (j.at("version").get<std::uint32_t>() != kModelVersion) throw Error("model file: manifest version mismatch");
    m.name = j.value("name", "");
    m.domain = parse_domain(j.at("domain").get<std::string>());
    m.metadata = j.value("metadata", std::map<std::string, std::string>{});
    m.graph.inputs = j.at("inputs").get<std::vector<std::string>>();
    m.graph.outputs = j.at("outputs").get<std::vector<std::string>>();
    for (const auto& jn : j.at("nodes")) {
      Node n;
      n.id = jn.at("id").get<std::string>();
      n.kind = parse_op_kind(jn.at("kind").get<std::string>());
      n.inputs = jn.at("inputs").get<std::vector<std::string>>();
      n.output = jn.at("output").get<std::string>();
      n.params = jn.value("params", std::map<std::string, std::string>{});
      n.attrs = detail::attrs_from_json(jn.value("attrs", nlohmann::json::object()));
      m.graph.nodes.push_back(std::move(n));
    }
    for (const auto& jt : j.at("tensors")) {
      const auto name = jt.at("name").get<std::string>();
      const auto shape = jt.at("shape").get<Shape>();
      Tensor t = fpt1::read(is);
      if (t.shape() != shape) throw Error("model file: tensor " + name + " shape disagrees with manifest");
      m.params.emplace(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("model file: malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

inline void save_model(const std::string& path, const ModelBundle& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_model(os, m);
}

inline ModelBundle load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return read_model(is);
}

// FNV-1a over parameter names, shapes and raw float bits, in name order.
inline std::uint64_t parameter_checksum(const ModelBundle& m) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  const auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [name, t] : m.params) {
    mix(name.data(), name.size());
    for (std::size_t d : t.shape()) {
      const std::uint64_t v = d;
      mix(&v, sizeof v);
    }
    mix(t.data().data(), t.size() * sizeof(float));
  }
  return h;
}

}  // namespace fp8q

#endif  // FP8Q_MODEL_IO_HPP_
