// Copyright 2026 The fp8q Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef FP8Q_TENSOR_HPP_
#define FP8Q_TENSOR_HPP_

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fp8q/format.hpp"

namespace fp8q {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major float32 tensor. Float is the working precision for all
// emulated compute; reductions accumulate in double.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0f) {
    check_dims();
  }
  Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_numel(shape_)) {
      throw Error("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                  shape_str(shape_));
    }
  }

  static Tensor full(Shape shape, float value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& values() { return data_; }
  const std::vector<float>& values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw Error("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  // Bitwise equality (distinguishes -0/+0 and NaN payloads).
  friend bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ &&
           (a.data_.empty() ||
            std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0);
  }

 private:
  void check_dims() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw Error("tensor dims must be positive, got " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<float> data_;
};

inline bool all_finite(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](float v) { return std::isfinite(v); });
}

inline double abs_max(const Tensor& t) {
  double m = 0.0;
  for (float v : t.data()) m = std::max(m, static_cast<double>(std::fabs(v)));
  return m;
}

// FPT1 binary tensor format:
//   "FPT1" | u32 rank | rank x u64 dims | numel x f32, all little-endian.
namespace fpt1 {

inline constexpr char kMagic[4] = {'F', 'P', 'T', '1'};

namespace detail {

template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw Error("FPT1: truncated stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

inline void write(std::ostream& os, const Tensor& t) {
  os.write(kMagic, 4);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(os, d);
  for (float v : t.data()) detail::put_le<float>(os, v);
  if (!os) throw Error("FPT1: write failed");
}

inline Tensor read(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) throw Error("FPT1: truncated stream");
  if (std::memcmp(magic, kMagic, 4) != 0) throw Error("FPT1: bad magic");
  const auto rank = detail::get_le<std::uint32_t>(is);
  if (rank > 16) throw Error("FPT1: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  std::uint64_t numel = 1;
  for (auto& d : shape) {
    const auto v = detail::get_le<std::uint64_t>(is);
    if (v == 0 || v > (std::uint64_t{1} << 40)) throw Error("FPT1: invalid dimension");
    d = static_cast<std::size_t>(v);
    numel *= v;
    if (numel > (std::uint64_t{1} << 34)) throw Error("FPT1: tensor too large");
  }
  std::vector<float> data(static_cast<std::size_t>(numel));
  for (auto& v : data) v = detail::get_le<float>(is);
  return Tensor(std::move(shape), std::move(data));
}

inline void save(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write(os, t);
}

inline Tensor load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return read(is);
}

}  // namespace fpt1
}  // namespace fp8q

#endif  // FP8Q_TENSOR_HPP_
