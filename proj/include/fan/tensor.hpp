#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "fan/common.hpp"
#include "fan/rng.hpp"

namespace fan {

/// Dense row-major n-dimensional array of a floating point scalar type.
/// Deliberately minimal: shape plus flat storage, with the few helpers the
/// networks and image code need.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> s)
      : shape(std::move(s)), data(checked_numel(shape), T(0)) {}

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor from(std::vector<int> s, std::vector<T> d) {
    Tensor t;
    t.shape = std::move(s);
    require(checked_numel(t.shape) == static_cast<std::int64_t>(d.size()),
            "Tensor::from: data size does not match shape");
    t.data = std::move(d);
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

  int ndim() const { return static_cast<int>(shape.size()); }

  int dim(int i) const {
    require(i >= 0 && i < ndim(), "Tensor::dim: axis out of range");
    return shape[static_cast<std::size_t>(i)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data[static_cast<std::size_t>(i)];
  }

  // 2-D accessor, shape [rows, cols].
  T& at(int i, int j) { return data[std::size_t(i) * shape[1] + j]; }
  const T& at(int i, int j) const { return data[std::size_t(i) * shape[1] + j]; }

  // 4-D accessor, shape [n0, n1, n2, n3].
  T& at4(int a, int b, int c, int d) {
    return data[((std::size_t(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  const T& at4(int a, int b, int c, int d) const {
    return data[((std::size_t(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (const T& v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  void clamp(T lo, T hi) {
    for (T& v : data) v = std::min(hi, std::max(lo, v));
  }

  static std::int64_t checked_numel(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) {
      require(d > 0, "Tensor: dimensions must be positive");
      n *= d;
      require(n < (std::int64_t(1) << 40), "Tensor: shape too large");
    }
    return n;
  }
};

template <typename T>
std::string shape_str(const Tensor<T>& t) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    if (i) os << ",";
    os << t.shape[i];
  }
  os << "]";
  return os.str();
}

/// He-uniform initialization: U(-b, b) with b = sqrt(6 / fan_in).
template <typename T>
Tensor<T> he_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  require(fan_in > 0, "he_uniform: fan_in must be positive");
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (T& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
std::uint64_t checksum(const Tensor<T>& t, std::uint64_t h = 0xcbf29ce484222325ull) {
  h = fnv1a64(t.shape.data(), t.shape.size() * sizeof(int), h);
  return fnv1a64(t.data.data(), t.data.size() * sizeof(T), h);
}

}  // namespace fan
