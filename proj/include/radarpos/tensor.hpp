// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "radarpos/errors.hpp"

namespace radarpos {

using Shape = std::vector<std::size_t>;

enum class Dtype : std::uint8_t { float32 = 0, float64 = 1 };

template <class T>
inline constexpr Dtype dtype_of = std::is_same_v<T, float> ? Dtype::float32 : Dtype::float64;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array. Scalars are represented with shape {1}.
template <class T>
class Tensor {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "Tensor supports float and double");

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (shape_size(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                           to_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const {
    require_rank(2);
    return shape_[0];
  }
  std::size_t cols() const {
    require_rank(2);
    return shape_[1];
  }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * shape_.back(), shape_.back()); }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * shape_.back(), shape_.back());
  }

  T item() const {
    if (data_.size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape_));
    return data_[0];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void require_rank(std::size_t r) const {
    if (shape_.size() != r) {
      throw DimensionError("expected rank " + std::to_string(r) + ", got shape " + to_string(shape_));
    }
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  void validate_shape() const {
    if (shape_.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (auto d : shape_) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

namespace kernel {

// out[M×P] += a[M×K] · b[K×P]
template <class T>
void matmul_acc(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = out + i * p;
    const T* arow = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = b + kk * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[M×K] += g[M×P] · b[K×P]ᵀ
template <class T>
void matmul_nt_acc(const T* g, const T* b, T* out, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * p;
    T* orow = out + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T* brow = b + kk * p;
      T acc{0};
      for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
      orow[kk] += acc;
    }
  }
}

// out[K×P] += a[M×K]ᵀ · g[M×P]
template <class T>
void matmul_tn_acc(const T* a, const T* g, T* out, std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* grow = g + i * p;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      T* orow = out + kk * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * grow[j];
    }
  }
}

}  // namespace kernel

}  // namespace radarpos
