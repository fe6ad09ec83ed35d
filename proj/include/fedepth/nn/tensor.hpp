#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "fedepth/nn/errors.hpp"

namespace fedepth {

/// Ordered extents, all >= 1.
class TensorShape {
 public:
  TensorShape() = default;
  TensorShape(std::initializer_list<std::size_t> dims) : TensorShape(std::vector<std::size_t>(dims)) {}
  explicit TensorShape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    for (std::size_t d : dims_) {
      if (d == 0) throw StructuralError("tensor extent must be >= 1, got shape " + to_string());
    }
  }

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_.at(i); }
  const std::vector<std::size_t>& dims() const { return dims_; }

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t d : dims_) n *= d;
    return dims_.empty() ? 0 : n;
  }

  /// Shape with a leading batch extent.
  TensorShape batched(std::size_t batch) const {
    std::vector<std::size_t> dims{batch};
    dims.insert(dims.end(), dims_.begin(), dims_.end());
    return TensorShape(std::move(dims));
  }

  /// Drops the leading extent.
  TensorShape per_sample() const {
    if (dims_.size() < 2) throw StructuralError("shape " + to_string() + " has no per-sample part");
    return TensorShape(std::vector<std::size_t>(dims_.begin() + 1, dims_.end()));
  }

  std::string to_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

  friend bool operator==(const TensorShape&, const TensorShape&) = default;

 private:
  std::vector<std::size_t> dims_;
};

/// Dense row-major tensor owning its storage.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(TensorShape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}
  Tensor(TensorShape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_.numel()) {
      throw StructuralError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                            shape_.to_string());
    }
  }

  const TensorShape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same storage under a new shape with equal element count.
  void reshape(TensorShape shape) {
    if (shape.numel() != data_.size()) {
      throw StructuralError("cannot reshape " + shape_.to_string() + " to " + shape.to_string());
    }
    shape_ = std::move(shape);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  TensorShape shape_;
  std::vector<T> data_;
};

/// Rows [begin, end) of a tensor whose first extent is the batch.
template <class T>
Tensor<T> slice_rows(const Tensor<T>& t, std::size_t begin, std::size_t end) {
  const std::size_t row = t.size() / t.shape()[0];
  std::vector<std::size_t> dims = t.shape().dims();
  dims[0] = end - begin;
  return Tensor<T>(TensorShape(dims),
                   std::vector<T>(t.data() + begin * row, t.data() + end * row));
}

/// Rows picked by index, in the given order.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& t, std::span<const std::size_t> rows) {
  const std::size_t row = t.size() / t.shape()[0];
  std::vector<std::size_t> dims = t.shape().dims();
  dims[0] = rows.size();
  std::vector<T> out(rows.size() * row);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(t.data() + rows[r] * row, row, out.data() + r * row);
  }
  return Tensor<T>(TensorShape(dims), std::move(out));
}

}  // namespace fedepth
