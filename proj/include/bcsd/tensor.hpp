// Copyright 2026 The bcsd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef BCSD_TENSOR_HPP
#define BCSD_TENSOR_HPP

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bcsd/errors.hpp"

namespace bcsd {

using Shape = std::vector<std::size_t>;

// Storage for anything viewed through Eigen. A fixed base alignment makes the
// vectorized reductions peel identically, so sums are bitwise reproducible
// from run to run.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

// Dense row-major array. Every extent is positive and the element count
// always equals the product of the extents.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(element_count(shape_), T{0});
  }

  Tensor(Shape shape, Buffer<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("tensor data has " + std::to_string(data_.size()) +
                       " values but shape " + to_string(shape_) +
                       " needs " + std::to_string(element_count(shape_)));
    }
  }

  template <typename Alloc>
    requires(!std::is_same_v<Alloc, typename Buffer<T>::allocator_type>)
  Tensor(Shape shape, const std::vector<T, Alloc>& data)
      : Tensor(std::move(shape), Buffer<T>(data.begin(), data.end())) {}

  static Tensor vector(std::vector<T> values) {
    Shape shape{values.size()};
    return Tensor(std::move(shape), values);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<T> values) {
    return Tensor(Shape{rows, cols}, values);
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw ShapeError("axis " + std::to_string(axis) +
                       " out of range for shape " + to_string(shape_));
    }
    return shape_[axis];
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  Buffer<T>& storage() { return data_; }
  const Buffer<T>& storage() const { return data_; }
  std::vector<T> to_vector() const { return {data_.begin(), data_.end()}; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t r, std::size_t c) {
    return data_[r * shape_[1] + c];
  }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // Same data, new extents; the element count must not change.
  Tensor reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, Buffer<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    if (shape_.empty()) throw ShapeError("tensor shape must have rank >= 1");
    for (std::size_t extent : shape_) {
      if (extent == 0) {
        throw ShapeError("tensor extents must be positive, got " +
                         to_string(shape_));
      }
    }
  }

  Shape shape_;
  Buffer<T> data_;
};

template <typename T>
using RowMajorMatrix =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMajorMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMajorMatrix<T>>;

// Views a flat buffer as a rows x cols row-major matrix.
template <typename T>
MatrixMap<T> as_matrix(std::span<T> data, std::size_t rows, std::size_t cols) {
  return MatrixMap<T>(data.data(), static_cast<Eigen::Index>(rows),
                      static_cast<Eigen::Index>(cols));
}

template <typename T>
ConstMatrixMap<T> as_matrix(std::span<const T> data, std::size_t rows,
                            std::size_t cols) {
  return ConstMatrixMap<T>(data.data(), static_cast<Eigen::Index>(rows),
                           static_cast<Eigen::Index>(cols));
}

}  // namespace bcsd

#endif  // BCSD_TENSOR_HPP
