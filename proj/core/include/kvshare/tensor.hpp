#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kvshare/error.hpp"

namespace kvshare {

// Dense row-major fp32 array. The shape is fixed at construction; every
// extent is >= 1 and product(shape) == data size.
class Tensor {
 public:
  Tensor() = default;  // null tensor, only assignable

  explicit Tensor(std::vector<int64_t> shape);
  Tensor(std::vector<int64_t> shape, std::vector<float> data);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t extent(int64_t dim) const { return shape_[static_cast<size_t>(dim)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  float& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
  const float& at(int64_t i) const { return data_[static_cast<size_t>(i)]; }
  float& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * extent(1) + j)]; }
  const float& at(int64_t i, int64_t j) const {
    return data_[static_cast<size_t>(i * extent(1) + j)];
  }
  float& at(int64_t i, int64_t j, int64_t k) {
    return data_[static_cast<size_t>((i * extent(1) + j) * extent(2) + k)];
  }
  const float& at(int64_t i, int64_t j, int64_t k) const {
    return data_[static_cast<size_t>((i * extent(1) + j) * extent(2) + k)];
  }

  // Row i of a 2-D tensor.
  std::span<float> row(int64_t i) {
    return std::span<float>(data_).subspan(static_cast<size_t>(i * extent(1)),
                                           static_cast<size_t>(extent(1)));
  }
  std::span<const float> row(int64_t i) const {
    return std::span<const float>(data_).subspan(static_cast<size_t>(i * extent(1)),
                                                 static_cast<size_t>(extent(1)));
  }

 private:
  std::vector<int64_t> shape_;
  std::vector<float> data_;
};

// a[m x k] * b[k x n] -> [m x n]. Fixed i-k-j loop order: each output cell
// accumulates k in ascending order, so results are bit-reproducible.
Tensor matmul(const Tensor& a, const Tensor& b);

// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& x);
void softmax_inplace(std::span<float> row);

// Plain in-order fp32 dot product (attention hot path).
float dot(std::span<const float> a, std::span<const float> b);

// sqrt(sum((a-b)^2)), double accumulation.
float euclidean_distance(std::span<const float> a, std::span<const float> b);

// dot(a,b)/(|a||b|); returns 0 when either norm < 1e-12.
float cosine_similarity(std::span<const float> a, std::span<const float> b);

// out = x * rsqrt(mean(x^2) + eps) * gain
void rmsnorm_row(std::span<float> out, std::span<const float> x,
                 std::span<const float> gain, float eps);

}  // namespace kvshare
