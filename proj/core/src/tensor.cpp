#include "kvshare/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace kvshare {

namespace {

int64_t checked_numel(const std::vector<int64_t>& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e < 1) throw DimensionError("tensor extent must be >= 1, got " + std::to_string(e));
    n *= e;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(checked_numel(shape_)), 0.0f);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  const int64_t n = checked_numel(shape_);
  if (n != static_cast<int64_t>(data_.size())) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape product " + std::to_string(n));
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul expects 2-D tensors");
  }
  const int64_t m = a.extent(0), k = a.extent(1);
  const int64_t kb = b.extent(0), n = b.extent(1);
  if (k != kb) {
    throw DimensionError("matmul inner extents differ: " + std::to_string(k) + " vs " +
                         std::to_string(kb));
  }
  Tensor out({m, n});
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  for (int64_t i = 0; i < m; ++i) {
    const float* arow = pa + i * k;
    float* orow = po + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const float av = arow[kk];
      const float* brow = pb + kk * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

void softmax_inplace(std::span<float> row) {
  if (row.empty()) return;
  float mx = row[0];
  for (float v : row) mx = std::max(mx, v);
  float sum = 0.0f;
  for (float& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  const float inv = 1.0f / sum;
  for (float& v : row) v *= inv;
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("softmax_rows expects a 2-D tensor");
  Tensor out(x.shape(), std::vector<float>(x.data().begin(), x.data().end()));
  for (int64_t i = 0; i < out.extent(0); ++i) softmax_inplace(out.row(i));
  return out;
}

float dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw DimensionError("dot length mismatch");
  float acc = 0.0f;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

float euclidean_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw DimensionError("euclidean_distance length mismatch: " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
  }
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return static_cast<float>(std::sqrt(acc));
}

float cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine_similarity length mismatch: " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
  }
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    aa += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    bb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na < 1e-12 || nb < 1e-12) return 0.0f;
  return static_cast<float>(ab / (na * nb));
}

void rmsnorm_row(std::span<float> out, std::span<const float> x, std::span<const float> gain,
                 float eps) {
  if (out.size() != x.size() || x.size() != gain.size()) {
    throw DimensionError("rmsnorm_row length mismatch");
  }
  float ss = 0.0f;
  for (float v : x) ss += v * v;
  const float inv = 1.0f / std::sqrt(ss / static_cast<float>(x.size()) + eps);
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
}

}  // namespace kvshare
