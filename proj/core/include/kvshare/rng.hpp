#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace kvshare {

// Seeded randomness used by window sampling, random pair ordering and the
// random-strategy baseline. std::mt19937_64 output is standardized, and the
// distributions below are hand-rolled, so results are identical across
// platforms and standard libraries.

inline uint64_t bounded_uint(std::mt19937_64& rng, uint64_t n) {
  // Rejection sampling to avoid modulo bias.
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t v = rng();
  while (v >= limit) v = rng();
  return v % n;
}

inline double unit_real(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename T>
void shuffle_inplace(std::span<T> items, std::mt19937_64& rng) {
  for (size_t i = items.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(bounded_uint(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

// k distinct values from [0, n), in draw order.
inline std::vector<int64_t> sample_distinct(int64_t n, int64_t k, std::mt19937_64& rng) {
  std::vector<int64_t> pool(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(k));
  for (int64_t i = 0; i < k; ++i) {
    const int64_t j = i + static_cast<int64_t>(bounded_uint(rng, static_cast<uint64_t>(n - i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    out.push_back(pool[static_cast<size_t>(i)]);
  }
  return out;
}

}  // namespace kvshare
