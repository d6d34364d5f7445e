#include "kvshare/compress.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace kvshare {

void CompressorConfig::validate() const {
  if (!enabled) return;
  if (heavy_hitters < 0) throw ConfigError("heavy_hitters must be >= 0");
  if (recent < 1) throw ConfigError("recent window must be >= 1");
}

void accumulate_scores(PositionScore& scores, const Tensor& attn_weights) {
  if (attn_weights.rank() != 2) {
    throw LogicError("accumulate_scores expects [heads x len] attention weights");
  }
  const int64_t heads = attn_weights.extent(0);
  const int64_t len = attn_weights.extent(1);
  if (static_cast<int64_t>(scores.size()) != len) {
    throw LogicError("score length " + std::to_string(scores.size()) +
                     " does not match attention length " + std::to_string(len));
  }
  for (int64_t h = 0; h < heads; ++h) {
    const auto row = attn_weights.row(h);
    for (int64_t p = 0; p < len; ++p) scores[static_cast<size_t>(p)] += row[p];
  }
}

std::vector<int64_t> eviction_keep_set(std::span<const float> scores, int64_t heavy_hitters,
                                       int64_t recent) {
  const int64_t len = static_cast<int64_t>(scores.size());
  const int64_t boundary = len - recent;  // positions >= boundary are the recent window
  std::vector<int64_t> older(static_cast<size_t>(std::max<int64_t>(boundary, 0)));
  std::iota(older.begin(), older.end(), 0);
  std::sort(older.begin(), older.end(), [&](int64_t a, int64_t b) {
    const float sa = scores[static_cast<size_t>(a)];
    const float sb = scores[static_cast<size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;  // tie: keep lower position
  });
  if (static_cast<int64_t>(older.size()) > heavy_hitters) {
    older.resize(static_cast<size_t>(heavy_hitters));
  }
  for (int64_t p = std::max<int64_t>(boundary, 0); p < len; ++p) older.push_back(p);
  std::sort(older.begin(), older.end());
  return older;
}

void evict(LayerKvCache& cache, PositionScore& scores, const CompressorConfig& config) {
  config.validate();
  if (static_cast<int64_t>(scores.size()) != cache.len()) {
    throw LogicError("score vector does not cover the cache");
  }
  if (cache.len() <= config.budget()) return;
  const std::vector<int64_t> keep =
      eviction_keep_set(scores, config.heavy_hitters, config.recent);
  cache.retain(keep);
  PositionScore remapped(keep.size());
  for (size_t i = 0; i < keep.size(); ++i) {
    remapped[i] = scores[static_cast<size_t>(keep[i])];
  }
  scores = std::move(remapped);
}

HeavyHitterCompressor::HeavyHitterCompressor(const ModelConfig& config,
                                             CompressorConfig compressor)
    : config_(compressor), scores_(static_cast<size_t>(config.n_layers)) {
  config_.validate();
}

void HeavyHitterCompressor::on_attention(int64_t /*layer*/, int64_t storage_layer,
                                         const Tensor& weights) {
  if (!config_.enabled) return;
  PositionScore& scores = scores_[static_cast<size_t>(storage_layer)];
  const int64_t len = weights.extent(1);
  if (static_cast<int64_t>(scores.size()) < len) {
    scores.resize(static_cast<size_t>(len), 0.0f);
  }
  accumulate_scores(scores, weights);
}

void HeavyHitterCompressor::evict_all(KvCacheSet& caches) {
  if (!config_.enabled) return;
  for (int64_t l = 0; l < caches.n_layers(); ++l) {
    if (caches.is_alias(l)) continue;
    LayerKvCache& cache = caches.owner_cache(l);
    PositionScore& scores = scores_[static_cast<size_t>(l)];
    if (static_cast<int64_t>(scores.size()) < cache.len()) {
      scores.resize(static_cast<size_t>(cache.len()), 0.0f);
    }
    evict(cache, scores, config_);
  }
}

}  // namespace kvshare
