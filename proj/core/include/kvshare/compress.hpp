#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kvshare/kv_cache.hpp"
#include "kvshare/model.hpp"

namespace kvshare {

// Heavy-hitter eviction: keep the `recent` newest positions plus the
// `heavy_hitters` positions with the highest accumulated attention mass.
struct CompressorConfig {
  int64_t heavy_hitters = 0;  // H
  int64_t recent = 1;         // R
  bool enabled = false;

  int64_t budget() const { return heavy_hitters + recent; }
  void validate() const;  // ConfigError: H >= 0, R >= 1 when enabled
};

// Accumulated attention mass per cached position.
using PositionScore = std::vector<float>;

// scores[p] += sum over heads of attn_weights[h][p]; attn_weights is
// [heads x len] with len == scores length.
void accumulate_scores(PositionScore& scores, const Tensor& attn_weights);

// Positions to keep (ascending): the R newest plus the H highest-scored of
// the rest; score ties keep the lower position index.
std::vector<int64_t> eviction_keep_set(std::span<const float> scores, int64_t heavy_hitters,
                                       int64_t recent);

// No-op while len <= H + R; otherwise compacts cache and scores to exactly
// H + R positions, preserving relative order.
void evict(LayerKvCache& cache, PositionScore& scores, const CompressorConfig& config);

// Wires score accumulation into the forward pass and applies eviction after
// each model call. Scores for a shared target layer land on the owner its
// attention actually reads, so both layers' usage ranks the shared storage.
class HeavyHitterCompressor final : public AttentionObserver {
 public:
  HeavyHitterCompressor(const ModelConfig& config, CompressorConfig compressor);

  void on_attention(int64_t layer, int64_t storage_layer, const Tensor& weights) override;

  // Evicts every owner cache above budget; call after prefill and after
  // each decode step.
  void evict_all(KvCacheSet& caches);

  const CompressorConfig& config() const { return config_; }
  const PositionScore& scores(int64_t layer) const {
    return scores_[static_cast<size_t>(layer)];
  }

 private:
  CompressorConfig config_;
  std::vector<PositionScore> scores_;  // indexed by owner layer
};

}  // namespace kvshare
