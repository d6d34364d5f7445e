#include "kvshare/kv_cache.hpp"

#include <algorithm>
#include <cstring>
#include <string>

#include "kvshare/model.hpp"

namespace kvshare {

namespace {

std::string pair_str(const SharingPair& p) {
  return "(target=" + std::to_string(p.target) + ", source=" + std::to_string(p.source) + ")";
}

}  // namespace

void SharingStrategy::validate(int64_t n_layers) const {
  std::vector<bool> is_target(static_cast<size_t>(n_layers), false);
  std::vector<bool> is_source(static_cast<size_t>(n_layers), false);
  for (const SharingPair& p : pairs) {
    if (p.target < 0 || p.target >= n_layers || p.source < 0 || p.source >= n_layers) {
      throw StrategyError("sharing pair " + pair_str(p) + " references a layer outside [0, " +
                          std::to_string(n_layers) + ")");
    }
    if (p.target <= p.source) {
      throw StrategyError("sharing pair " + pair_str(p) +
                          " must replace the layer closer to the output (target > source)");
    }
    if (is_target[static_cast<size_t>(p.target)]) {
      throw StrategyError("layer " + std::to_string(p.target) + " is targeted twice");
    }
    is_target[static_cast<size_t>(p.target)] = true;
    is_source[static_cast<size_t>(p.source)] = true;
  }
  for (const SharingPair& p : pairs) {
    if (is_target[static_cast<size_t>(p.source)]) {
      throw StrategyError("sharing pair " + pair_str(p) +
                          ": source is itself a target (chains are not allowed)");
    }
    if (is_source[static_cast<size_t>(p.target)]) {
      throw StrategyError("sharing pair " + pair_str(p) +
                          ": target is itself a source (chains are not allowed)");
    }
  }
}

LayerKvCache::LayerKvCache(int64_t n_kv_heads, int64_t d_head, int64_t max_seq)
    : n_kv_heads_(n_kv_heads), d_head_(d_head), cap_(max_seq) {
  keys_.assign(static_cast<size_t>(n_kv_heads_ * cap_ * d_head_), 0.0f);
  values_.assign(static_cast<size_t>(n_kv_heads_ * cap_ * d_head_), 0.0f);
}

void LayerKvCache::append(std::span<const float> k, std::span<const float> v) {
  if (static_cast<int64_t>(k.size()) != n_kv_heads_ * d_head_ || k.size() != v.size()) {
    throw DimensionError("kv append expects n_kv_heads * d_head floats");
  }
  if (len_ >= cap_) {
    throw CapacityError("kv cache full: max_seq = " + std::to_string(cap_));
  }
  for (int64_t h = 0; h < n_kv_heads_; ++h) {
    float* kd = keys_.data() + (h * cap_ + len_) * d_head_;
    float* vd = values_.data() + (h * cap_ + len_) * d_head_;
    std::memcpy(kd, k.data() + h * d_head_, static_cast<size_t>(d_head_) * sizeof(float));
    std::memcpy(vd, v.data() + h * d_head_, static_cast<size_t>(d_head_) * sizeof(float));
  }
  ++len_;
}

void LayerKvCache::retain(std::span<const int64_t> sorted_positions) {
  for (size_t i = 0; i < sorted_positions.size(); ++i) {
    const int64_t p = sorted_positions[i];
    if (p < 0 || p >= len_ || (i > 0 && sorted_positions[i - 1] >= p)) {
      throw LogicError("retain expects strictly ascending in-range positions");
    }
  }
  for (int64_t h = 0; h < n_kv_heads_; ++h) {
    float* kbase = keys_.data() + h * cap_ * d_head_;
    float* vbase = values_.data() + h * cap_ * d_head_;
    for (size_t i = 0; i < sorted_positions.size(); ++i) {
      const int64_t src = sorted_positions[i];
      if (static_cast<int64_t>(i) == src) continue;
      std::memcpy(kbase + static_cast<int64_t>(i) * d_head_, kbase + src * d_head_,
                  static_cast<size_t>(d_head_) * sizeof(float));
      std::memcpy(vbase + static_cast<int64_t>(i) * d_head_, vbase + src * d_head_,
                  static_cast<size_t>(d_head_) * sizeof(float));
    }
  }
  len_ = static_cast<int64_t>(sorted_positions.size());
}

KvCacheSet::KvCacheSet(const ModelConfig& config, const SharingStrategy& strategy) {
  config.validate();
  strategy.validate(config.n_layers);
  const int64_t L = config.n_layers;
  storage_layer_.resize(static_cast<size_t>(L));
  for (int64_t l = 0; l < L; ++l) storage_layer_[static_cast<size_t>(l)] = l;
  for (const SharingPair& p : strategy.pairs) {
    storage_layer_[static_cast<size_t>(p.target)] = p.source;
  }
  slots_.resize(static_cast<size_t>(L));
  for (int64_t l = 0; l < L; ++l) {
    if (storage_layer_[static_cast<size_t>(l)] == l) {
      slots_[static_cast<size_t>(l)] =
          std::make_unique<LayerKvCache>(config.n_kv_heads, config.d_head, config.max_seq);
    }
  }
  kv_proj_counts_.assign(static_cast<size_t>(L), 0);
}

int64_t KvCacheSet::owner_count() const {
  int64_t n = 0;
  for (const auto& slot : slots_) {
    if (slot) ++n;
  }
  return n;
}

const LayerKvCache& KvCacheSet::cache(int64_t layer) const {
  return *slots_[static_cast<size_t>(storage_layer(layer))];
}

LayerKvCache& KvCacheSet::owner_cache(int64_t layer) {
  if (is_alias(layer)) {
    throw LogicError("layer " + std::to_string(layer) +
                     " is an alias of layer " + std::to_string(storage_layer(layer)) +
                     "; aliases do not accept appends");
  }
  return *slots_[static_cast<size_t>(layer)];
}

void KvCacheSet::reset_counters() {
  std::fill(kv_proj_counts_.begin(), kv_proj_counts_.end(), 0);
}

KvCacheSet new_cache_set(const ModelConfig& config, const SharingStrategy& strategy) {
  return KvCacheSet(config, strategy);
}

uint64_t kv_bytes(const KvCacheSet& set) {
  uint64_t total = 0;
  for (int64_t l = 0; l < set.n_layers(); ++l) {
    if (set.is_alias(l)) continue;
    const LayerKvCache& c = set.cache(l);
    total += 2ull * static_cast<uint64_t>(c.n_kv_heads()) * static_cast<uint64_t>(c.len()) *
             static_cast<uint64_t>(c.d_head()) * sizeof(float);
  }
  return total;
}

}  // namespace kvshare
