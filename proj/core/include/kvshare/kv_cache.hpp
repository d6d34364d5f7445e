#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "kvshare/error.hpp"

namespace kvshare {

struct ModelConfig;

// One (target <- source) cache replacement: the target layer never computes
// or stores K/V and reads the source layer's cache instead.
struct SharingPair {
  int32_t target = 0;
  int32_t source = 0;
};

struct SharingStrategy {
  std::vector<SharingPair> pairs;

  bool empty() const { return pairs.empty(); }
  int64_t size() const { return static_cast<int64_t>(pairs.size()); }

  // Enforces: target > source, targets pairwise distinct, no layer is both
  // a source and a target (no chains), all indices < n_layers.
  void validate(int64_t n_layers) const;
};

// Key/value storage for one layer: [n_kv_heads][pos][d_head], preallocated
// to max_seq positions. Keys are stored position-rotated, exactly as the
// attention consumed them.
class LayerKvCache {
 public:
  LayerKvCache(int64_t n_kv_heads, int64_t d_head, int64_t max_seq);

  int64_t len() const { return len_; }
  int64_t n_kv_heads() const { return n_kv_heads_; }
  int64_t d_head() const { return d_head_; }
  int64_t max_seq() const { return cap_; }

  // Appends one position; k and v are [n_kv_heads * d_head], head-major.
  void append(std::span<const float> k, std::span<const float> v);

  std::span<const float> key_row(int64_t head, int64_t pos) const {
    return {keys_.data() + (head * cap_ + pos) * d_head_, static_cast<size_t>(d_head_)};
  }
  std::span<const float> value_row(int64_t head, int64_t pos) const {
    return {values_.data() + (head * cap_ + pos) * d_head_, static_cast<size_t>(d_head_)};
  }

  // Compacts storage down to the given ascending position list.
  void retain(std::span<const int64_t> sorted_positions);

 private:
  int64_t n_kv_heads_ = 0;
  int64_t d_head_ = 0;
  int64_t cap_ = 0;
  int64_t len_ = 0;
  std::vector<float> keys_;
  std::vector<float> values_;
};

// Per-layer cache slots: each layer is either an owner with its own storage
// or an alias of an earlier owner layer. Confined to one logical thread.
class KvCacheSet {
 public:
  KvCacheSet(const ModelConfig& config, const SharingStrategy& strategy);

  int64_t n_layers() const { return static_cast<int64_t>(storage_layer_.size()); }
  bool is_alias(int64_t layer) const { return storage_layer_[static_cast<size_t>(layer)] != layer; }
  int64_t storage_layer(int64_t layer) const { return storage_layer_[static_cast<size_t>(layer)]; }
  int64_t owner_count() const;
  int64_t alias_count() const { return n_layers() - owner_count(); }

  // Read access, alias-resolved.
  const LayerKvCache& cache(int64_t layer) const;
  // Write access; appending through an alias is a logic error.
  LayerKvCache& owner_cache(int64_t layer);

  // Absolute token positions processed so far (independent of storage
  // length, which eviction may shrink).
  int64_t seq_pos() const { return seq_pos_; }
  void advance(int64_t n) { seq_pos_ += n; }

  // K/V-projection instrumentation, incremented by the forward pass once
  // per layer per call. Shared target layers must stay at zero.
  const std::vector<int64_t>& kv_proj_counts() const { return kv_proj_counts_; }
  void count_kv_proj(int64_t layer) { ++kv_proj_counts_[static_cast<size_t>(layer)]; }
  void reset_counters();

 private:
  std::vector<int64_t> storage_layer_;
  std::vector<std::unique_ptr<LayerKvCache>> slots_;  // null for aliases
  std::vector<int64_t> kv_proj_counts_;
  int64_t seq_pos_ = 0;
};

KvCacheSet new_cache_set(const ModelConfig& config, const SharingStrategy& strategy);

// Owner slots contribute 2 * n_kv_heads * len * d_head * 4 bytes; aliases
// contribute nothing.
uint64_t kv_bytes(const KvCacheSet& set);

}  // namespace kvshare
