#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kvshare/kv_cache.hpp"
#include "kvshare/tensor.hpp"

namespace kvshare {

using TokenId = int32_t;

// Decoder-only pre-norm transformer: RMS norm, rotary positions, optional
// grouped-query attention, SwiGLU MLP.
struct ModelConfig {
  int64_t n_layers = 0;
  int64_t d_model = 0;
  int64_t n_heads = 0;
  int64_t n_kv_heads = 0;
  int64_t d_head = 0;
  int64_t d_ff = 0;
  int64_t vocab_size = 0;
  int64_t max_seq = 0;
  float rope_theta = 10000.0f;
  float norm_eps = 1e-5f;

  void validate() const;  // ConfigError on violation
};

struct LayerWeights {
  Tensor attn_norm;  // [d_model]
  Tensor wq;         // [d_model x n_heads*d_head]
  Tensor wk;         // [d_model x n_kv_heads*d_head]
  Tensor wv;         // [d_model x n_kv_heads*d_head]
  Tensor wo;         // [n_heads*d_head x d_model]
  Tensor mlp_norm;   // [d_model]
  Tensor w_gate;     // [d_model x d_ff]
  Tensor w_up;       // [d_model x d_ff]
  Tensor w_down;     // [d_ff x d_model]
};

struct ModelWeights {
  Tensor tok_embedding;  // [vocab_size x d_model]
  std::vector<LayerWeights> layers;
  Tensor final_norm;   // [d_model]
  Tensor output_head;  // [d_model x vocab_size]

  void validate(const ModelConfig& config) const;
};

class Model {
 public:
  Model(ModelConfig config, ModelWeights weights);

  const ModelConfig& config() const { return config_; }
  const ModelWeights& weights() const { return weights_; }

  // FNV-1a of the weight container bytes; empty for in-memory models.
  const std::string& weights_hash() const { return weights_hash_; }
  void set_weights_hash(std::string h) { weights_hash_ = std::move(h); }

 private:
  ModelConfig config_;
  ModelWeights weights_;
  std::string weights_hash_;
};

// Receives each query position's attention row so a compressor can rank
// cached positions. weights is [n_heads x kv_len]; masked tail entries are
// exact zeros. storage_layer resolves aliases, so a shared target layer's
// usage lands on the owner it reads from.
struct AttentionObserver {
  virtual ~AttentionObserver() = default;
  virtual void on_attention(int64_t layer, int64_t storage_layer, const Tensor& weights) = 0;
};

// Rotary rotation of [heads x len x d_head] at absolute positions
// offset..offset+len-1. Pairs (2i, 2i+1) rotate by pos * theta^(-2i/d_head).
Tensor rope_apply(const Tensor& q_or_k, int64_t position_offset, float theta);
void rope_apply_inplace(Tensor& q_or_k, int64_t position_offset, float theta);

// Runs the prompt through the model, appending K/V for every owner layer.
// Shared target layers never touch their K/V projections and attend over
// the source layer's cache. Returns logits [len x vocab_size].
Tensor forward_prefill(const Model& model, std::span<const TokenId> tokens, KvCacheSet& caches,
                       const SharingStrategy& strategy, AttentionObserver* observer = nullptr);

// Same pass, stopping after the final norm: returns [len x d_model].
Tensor forward_hidden(const Model& model, std::span<const TokenId> tokens, KvCacheSet& caches,
                      const SharingStrategy& strategy, AttentionObserver* observer = nullptr);

// One autoregressive step; returns logits [vocab_size].
Tensor decode_step(const Model& model, TokenId token, KvCacheSet& caches,
                   const SharingStrategy& strategy, AttentionObserver* observer = nullptr);

}  // namespace kvshare
