#include "kvshare/model.hpp"

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

namespace kvshare {

void ModelConfig::validate() const {
  if (n_layers < 1 || d_model < 1 || n_heads < 1 || n_kv_heads < 1 || d_head < 1 || d_ff < 1 ||
      vocab_size < 1 || max_seq < 1) {
    throw ConfigError("every model dimension must be >= 1");
  }
  if (n_heads % n_kv_heads != 0) {
    throw ConfigError("n_heads (" + std::to_string(n_heads) +
                      ") must be a multiple of n_kv_heads (" + std::to_string(n_kv_heads) + ")");
  }
  if (d_model != n_heads * d_head) {
    throw ConfigError("d_model must equal n_heads * d_head");
  }
}

namespace {

void check_shape(const Tensor& t, std::vector<int64_t> want, const std::string& name) {
  if (t.shape() != want) {
    std::string s = name + " has wrong shape: got [";
    for (size_t i = 0; i < t.shape().size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(t.shape()[i]);
    }
    s += "]";
    throw ConfigError(s);
  }
}

}  // namespace

void ModelWeights::validate(const ModelConfig& c) const {
  check_shape(tok_embedding, {c.vocab_size, c.d_model}, "tok_embedding");
  if (static_cast<int64_t>(layers.size()) != c.n_layers) {
    throw ConfigError("expected " + std::to_string(c.n_layers) + " layers, got " +
                      std::to_string(layers.size()));
  }
  for (int64_t l = 0; l < c.n_layers; ++l) {
    const LayerWeights& lw = layers[static_cast<size_t>(l)];
    const std::string p = "layers." + std::to_string(l) + ".";
    check_shape(lw.attn_norm, {c.d_model}, p + "attn_norm");
    check_shape(lw.wq, {c.d_model, c.n_heads * c.d_head}, p + "wq");
    check_shape(lw.wk, {c.d_model, c.n_kv_heads * c.d_head}, p + "wk");
    check_shape(lw.wv, {c.d_model, c.n_kv_heads * c.d_head}, p + "wv");
    check_shape(lw.wo, {c.n_heads * c.d_head, c.d_model}, p + "wo");
    check_shape(lw.mlp_norm, {c.d_model}, p + "mlp_norm");
    check_shape(lw.w_gate, {c.d_model, c.d_ff}, p + "w_gate");
    check_shape(lw.w_up, {c.d_model, c.d_ff}, p + "w_up");
    check_shape(lw.w_down, {c.d_ff, c.d_model}, p + "w_down");
  }
  check_shape(final_norm, {c.d_model}, "final_norm");
  check_shape(output_head, {c.d_model, c.vocab_size}, "output_head");
}

Model::Model(ModelConfig config, ModelWeights weights)
    : config_(config), weights_(std::move(weights)) {
  config_.validate();
  weights_.validate(config_);
}

void rope_apply_inplace(Tensor& t, int64_t position_offset, float theta) {
  if (t.rank() != 3) throw DimensionError("rope expects a [heads x len x d_head] tensor");
  const int64_t heads = t.extent(0), len = t.extent(1), d = t.extent(2);
  if (d % 2 != 0) throw ConfigError("rotary embedding requires an even d_head");
  const int64_t half = d / 2;
  // cos/sin table shared by all heads
  std::vector<float> cs(static_cast<size_t>(len * half) * 2);
  for (int64_t i = 0; i < half; ++i) {
    const double freq = std::pow(static_cast<double>(theta),
                                 -2.0 * static_cast<double>(i) / static_cast<double>(d));
    for (int64_t p = 0; p < len; ++p) {
      const double angle = static_cast<double>(position_offset + p) * freq;
      cs[static_cast<size_t>((p * half + i) * 2)] = static_cast<float>(std::cos(angle));
      cs[static_cast<size_t>((p * half + i) * 2 + 1)] = static_cast<float>(std::sin(angle));
    }
  }
  float* base = t.data().data();
  for (int64_t h = 0; h < heads; ++h) {
    for (int64_t p = 0; p < len; ++p) {
      float* row = base + (h * len + p) * d;
      const float* csrow = cs.data() + p * half * 2;
      for (int64_t i = 0; i < half; ++i) {
        const float c = csrow[i * 2];
        const float s = csrow[i * 2 + 1];
        const float even = row[2 * i];
        const float odd = row[2 * i + 1];
        row[2 * i] = even * c - odd * s;
        row[2 * i + 1] = even * s + odd * c;
      }
    }
  }
}

Tensor rope_apply(const Tensor& q_or_k, int64_t position_offset, float theta) {
  Tensor out(q_or_k.shape(), std::vector<float>(q_or_k.data().begin(), q_or_k.data().end()));
  rope_apply_inplace(out, position_offset, theta);
  return out;
}

namespace {

// [len x heads*d] -> [heads x len x d]
Tensor to_heads(const Tensor& x, int64_t heads, int64_t d) {
  const int64_t len = x.extent(0);
  Tensor out({heads, len, d});
  for (int64_t h = 0; h < heads; ++h) {
    for (int64_t t = 0; t < len; ++t) {
      std::memcpy(&out.at(h, t, 0), &x.at(t, h * d), static_cast<size_t>(d) * sizeof(float));
    }
  }
  return out;
}

void check_strategy_against_caches(const ModelConfig& cfg, const SharingStrategy& strategy,
                                   const KvCacheSet& caches) {
  strategy.validate(cfg.n_layers);
  if (caches.n_layers() != cfg.n_layers) {
    throw StrategyError("cache set was built for a different layer count");
  }
  if (strategy.size() != caches.alias_count()) {
    throw StrategyError("strategy does not match the cache set wiring");
  }
  for (const SharingPair& p : strategy.pairs) {
    if (!caches.is_alias(p.target) || caches.storage_layer(p.target) != p.source) {
      throw StrategyError("strategy does not match the cache set wiring");
    }
  }
}

Tensor forward_core(const Model& model, std::span<const TokenId> tokens, KvCacheSet& caches,
                    const SharingStrategy& strategy, AttentionObserver* observer,
                    bool want_logits) {
  const ModelConfig& cfg = model.config();
  const ModelWeights& w = model.weights();
  const int64_t q_len = static_cast<int64_t>(tokens.size());
  if (q_len < 1) throw InputError("forward pass needs at least one token");
  check_strategy_against_caches(cfg, strategy, caches);
  const int64_t pos0 = caches.seq_pos();
  if (pos0 + q_len > cfg.max_seq) {
    throw CapacityError("sequence of " + std::to_string(pos0 + q_len) +
                        " positions exceeds max_seq = " + std::to_string(cfg.max_seq));
  }
  for (TokenId t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) {
      throw InputError("token id " + std::to_string(t) + " outside vocab");
    }
  }

  Tensor x({q_len, cfg.d_model});
  for (int64_t t = 0; t < q_len; ++t) {
    std::memcpy(x.row(t).data(), w.tok_embedding.row(tokens[static_cast<size_t>(t)]).data(),
                static_cast<size_t>(cfg.d_model) * sizeof(float));
  }

  const int64_t group = cfg.n_heads / cfg.n_kv_heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(cfg.d_head));
  Tensor xn({q_len, cfg.d_model});
  std::vector<float> krow(static_cast<size_t>(cfg.n_kv_heads * cfg.d_head));

  for (int64_t l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& lw = w.layers[static_cast<size_t>(l)];

    for (int64_t t = 0; t < q_len; ++t) {
      rmsnorm_row(xn.row(t), x.row(t), lw.attn_norm.data(), cfg.norm_eps);
    }
    Tensor qb = matmul(xn, lw.wq);
    Tensor q_heads = to_heads(qb, cfg.n_heads, cfg.d_head);
    rope_apply_inplace(q_heads, pos0, cfg.rope_theta);

    if (!caches.is_alias(l)) {
      caches.count_kv_proj(l);
      Tensor kb = matmul(xn, lw.wk);
      Tensor vb = matmul(xn, lw.wv);
      Tensor k_heads = to_heads(kb, cfg.n_kv_heads, cfg.d_head);
      rope_apply_inplace(k_heads, pos0, cfg.rope_theta);
      LayerKvCache& cache = caches.owner_cache(l);
      for (int64_t t = 0; t < q_len; ++t) {
        for (int64_t h = 0; h < cfg.n_kv_heads; ++h) {
          std::memcpy(krow.data() + h * cfg.d_head, &k_heads.at(h, t, 0),
                      static_cast<size_t>(cfg.d_head) * sizeof(float));
        }
        cache.append(krow, vb.row(t));
      }
    }

    const LayerKvCache& cache = caches.cache(l);
    const int64_t kv_len = cache.len();
    // Full [heads x q x kv] weight buffer; masked tail stays exactly zero.
    Tensor attn_w({cfg.n_heads, q_len, kv_len});
    Tensor attn_out({q_len, cfg.n_heads * cfg.d_head});
    for (int64_t h = 0; h < cfg.n_heads; ++h) {
      const int64_t kvh = h / group;
      for (int64_t t = 0; t < q_len; ++t) {
        const int64_t valid = kv_len - (q_len - 1 - t);
        const std::span<const float> q_row(&q_heads.at(h, t, 0),
                                           static_cast<size_t>(cfg.d_head));
        float* wrow = &attn_w.at(h, t, 0);
        for (int64_t p = 0; p < valid; ++p) {
          wrow[p] = dot(q_row, cache.key_row(kvh, p)) * scale;
        }
        softmax_inplace({wrow, static_cast<size_t>(valid)});
        float* orow = &attn_out.at(t, h * cfg.d_head);
        for (int64_t p = 0; p < valid; ++p) {
          const float wv = wrow[p];
          const std::span<const float> v_row = cache.value_row(kvh, p);
          for (int64_t dd = 0; dd < cfg.d_head; ++dd) orow[dd] += wv * v_row[dd];
        }
      }
    }
    if (observer != nullptr) {
      const int64_t storage = caches.storage_layer(l);
      for (int64_t t = 0; t < q_len; ++t) {
        Tensor per_query({cfg.n_heads, kv_len});
        for (int64_t h = 0; h < cfg.n_heads; ++h) {
          std::memcpy(per_query.row(h).data(), &attn_w.at(h, t, 0),
                      static_cast<size_t>(kv_len) * sizeof(float));
        }
        observer->on_attention(l, storage, per_query);
      }
    }

    Tensor attn_proj = matmul(attn_out, lw.wo);
    for (int64_t i = 0; i < x.numel(); ++i) x.at(i) += attn_proj.at(i);

    for (int64_t t = 0; t < q_len; ++t) {
      rmsnorm_row(xn.row(t), x.row(t), lw.mlp_norm.data(), cfg.norm_eps);
    }
    Tensor gate = matmul(xn, lw.w_gate);
    Tensor up = matmul(xn, lw.w_up);
    for (int64_t i = 0; i < gate.numel(); ++i) {
      const float g = gate.at(i);
      gate.at(i) = g / (1.0f + std::exp(-g)) * up.at(i);
    }
    Tensor down = matmul(gate, lw.w_down);
    for (int64_t i = 0; i < x.numel(); ++i) x.at(i) += down.at(i);
  }

  caches.advance(q_len);

  Tensor hidden({q_len, cfg.d_model});
  for (int64_t t = 0; t < q_len; ++t) {
    rmsnorm_row(hidden.row(t), x.row(t), w.final_norm.data(), cfg.norm_eps);
  }
  if (!want_logits) return hidden;
  return matmul(hidden, w.output_head);
}

}  // namespace

Tensor forward_prefill(const Model& model, std::span<const TokenId> tokens, KvCacheSet& caches,
                       const SharingStrategy& strategy, AttentionObserver* observer) {
  return forward_core(model, tokens, caches, strategy, observer, /*want_logits=*/true);
}

Tensor forward_hidden(const Model& model, std::span<const TokenId> tokens, KvCacheSet& caches,
                      const SharingStrategy& strategy, AttentionObserver* observer) {
  return forward_core(model, tokens, caches, strategy, observer, /*want_logits=*/false);
}

Tensor decode_step(const Model& model, TokenId token, KvCacheSet& caches,
                   const SharingStrategy& strategy, AttentionObserver* observer) {
  const Tensor logits = forward_core(model, {&token, 1}, caches, strategy, observer,
                                     /*want_logits=*/true);
  std::vector<float> row(logits.row(0).begin(), logits.row(0).end());
  return Tensor({model.config().vocab_size}, std::move(row));
}

}  // namespace kvshare
