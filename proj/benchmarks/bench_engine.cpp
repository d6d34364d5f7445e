#include <benchmark/benchmark.h>

#include <random>

#include "kvshare/eval.hpp"
#include "kvshare/kv_cache.hpp"
#include "kvshare/model.hpp"
#include "kvshare/rng.hpp"
#include "kvshare/tensor.hpp"

namespace {

using namespace kvshare;

ModelConfig bench_config() {
  ModelConfig cfg;
  cfg.n_layers = 8;
  cfg.d_model = 64;
  cfg.n_heads = 4;
  cfg.n_kv_heads = 2;
  cfg.d_head = 16;
  cfg.d_ff = 128;
  cfg.vocab_size = 258;
  cfg.max_seq = 512;
  return cfg;
}

Model bench_model() {
  const ModelConfig cfg = bench_config();
  std::mt19937_64 rng(1234);
  ModelWeights w;
  auto rand_tensor = [&](std::vector<int64_t> shape, float scale) {
    Tensor t(std::move(shape));
    for (float& v : t.data()) v = scale * static_cast<float>(2.0 * unit_real(rng) - 1.0);
    return t;
  };
  w.tok_embedding = rand_tensor({cfg.vocab_size, cfg.d_model}, 0.1f);
  w.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& lw : w.layers) {
    lw.attn_norm = Tensor({cfg.d_model}, std::vector<float>(64, 1.0f));
    lw.wq = rand_tensor({cfg.d_model, cfg.d_model}, 0.1f);
    lw.wk = rand_tensor({cfg.d_model, cfg.n_kv_heads * cfg.d_head}, 0.1f);
    lw.wv = rand_tensor({cfg.d_model, cfg.n_kv_heads * cfg.d_head}, 0.1f);
    lw.wo = rand_tensor({cfg.d_model, cfg.d_model}, 0.1f);
    lw.mlp_norm = Tensor({cfg.d_model}, std::vector<float>(64, 1.0f));
    lw.w_gate = rand_tensor({cfg.d_model, cfg.d_ff}, 0.1f);
    lw.w_up = rand_tensor({cfg.d_model, cfg.d_ff}, 0.1f);
    lw.w_down = rand_tensor({cfg.d_ff, cfg.d_model}, 0.1f);
  }
  w.final_norm = Tensor({cfg.d_model}, std::vector<float>(64, 1.0f));
  w.output_head = rand_tensor({cfg.d_model, cfg.vocab_size}, 0.1f);
  return Model(cfg, std::move(w));
}

void BM_Matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  std::mt19937_64 rng(7);
  Tensor a({n, n}), b({n, n});
  for (float& v : a.data()) v = static_cast<float>(unit_real(rng));
  for (float& v : b.data()) v = static_cast<float>(unit_real(rng));
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_Prefill(benchmark::State& state) {
  const Model model = bench_model();
  const int64_t len = state.range(0);
  std::vector<TokenId> tokens(static_cast<size_t>(len));
  for (int64_t i = 0; i < len; ++i) tokens[static_cast<size_t>(i)] = (i * 13) % 256;
  const SharingStrategy none;
  for (auto _ : state) {
    KvCacheSet caches(model.config(), none);
    Tensor logits = forward_prefill(model, tokens, caches, none);
    benchmark::DoNotOptimize(logits.data().data());
  }
  state.SetItemsProcessed(state.iterations() * len);
}
BENCHMARK(BM_Prefill)->Arg(64)->Arg(256);

void BM_Decode(benchmark::State& state) {
  const Model model = bench_model();
  const int64_t shared = state.range(0);
  SharingStrategy strategy;
  // Pair the deepest layers with the shallowest owners.
  for (int64_t i = 0; i < shared; ++i) {
    strategy.pairs.push_back({static_cast<int32_t>(model.config().n_layers - 1 - i),
                              static_cast<int32_t>(i)});
  }
  std::vector<TokenId> prompt(64);
  for (int64_t i = 0; i < 64; ++i) prompt[static_cast<size_t>(i)] = (i * 29) % 256;
  for (auto _ : state) {
    state.PauseTiming();
    KvCacheSet caches(model.config(), strategy);
    forward_prefill(model, prompt, caches, strategy);
    state.ResumeTiming();
    TokenId token = 42;
    for (int step = 0; step < 64; ++step) {
      Tensor logits = decode_step(model, token, caches, strategy);
      benchmark::DoNotOptimize(logits.data().data());
    }
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_Decode)->Arg(0)->Arg(2)->Arg(3);

}  // namespace

BENCHMARK_MAIN();
