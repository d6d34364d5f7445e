#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "kvshare/io.hpp"
#include "kvshare/kv_cache.hpp"
#include "kvshare/model.hpp"
#include "kvshare/rng.hpp"
#include "kvshare/search.hpp"
#include "test_util.hpp"

using namespace kvshare;

namespace {

CalibrationSet make_calib(int64_t rows, int64_t len, int64_t vocab, uint64_t seed) {
  std::mt19937_64 rng(seed);
  CalibrationSet set;
  set.source = "synthetic";
  for (int64_t r = 0; r < rows; ++r) {
    set.sequences.push_back(testutil::random_tokens(len, vocab, rng));
  }
  return set;
}

// Flatten one layer's cache and combine keys/values by elementwise mean.
std::vector<float> flatten_combine(const LayerKvCache& cache) {
  std::vector<float> out;
  for (int64_t h = 0; h < cache.n_kv_heads(); ++h) {
    for (int64_t p = 0; p < cache.len(); ++p) {
      const auto k = cache.key_row(h, p);
      const auto v = cache.value_row(h, p);
      for (size_t d = 0; d < k.size(); ++d) out.push_back(0.5f * (k[d] + v[d]));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("fingerprint of a single sentence is its flattened combined cache") {
  const ModelConfig cfg = testutil::tiny_config(2);
  const Model model = testutil::make_random_model(cfg, 101);
  const CalibrationSet calib = make_calib(1, 12, cfg.vocab_size, 102);

  const auto fps = compute_fingerprints(model, calib);
  REQUIRE(fps.size() == 2);
  CHECK(static_cast<int64_t>(fps[0].vec.size()) == cfg.n_kv_heads * 12 * cfg.d_head);

  KvCacheSet caches(cfg, {});
  forward_hidden(model, calib.sequences[0], caches, {});
  for (int64_t l = 0; l < 2; ++l) {
    const std::vector<float> want = flatten_combine(caches.cache(l));
    REQUIRE(want.size() == fps[static_cast<size_t>(l)].vec.size());
    for (size_t i = 0; i < want.size(); ++i) {
      CHECK(fps[static_cast<size_t>(l)].vec[i] == doctest::Approx(want[i]).epsilon(1e-7));
    }
  }
}

TEST_CASE("fingerprints average across sentences") {
  const ModelConfig cfg = testutil::tiny_config(2);
  const Model model = testutil::make_random_model(cfg, 111);
  const CalibrationSet calib = make_calib(3, 10, cfg.vocab_size, 112);

  const auto combined = compute_fingerprints(model, calib);
  std::vector<std::vector<LayerFingerprint>> singles;
  for (int r = 0; r < 3; ++r) {
    CalibrationSet one;
    one.sequences = {calib.sequences[static_cast<size_t>(r)]};
    singles.push_back(compute_fingerprints(model, one));
  }
  for (int64_t l = 0; l < 2; ++l) {
    for (size_t i = 0; i < combined[static_cast<size_t>(l)].vec.size(); ++i) {
      const double mean = (singles[0][static_cast<size_t>(l)].vec[i] +
                           singles[1][static_cast<size_t>(l)].vec[i] +
                           singles[2][static_cast<size_t>(l)].vec[i]) /
                          3.0;
      CHECK(combined[static_cast<size_t>(l)].vec[i] == doctest::Approx(mean).epsilon(1e-6));
    }
  }
}

TEST_CASE("duplicated layers with silenced outputs fingerprint identically") {
  // Both layers see the same input (layer outputs projected to zero) and
  // share projections, so their caches and fingerprints coincide.
  const ModelConfig cfg = testutil::tiny_config(2);
  ModelWeights w = testutil::make_random_weights(cfg, 121);
  w.layers[1] = w.layers[0];
  for (auto& lw : w.layers) {
    for (float& v : lw.wo.data()) v = 0.0f;
    for (float& v : lw.w_down.data()) v = 0.0f;
  }
  const Model model(cfg, std::move(w));
  const CalibrationSet calib = make_calib(2, 8, cfg.vocab_size, 122);

  const auto fps = compute_fingerprints(model, calib);
  CHECK(euclidean_distance(fps[0].vec, fps[1].vec) == 0.0f);
}

TEST_CASE("rank_pairs orders by distance with lexicographic ties") {
  // 1-D fingerprints at 0, 2, 4: d(0,1)=2, d(1,2)=2, d(0,2)=4.
  std::vector<LayerFingerprint> fps(3);
  fps[0].vec = {0.0f};
  fps[1].vec = {2.0f};
  fps[2].vec = {4.0f};

  const DistanceRanking dis = rank_pairs(fps, PairOrdering::kDissimilar, 0);
  REQUIRE(dis.entries.size() == 3);
  CHECK(dis.entries[0].i == 0);
  CHECK(dis.entries[0].j == 2);
  CHECK(dis.entries[1].i == 0);  // tie with (1,2) broken lexicographically
  CHECK(dis.entries[1].j == 1);
  CHECK(dis.entries[2].i == 1);
  CHECK(dis.entries[2].j == 2);

  const DistanceRanking sim = rank_pairs(fps, PairOrdering::kSimilar, 0);
  CHECK(sim.entries[0].i == 0);  // ascending, ties still lexicographic
  CHECK(sim.entries[0].j == 1);
  CHECK(sim.entries[1].i == 1);
  CHECK(sim.entries[1].j == 2);
  CHECK(sim.entries[2].i == 0);
  CHECK(sim.entries[2].j == 2);
}

TEST_CASE("distinct distances sort as expected") {
  // 1-D fingerprints at 0, 1, 3: d(0,1)=1, d(0,2)=3, d(1,2)=2.
  std::vector<LayerFingerprint> fps(3);
  fps[0].vec = {0.0f};
  fps[1].vec = {1.0f};
  fps[2].vec = {3.0f};
  const DistanceRanking dis = rank_pairs(fps, PairOrdering::kDissimilar, 0);
  CHECK(dis.entries[0].j == 2);
  CHECK(dis.entries[0].i == 0);
  CHECK(dis.entries[1].i == 1);
  CHECK(dis.entries[1].j == 2);
  CHECK(dis.entries[2].i == 0);
  CHECK(dis.entries[2].j == 1);

  const DistanceRanking sim = rank_pairs(fps, PairOrdering::kSimilar, 0);
  for (size_t k = 0; k < 3; ++k) {
    CHECK(sim.entries[k].i == dis.entries[2 - k].i);
    CHECK(sim.entries[k].j == dis.entries[2 - k].j);
  }
}

TEST_CASE("random ordering is a seeded permutation") {
  std::vector<LayerFingerprint> fps(6);
  for (size_t l = 0; l < fps.size(); ++l) fps[l].vec = {static_cast<float>(l * l)};
  const DistanceRanking a = rank_pairs(fps, PairOrdering::kRandom, 77);
  const DistanceRanking b = rank_pairs(fps, PairOrdering::kRandom, 77);
  REQUIRE(a.entries.size() == 15);
  for (size_t k = 0; k < a.entries.size(); ++k) {
    CHECK(a.entries[k].i == b.entries[k].i);
    CHECK(a.entries[k].j == b.entries[k].j);
  }
  // Contains every unordered pair exactly once.
  std::vector<std::pair<int, int>> seen;
  for (const RankedPair& p : a.entries) {
    CHECK(p.i < p.j);
    seen.emplace_back(p.i, p.j);
  }
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
}

TEST_CASE("output_similarity of the empty strategy is exactly one") {
  const ModelConfig cfg = testutil::tiny_config(3);
  const Model model = testutil::make_random_model(cfg, 131);
  const CalibrationSet calib = make_calib(2, 8, cfg.vocab_size, 132);
  CHECK(output_similarity(model, {}, calib) == 1.0);
}

TEST_CASE("zero final norm gain degenerates similarity to zero") {
  const ModelConfig cfg = testutil::tiny_config(3);
  ModelWeights w = testutil::make_random_weights(cfg, 141);
  for (float& v : w.final_norm.data()) v = 0.0f;
  const Model model(cfg, std::move(w));
  const CalibrationSet calib = make_calib(2, 8, cfg.vocab_size, 142);
  CHECK(output_similarity(model, SharingStrategy{{{2, 0}}}, calib) == 0.0);
}

TEST_CASE("output_similarity matches an independent pooling pipeline") {
  const ModelConfig cfg = testutil::tiny_config(4);
  const Model model = testutil::make_random_model(cfg, 151);
  const CalibrationSet calib = make_calib(3, 9, cfg.vocab_size, 152);
  const SharingStrategy strategy{{{3, 1}}};

  auto pooled = [&](const SharingStrategy& z) {
    std::vector<double> acc(static_cast<size_t>(cfg.d_model), 0.0);
    for (const auto& seq : calib.sequences) {
      KvCacheSet caches(cfg, z);
      const Tensor hidden = forward_hidden(model, seq, caches, z);
      for (int64_t d = 0; d < cfg.d_model; ++d) {
        double m = 0.0;
        for (int64_t t = 0; t < hidden.extent(0); ++t) m += hidden.at(t, d);
        acc[static_cast<size_t>(d)] += m / static_cast<double>(hidden.extent(0));
      }
    }
    for (double& v : acc) v /= static_cast<double>(calib.rows());
    return acc;
  };
  const std::vector<double> base = pooled({});
  const std::vector<double> shared = pooled(strategy);
  double ab = 0, aa = 0, bb = 0;
  for (size_t i = 0; i < base.size(); ++i) {
    ab += base[i] * shared[i];
    aa += base[i] * base[i];
    bb += shared[i] * shared[i];
  }
  const double want = ab / (std::sqrt(aa) * std::sqrt(bb));
  CHECK(output_similarity(model, strategy, calib) == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("search with C=0 returns the empty strategy without evaluating") {
  const ModelConfig cfg = testutil::tiny_config(4);
  const Model model = testutil::make_random_model(cfg, 161);
  const CalibrationSet calib = make_calib(2, 8, cfg.vocab_size, 162);
  SearchConfig config;
  config.target_shared_layers = 0;
  const SearchResult r = search_strategy(model, calib, config);
  CHECK(r.success);
  CHECK(r.strategy.empty());
  CHECK(r.evaluations == 0);
  CHECK(r.achieved_similarity == 1.0);
}

TEST_CASE("unreachable threshold fails with an empty partial strategy") {
  const ModelConfig cfg = testutil::tiny_config(4);
  const Model model = testutil::make_random_model(cfg, 171);
  const CalibrationSet calib = make_calib(2, 8, cfg.vocab_size, 172);
  SearchConfig config;
  config.target_shared_layers = 1;
  config.threshold = 1.0;  // cosine cannot strictly exceed 1
  const SearchResult r = search_strategy(model, calib, config);
  CHECK_FALSE(r.success);
  CHECK(r.strategy.empty());
  CHECK(r.evaluations == 6);  // every pair tried
  CHECK(r.last_similarity <= 1.0);
}

TEST_CASE("C=1 search picks the first ranked pair that clears the gate") {
  const ModelConfig cfg = testutil::tiny_config(4);
  const Model model = testutil::make_random_model(cfg, 181);
  const CalibrationSet calib = make_calib(3, 10, cfg.vocab_size, 182);
  SearchConfig config;
  config.target_shared_layers = 1;
  config.threshold = 0.5;

  // Exhaustive oracle: similarity of every oriented pair.
  const auto fps = compute_fingerprints(model, calib);
  const DistanceRanking ranking = rank_pairs(fps, PairOrdering::kDissimilar, 0);
  SharingStrategy expected;
  double expected_sim = 0.0;
  for (const RankedPair& p : ranking.entries) {
    const SharingStrategy candidate{{{p.j, p.i}}};
    const double s = output_similarity(model, candidate, calib);
    if (s > config.threshold) {
      expected = candidate;
      expected_sim = s;
      break;
    }
  }

  const SearchResult r = search_strategy(model, calib, config);
  if (expected.empty()) {
    CHECK_FALSE(r.success);
  } else {
    REQUIRE(r.success);
    CHECK(r.strategy.pairs[0].target == expected.pairs[0].target);
    CHECK(r.strategy.pairs[0].source == expected.pairs[0].source);
    CHECK(r.achieved_similarity == doctest::Approx(expected_sim).epsilon(1e-9));
  }
}

TEST_CASE("search results satisfy every strategy invariant") {
  std::mt19937_64 rng(191);
  for (int iter = 0; iter < 6; ++iter) {
    const int64_t L = 4 + static_cast<int64_t>(bounded_uint(rng, 3));
    const ModelConfig cfg = testutil::tiny_config(L);
    const Model model = testutil::make_random_model(cfg, 200 + static_cast<uint64_t>(iter));
    const CalibrationSet calib = make_calib(2, 8, cfg.vocab_size, 300 + iter);
    SearchConfig config;
    config.target_shared_layers = 1 + static_cast<int64_t>(bounded_uint(rng, 2));
    config.threshold = 0.5;
    config.ordering = iter % 2 == 0 ? PairOrdering::kDissimilar : PairOrdering::kRandom;
    config.rng_seed = static_cast<uint64_t>(iter);

    const SearchResult r = search_strategy(model, calib, config);
    CHECK_NOTHROW(r.strategy.validate(L));
    CHECK(r.evaluations <= L * (L - 1) / 2);
    if (r.success) {
      CHECK(r.strategy.size() == config.target_shared_layers);
      CHECK(output_similarity(model, r.strategy, calib) > config.threshold);
    } else {
      CHECK(r.strategy.size() < config.target_shared_layers);
    }
  }
}

TEST_CASE("random_strategy is valid and deterministic") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const SharingStrategy a = random_strategy(8, 3, seed);
    const SharingStrategy b = random_strategy(8, 3, seed);
    CHECK(a.size() == 3);
    CHECK_NOTHROW(a.validate(8));
    REQUIRE(a.size() == b.size());
    for (int64_t i = 0; i < a.size(); ++i) {
      CHECK(a.pairs[static_cast<size_t>(i)].target == b.pairs[static_cast<size_t>(i)].target);
      CHECK(a.pairs[static_cast<size_t>(i)].source == b.pairs[static_cast<size_t>(i)].source);
    }
  }
}
