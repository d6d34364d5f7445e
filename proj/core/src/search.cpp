#include "kvshare/search.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "kvshare/parallel.hpp"
#include "kvshare/rng.hpp"
#include "kvshare/tensor.hpp"

namespace kvshare {

std::string ordering_name(PairOrdering o) {
  switch (o) {
    case PairOrdering::kDissimilar: return "dissimilar";
    case PairOrdering::kSimilar: return "similar";
    case PairOrdering::kRandom: return "random";
  }
  return "dissimilar";
}

PairOrdering ordering_from_name(const std::string& name) {
  if (name == "dissimilar") return PairOrdering::kDissimilar;
  if (name == "similar") return PairOrdering::kSimilar;
  if (name == "random") return PairOrdering::kRandom;
  throw InputError("unknown ordering '" + name + "' (want dissimilar, similar or random)");
}

std::vector<LayerFingerprint> compute_fingerprints(const Model& model,
                                                   const CalibrationSet& calib) {
  calib.validate();
  const ModelConfig& cfg = model.config();
  const int64_t n_rows = calib.rows();
  const int64_t flat = cfg.n_kv_heads * calib.row_len() * cfg.d_head;
  const SharingStrategy none;

  // Per-sentence K/V sums, reduced in sentence order afterwards.
  std::vector<std::vector<float>> k_per_row(static_cast<size_t>(n_rows));
  std::vector<std::vector<float>> v_per_row(static_cast<size_t>(n_rows));
  parallel_for_index(n_rows, [&](int64_t r) {
    KvCacheSet caches(cfg, none);
    forward_hidden(model, calib.sequences[static_cast<size_t>(r)], caches, none);
    std::vector<float>& ks = k_per_row[static_cast<size_t>(r)];
    std::vector<float>& vs = v_per_row[static_cast<size_t>(r)];
    ks.resize(static_cast<size_t>(cfg.n_layers * flat));
    vs.resize(static_cast<size_t>(cfg.n_layers * flat));
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
      const LayerKvCache& cache = caches.cache(l);
      float* kdst = ks.data() + l * flat;
      float* vdst = vs.data() + l * flat;
      for (int64_t h = 0; h < cfg.n_kv_heads; ++h) {
        for (int64_t p = 0; p < cache.len(); ++p) {
          const auto krow = cache.key_row(h, p);
          const auto vrow = cache.value_row(h, p);
          const int64_t base = (h * cache.len() + p) * cfg.d_head;
          std::copy(krow.begin(), krow.end(), kdst + base);
          std::copy(vrow.begin(), vrow.end(), vdst + base);
        }
      }
    }
  });

  const float inv_rows = 1.0f / static_cast<float>(n_rows);
  std::vector<LayerFingerprint> fps(static_cast<size_t>(cfg.n_layers));
  for (int64_t l = 0; l < cfg.n_layers; ++l) {
    std::vector<float> k_avg(static_cast<size_t>(flat), 0.0f);
    std::vector<float> v_avg(static_cast<size_t>(flat), 0.0f);
    for (int64_t r = 0; r < n_rows; ++r) {
      const float* ks = k_per_row[static_cast<size_t>(r)].data() + l * flat;
      const float* vs = v_per_row[static_cast<size_t>(r)].data() + l * flat;
      for (int64_t i = 0; i < flat; ++i) {
        k_avg[static_cast<size_t>(i)] += ks[i];
        v_avg[static_cast<size_t>(i)] += vs[i];
      }
    }
    std::vector<float>& vec = fps[static_cast<size_t>(l)].vec;
    vec.resize(static_cast<size_t>(flat));
    for (int64_t i = 0; i < flat; ++i) {
      const float k = k_avg[static_cast<size_t>(i)] * inv_rows;
      const float v = v_avg[static_cast<size_t>(i)] * inv_rows;
      vec[static_cast<size_t>(i)] = 0.5f * (k + v);
    }
  }
  return fps;
}

DistanceRanking rank_pairs(const std::vector<LayerFingerprint>& fingerprints,
                           PairOrdering ordering, uint64_t seed) {
  const int64_t L = static_cast<int64_t>(fingerprints.size());
  if (L < 2) throw InputError("pair ranking needs at least two layers");
  DistanceRanking ranking;
  ranking.entries.reserve(static_cast<size_t>(L * (L - 1) / 2));
  for (int32_t i = 0; i < L; ++i) {
    for (int32_t j = i + 1; j < L; ++j) {
      const float d = euclidean_distance(fingerprints[static_cast<size_t>(i)].vec,
                                         fingerprints[static_cast<size_t>(j)].vec);
      ranking.entries.push_back({i, j, d});
    }
  }
  auto lex_less = [](const RankedPair& a, const RankedPair& b) {
    return a.i != b.i ? a.i < b.i : a.j < b.j;
  };
  switch (ordering) {
    case PairOrdering::kDissimilar:
      std::sort(ranking.entries.begin(), ranking.entries.end(),
                [&](const RankedPair& a, const RankedPair& b) {
                  if (a.distance != b.distance) return a.distance > b.distance;
                  return lex_less(a, b);
                });
      break;
    case PairOrdering::kSimilar:
      std::sort(ranking.entries.begin(), ranking.entries.end(),
                [&](const RankedPair& a, const RankedPair& b) {
                  if (a.distance != b.distance) return a.distance < b.distance;
                  return lex_less(a, b);
                });
      break;
    case PairOrdering::kRandom: {
      std::mt19937_64 rng(seed);
      shuffle_inplace(std::span<RankedPair>(ranking.entries), rng);
      break;
    }
  }
  return ranking;
}

namespace {

// Mean over token positions per sentence, then mean over sentences.
std::vector<float> pooled_final_hidden(const Model& model, const SharingStrategy& strategy,
                                       const CalibrationSet& calib) {
  const ModelConfig& cfg = model.config();
  const int64_t n_rows = calib.rows();
  std::vector<std::vector<float>> per_row(static_cast<size_t>(n_rows));
  parallel_for_index(n_rows, [&](int64_t r) {
    KvCacheSet caches(cfg, strategy);
    const Tensor hidden =
        forward_hidden(model, calib.sequences[static_cast<size_t>(r)], caches, strategy);
    std::vector<float> mean(static_cast<size_t>(cfg.d_model), 0.0f);
    for (int64_t t = 0; t < hidden.extent(0); ++t) {
      const auto row = hidden.row(t);
      for (int64_t d = 0; d < cfg.d_model; ++d) mean[static_cast<size_t>(d)] += row[d];
    }
    const float inv = 1.0f / static_cast<float>(hidden.extent(0));
    for (float& v : mean) v *= inv;
    per_row[static_cast<size_t>(r)] = std::move(mean);
  });
  std::vector<float> pooled(static_cast<size_t>(cfg.d_model), 0.0f);
  for (int64_t r = 0; r < n_rows; ++r) {
    const std::vector<float>& mean = per_row[static_cast<size_t>(r)];
    for (int64_t d = 0; d < cfg.d_model; ++d) pooled[static_cast<size_t>(d)] += mean[d];
  }
  const float inv = 1.0f / static_cast<float>(n_rows);
  for (float& v : pooled) v *= inv;
  return pooled;
}

}  // namespace

double output_similarity(const Model& model, const SharingStrategy& strategy,
                         const CalibrationSet& calib) {
  calib.validate();
  strategy.validate(model.config().n_layers);
  if (strategy.empty()) return 1.0;  // identical models
  const std::vector<float> base = pooled_final_hidden(model, SharingStrategy{}, calib);
  const std::vector<float> shared = pooled_final_hidden(model, strategy, calib);
  return cosine_similarity(base, shared);
}

SearchResult search_strategy(const Model& model, const CalibrationSet& calib,
                             const SearchConfig& config) {
  const ModelConfig& cfg = model.config();
  if (config.target_shared_layers < 0 || config.target_shared_layers >= cfg.n_layers) {
    throw InputError("target shared layers must satisfy 0 <= C < n_layers");
  }
  SearchResult result;
  if (config.target_shared_layers == 0) {
    result.success = true;
    return result;
  }
  calib.validate();

  const std::vector<LayerFingerprint> fingerprints = compute_fingerprints(model, calib);
  const DistanceRanking ranking =
      rank_pairs(fingerprints, config.ordering, config.rng_seed);
  const std::vector<float> base = pooled_final_hidden(model, SharingStrategy{}, calib);

  std::vector<bool> is_target(static_cast<size_t>(cfg.n_layers), false);
  std::vector<bool> is_source(static_cast<size_t>(cfg.n_layers), false);
  SharingStrategy current;

  for (const RankedPair& pair : ranking.entries) {
    const int32_t target = pair.j;  // closer to the output
    const int32_t source = pair.i;
    if (is_target[static_cast<size_t>(target)] || is_source[static_cast<size_t>(target)] ||
        is_target[static_cast<size_t>(source)]) {
      continue;  // would retarget a layer or form a chain
    }
    current.pairs.push_back({target, source});
    const std::vector<float> shared = pooled_final_hidden(model, current, calib);
    const double s = cosine_similarity(base, shared);
    ++result.evaluations;
    result.last_similarity = s;
    if (s > config.threshold) {
      is_target[static_cast<size_t>(target)] = true;
      is_source[static_cast<size_t>(source)] = true;
      result.achieved_similarity = s;
      if (current.size() == config.target_shared_layers) {
        result.success = true;
        result.strategy = std::move(current);
        return result;
      }
    } else {
      current.pairs.pop_back();
    }
  }
  // Ranking exhausted before reaching the target count.
  result.success = false;
  result.strategy = std::move(current);
  return result;
}

SharingStrategy random_strategy(int64_t n_layers, int64_t count, uint64_t seed) {
  if (count < 0 || count >= n_layers) {
    throw InputError("random strategy needs 0 <= count < n_layers");
  }
  std::mt19937_64 rng(seed);
  SharingStrategy strategy;
  std::vector<bool> is_target(static_cast<size_t>(n_layers), false);
  std::vector<bool> is_source(static_cast<size_t>(n_layers), false);
  int64_t guard = 0;
  while (strategy.size() < count) {
    if (++guard > 100000) {
      throw InputError("could not sample a valid random strategy of size " +
                       std::to_string(count));
    }
    const int32_t target =
        static_cast<int32_t>(1 + bounded_uint(rng, static_cast<uint64_t>(n_layers - 1)));
    const int32_t source = static_cast<int32_t>(bounded_uint(rng, static_cast<uint64_t>(target)));
    if (is_target[static_cast<size_t>(target)] || is_source[static_cast<size_t>(target)] ||
        is_target[static_cast<size_t>(source)]) {
      continue;
    }
    strategy.pairs.push_back({target, source});
    is_target[static_cast<size_t>(target)] = true;
    is_source[static_cast<size_t>(source)] = true;
  }
  strategy.validate(n_layers);
  return strategy;
}

}  // namespace kvshare
