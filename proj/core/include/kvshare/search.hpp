#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvshare/io.hpp"
#include "kvshare/kv_cache.hpp"
#include "kvshare/model.hpp"

namespace kvshare {

// One layer's calibration-averaged K/V representation: keys and values are
// averaged over sentences, flattened, and combined by elementwise mean into
// a vector of length n_kv_heads * calib_len * d_head.
struct LayerFingerprint {
  std::vector<float> vec;
};

enum class PairOrdering { kDissimilar, kSimilar, kRandom };

std::string ordering_name(PairOrdering o);
PairOrdering ordering_from_name(const std::string& name);  // InputError on unknown

struct RankedPair {
  int32_t i = 0;  // i < j
  int32_t j = 0;
  float distance = 0.0f;
};

// All L(L-1)/2 unordered layer pairs, sorted per the ordering mode.
struct DistanceRanking {
  std::vector<RankedPair> entries;
};

struct SearchConfig {
  int64_t target_shared_layers = 0;  // C
  double threshold = 0.5;            // T
  PairOrdering ordering = PairOrdering::kDissimilar;
  uint64_t rng_seed = 0;
};

// Runs the calibration set through the unmodified model and distills each
// layer's cache into a fingerprint.
std::vector<LayerFingerprint> compute_fingerprints(const Model& model,
                                                   const CalibrationSet& calib);

// dissimilar: distance descending; similar: ascending; random: seeded
// shuffle. Ties break on (i, j) lexicographic order.
DistanceRanking rank_pairs(const std::vector<LayerFingerprint>& fingerprints,
                           PairOrdering ordering, uint64_t seed);

// Cosine similarity between the pooled final hidden states of the original
// model and the strategy-applied model over the calibration set. Pooling:
// mean over token positions per sentence, then mean over sentences.
double output_similarity(const Model& model, const SharingStrategy& strategy,
                         const CalibrationSet& calib);

struct SearchResult {
  bool success = false;
  SharingStrategy strategy;          // complete on success, best partial otherwise
  double achieved_similarity = 1.0;  // similarity of the returned strategy
  double last_similarity = 1.0;      // last candidate evaluated (diagnostics)
  int64_t evaluations = 0;           // gate evaluations performed
};

// Greedy gated search down the pair ranking. Each pair (i, j), i < j, is
// oriented target=j <- source=i; pairs that would retarget a layer or form
// a chain are skipped; a tentative pair is kept only while the pooled
// output similarity stays above config.threshold. Stops as soon as
// target_shared_layers pairs are accepted.
SearchResult search_strategy(const Model& model, const CalibrationSet& calib,
                             const SearchConfig& config);

// Arbitrary valid strategy with no similarity gate (baseline for comparing
// against searched strategies).
SharingStrategy random_strategy(int64_t n_layers, int64_t count, uint64_t seed);

}  // namespace kvshare
