#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvshare/compress.hpp"
#include "kvshare/io.hpp"
#include "kvshare/kv_cache.hpp"
#include "kvshare/model.hpp"

namespace kvshare {

struct EvalReport {
  std::optional<double> ppl;
  uint64_t kv_bytes_peak = 0;
  double prefill_seconds = 0.0;
  double tokens_per_second = 0.0;
  std::optional<double> candidate_similarity;
  std::string strategy_id;
};

// One JSON object per line, for machine-readable result logs.
std::string report_json_line(const EvalReport& report);

// Teacher-forced perplexity: exp of the negative mean token log-probability,
// natural log, pooled per token across sequences. With the compressor
// enabled the sequence is fed stepwise and eviction runs after every step.
double perplexity(const Model& model, const std::vector<std::vector<TokenId>>& sequences,
                  const SharingStrategy& strategy, const CompressorConfig& compressor = {});

struct GenerateResult {
  std::vector<TokenId> tokens;  // continuation only
  EvalReport report;
};

// Greedy decoding (argmax, ties to the lowest token id). The report carries
// peak cache bytes and generation-phase tokens/second; prefill is timed
// separately.
GenerateResult generate(const Model& model, std::span<const TokenId> prompt, int64_t max_new,
                        const SharingStrategy& strategy, const CompressorConfig& compressor = {});

// Token stream plus window parameters for per-seed calibration draws.
struct CalibrationSource {
  std::vector<TokenId> tokens;
  int64_t rows = 30;
  int64_t row_len = 64;
  std::string tag;
};

struct OrderingRow {
  std::string ordering;
  uint64_t seed = 0;
  bool ok = false;
  double ppl = 0.0;
  double similarity = 0.0;
  SharingStrategy strategy;
};

struct OrderingTable {
  int64_t target_shared_layers = 0;
  double threshold = 0.5;
  std::vector<OrderingRow> rows;

  // Median held-out perplexity over this ordering's successful rows.
  std::optional<double> median_ppl(const std::string& ordering) const;
  std::string to_json() const;
};

// Searches a strategy per (ordering, seed) with a fresh calibration draw
// per seed and evaluates each result on the held-out set. Failed searches
// become rows marked not-ok.
OrderingTable compare_orderings(const Model& model, const CalibrationSource& calib,
                                const std::vector<std::vector<TokenId>>& eval_set, int64_t C,
                                double T, std::span<const uint64_t> seeds);

}  // namespace kvshare
