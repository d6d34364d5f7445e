#include "kvshare/eval.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>

#include "json.hpp"
#include "kvshare/parallel.hpp"
#include "kvshare/search.hpp"

namespace kvshare {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Stable log p(target | row) in double.
double log_prob(std::span<const float> logits, TokenId target) {
  float mx = logits[0];
  for (float v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - static_cast<double>(mx));
  const double lse = static_cast<double>(mx) + std::log(sum);
  return static_cast<double>(logits[static_cast<size_t>(target)]) - lse;
}

TokenId argmax_token(std::span<const float> logits) {
  TokenId best = 0;
  float best_v = logits[0];
  for (size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > best_v) {  // strict: ties keep the lowest id
      best_v = logits[i];
      best = static_cast<TokenId>(i);
    }
  }
  return best;
}

// Sum of next-token log-probs for one sequence.
double sequence_log_prob(const Model& model, std::span<const TokenId> seq,
                         const SharingStrategy& strategy, const CompressorConfig& compressor) {
  const int64_t len = static_cast<int64_t>(seq.size());
  KvCacheSet caches(model.config(), strategy);
  double total = 0.0;
  if (!compressor.enabled) {
    const Tensor logits = forward_prefill(model, seq, caches, strategy);
    for (int64_t t = 0; t + 1 < len; ++t) {
      total += log_prob(logits.row(t), seq[static_cast<size_t>(t + 1)]);
    }
    return total;
  }
  // Stepwise feed so eviction applies as the sequence is consumed.
  HeavyHitterCompressor hh(model.config(), compressor);
  Tensor logits = forward_prefill(model, seq.first(1), caches, strategy, &hh);
  hh.evict_all(caches);
  total += log_prob(logits.row(0), seq[1]);
  for (int64_t t = 1; t + 1 < len; ++t) {
    const Tensor step = decode_step(model, seq[static_cast<size_t>(t)], caches, strategy, &hh);
    hh.evict_all(caches);
    total += log_prob(step.data(), seq[static_cast<size_t>(t + 1)]);
  }
  return total;
}

}  // namespace

std::string report_json_line(const EvalReport& report) {
  json j;
  if (report.ppl) j["ppl"] = *report.ppl;
  j["kv_bytes_peak"] = report.kv_bytes_peak;
  j["prefill_seconds"] = report.prefill_seconds;
  j["tokens_per_second"] = report.tokens_per_second;
  if (report.candidate_similarity) j["candidate_similarity"] = *report.candidate_similarity;
  j["strategy_id"] = report.strategy_id;
  return j.dump();
}

double perplexity(const Model& model, const std::vector<std::vector<TokenId>>& sequences,
                  const SharingStrategy& strategy, const CompressorConfig& compressor) {
  if (sequences.empty()) throw InputError("perplexity needs at least one sequence");
  for (const auto& seq : sequences) {
    if (seq.size() < 2) throw InputError("perplexity sequences need length >= 2");
  }
  compressor.validate();
  const int64_t n = static_cast<int64_t>(sequences.size());
  std::vector<std::pair<double, int64_t>> per_seq(static_cast<size_t>(n));
  parallel_for_index(n, [&](int64_t i) {
    per_seq[static_cast<size_t>(i)] = {
        sequence_log_prob(model, sequences[static_cast<size_t>(i)], strategy, compressor),
        static_cast<int64_t>(sequences[static_cast<size_t>(i)].size()) - 1};
  });
  // Reduce in a canonical order so the result is bitwise independent of
  // both worker scheduling and the order sequences were passed in.
  std::sort(per_seq.begin(), per_seq.end(), [](const auto& a, const auto& b) {
    const uint64_t ba = std::bit_cast<uint64_t>(a.first);
    const uint64_t bb = std::bit_cast<uint64_t>(b.first);
    return ba != bb ? ba < bb : a.second < b.second;
  });
  double total = 0.0;
  int64_t count = 0;
  for (const auto& [sum, tokens] : per_seq) {
    total += sum;
    count += tokens;
  }
  return std::exp(-total / static_cast<double>(count));
}

GenerateResult generate(const Model& model, std::span<const TokenId> prompt, int64_t max_new,
                        const SharingStrategy& strategy, const CompressorConfig& compressor) {
  if (prompt.empty()) throw InputError("generate needs a non-empty prompt");
  if (max_new < 0) throw InputError("max_new must be >= 0");
  if (static_cast<int64_t>(prompt.size()) + max_new > model.config().max_seq) {
    throw CapacityError("prompt plus continuation exceeds max_seq");
  }
  compressor.validate();

  GenerateResult result;
  KvCacheSet caches(model.config(), strategy);
  HeavyHitterCompressor hh(model.config(), compressor);
  AttentionObserver* obs = compressor.enabled ? &hh : nullptr;

  const auto prefill_start = Clock::now();
  Tensor logits = forward_prefill(model, prompt, caches, strategy, obs);
  result.report.prefill_seconds = seconds_since(prefill_start);
  hh.evict_all(caches);
  result.report.kv_bytes_peak = kv_bytes(caches);

  std::vector<float> last(logits.row(logits.extent(0) - 1).begin(),
                          logits.row(logits.extent(0) - 1).end());
  const auto decode_start = Clock::now();
  for (int64_t i = 0; i < max_new; ++i) {
    const TokenId next = argmax_token(last);
    result.tokens.push_back(next);
    const Tensor step = decode_step(model, next, caches, strategy, obs);
    hh.evict_all(caches);
    result.report.kv_bytes_peak = std::max(result.report.kv_bytes_peak, kv_bytes(caches));
    last.assign(step.data().begin(), step.data().end());
  }
  const double decode_seconds = seconds_since(decode_start);
  result.report.tokens_per_second =
      (max_new > 0 && decode_seconds > 0.0) ? static_cast<double>(max_new) / decode_seconds : 0.0;
  return result;
}

std::optional<double> OrderingTable::median_ppl(const std::string& ordering) const {
  std::vector<double> values;
  for (const OrderingRow& row : rows) {
    if (row.ordering == ordering && row.ok) values.push_back(row.ppl);
  }
  if (values.empty()) return std::nullopt;
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string OrderingTable::to_json() const {
  json j;
  j["C"] = target_shared_layers;
  j["T"] = threshold;
  j["rows"] = json::array();
  for (const OrderingRow& row : rows) {
    json pairs = json::array();
    for (const SharingPair& p : row.strategy.pairs) {
      pairs.push_back(json::array({p.target, p.source}));
    }
    j["rows"].push_back({{"ordering", row.ordering},
                         {"seed", row.seed},
                         {"ok", row.ok},
                         {"ppl", row.ok ? json(row.ppl) : json()},
                         {"similarity", row.similarity},
                         {"pairs", pairs}});
  }
  j["medians"] = json::object();
  for (const char* name : {"dissimilar", "similar", "random"}) {
    const auto m = median_ppl(name);
    j["medians"][name] = m ? json(*m) : json();
  }
  return j.dump(2);
}

OrderingTable compare_orderings(const Model& model, const CalibrationSource& calib,
                                const std::vector<std::vector<TokenId>>& eval_set, int64_t C,
                                double T, std::span<const uint64_t> seeds) {
  if (C < 0 || C >= model.config().n_layers) {
    throw InputError("compare_orderings needs 0 <= C < n_layers");
  }
  OrderingTable table;
  table.target_shared_layers = C;
  table.threshold = T;
  for (const PairOrdering ordering :
       {PairOrdering::kDissimilar, PairOrdering::kSimilar, PairOrdering::kRandom}) {
    for (const uint64_t seed : seeds) {
      const CalibrationSet draw = sample_windows(calib.tokens, calib.rows, calib.row_len, seed,
                                                 calib.tag + "#seed=" + std::to_string(seed));
      SearchConfig config;
      config.target_shared_layers = C;
      config.threshold = T;
      config.ordering = ordering;
      config.rng_seed = seed;
      const SearchResult search = search_strategy(model, draw, config);
      OrderingRow row;
      row.ordering = ordering_name(ordering);
      row.seed = seed;
      row.ok = search.success;
      row.similarity = search.achieved_similarity;
      row.strategy = search.strategy;
      if (search.success) {
        row.ppl = perplexity(model, eval_set, search.strategy);
      }
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

}  // namespace kvshare
