// Command-line front end: strategy search, perplexity, generation, ordering
// comparison and a memory/latency bench over one model checkpoint.
//
// Exit codes: 0 success, 1 usage or I/O error, 2 search gate failure.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kvshare/eval.hpp"
#include "kvshare/io.hpp"
#include "kvshare/model.hpp"
#include "kvshare/search.hpp"

namespace {

using namespace kvshare;
using nlohmann::json;

int64_t resolve_target_layers(std::optional<int64_t> layers, std::optional<double> rate,
                              int64_t n_layers) {
  if (layers && rate) throw InputError("give either --layers or --rate, not both");
  if (!layers && !rate) throw InputError("one of --layers or --rate is required");
  int64_t c = 0;
  if (layers) {
    c = *layers;
  } else {
    if (*rate < 0.0 || *rate >= 1.0) throw InputError("--rate must be in [0, 1)");
    c = static_cast<int64_t>(std::floor(*rate * static_cast<double>(n_layers) + 0.5));
  }
  if (c < 0 || c >= n_layers) {
    throw InputError("target shared layers " + std::to_string(c) + " outside [0, " +
                     std::to_string(n_layers) + ")");
  }
  return c;
}

SharingStrategy strategy_from_file(const std::string& path, const Model& model) {
  if (path.empty()) return {};
  const StrategyFile file = load_strategy(path);
  if (file.n_layers != model.config().n_layers) {
    throw InputError("strategy file was searched on a model with " +
                     std::to_string(file.n_layers) + " layers");
  }
  if (!file.model_hash.empty() && !model.weights_hash().empty() &&
      file.model_hash != model.weights_hash()) {
    std::cerr << "warning: strategy file hash " << file.model_hash
              << " does not match model hash " << model.weights_hash() << "\n";
  }
  return file.strategy;
}

CompressorConfig compressor_from_flags(int64_t heavy, int64_t recent) {
  CompressorConfig cfg;
  cfg.enabled = heavy > 0 && recent > 0;  // 0 disables
  if (cfg.enabled) {
    cfg.heavy_hitters = heavy;
    cfg.recent = recent;
  }
  cfg.validate();
  return cfg;
}

int cmd_search(const std::string& model_path, const std::string& corpus,
               std::optional<int64_t> layers, std::optional<double> rate, double threshold,
               const std::string& ordering, uint64_t seed, int64_t calib_rows,
               int64_t calib_len, const std::string& out_path) {
  const Model model = load_model(model_path);
  const int64_t c = resolve_target_layers(layers, rate, model.config().n_layers);
  const CalibrationSet calib = load_calibration(corpus, calib_rows, calib_len, seed);

  SearchConfig config;
  config.target_shared_layers = c;
  config.threshold = threshold;
  config.ordering = ordering_from_name(ordering);
  config.rng_seed = seed;
  const SearchResult result = search_strategy(model, calib, config);

  StrategyFile file;
  file.model_hash = model.weights_hash();
  file.n_layers = model.config().n_layers;
  file.target_shared_layers = c;
  file.threshold = threshold;
  file.ordering = ordering;
  file.seed = seed;
  file.strategy = result.strategy;
  file.achieved_similarity = result.achieved_similarity;
  save_strategy(out_path, file);

  std::cout << "search: " << (result.success ? "ok" : "gate failure") << ", |Z|="
            << result.strategy.size() << "/" << c << ", similarity="
            << result.achieved_similarity << ", evaluations=" << result.evaluations << "\n";
  if (!result.success) {
    std::cerr << "gate failure: ranking exhausted at |Z|=" << result.strategy.size()
              << " (last candidate similarity " << result.last_similarity << ")\n";
    return 2;
  }
  return 0;
}

int cmd_ppl(const std::string& model_path, const std::string& data, const std::string& strategy,
            int64_t rows, int64_t len, uint64_t seed, int64_t heavy, int64_t recent) {
  const Model model = load_model(model_path);
  const SharingStrategy z = strategy_from_file(strategy, model);
  const CalibrationSet eval_set = load_calibration(data, rows, len, seed);
  const CompressorConfig compressor = compressor_from_flags(heavy, recent);
  EvalReport report;
  report.ppl = perplexity(model, eval_set.sequences, z, compressor);
  report.strategy_id = strategy.empty() ? "none" : strategy;
  std::cout << report_json_line(report) << "\n";
  return 0;
}

int cmd_generate(const std::string& model_path, const std::string& prompt, int64_t max_new,
                 const std::string& strategy, int64_t heavy, int64_t recent) {
  const Model model = load_model(model_path);
  const SharingStrategy z = strategy_from_file(strategy, model);
  const CompressorConfig compressor = compressor_from_flags(heavy, recent);
  const std::vector<TokenId> prompt_tokens = tokenize_bytes(prompt);
  GenerateResult result = generate(model, prompt_tokens, max_new, z, compressor);
  result.report.strategy_id = strategy.empty() ? "none" : strategy;
  if (!strategy.empty()) {
    result.report.candidate_similarity = load_strategy(strategy).achieved_similarity;
  }
  std::cout << detokenize(result.tokens) << "\n";
  std::cout << report_json_line(result.report) << "\n";
  return 0;
}

int cmd_compare(const std::string& model_path, const std::string& corpus,
                const std::string& eval_data, std::optional<int64_t> layers,
                std::optional<double> rate, double threshold, int64_t calib_rows,
                int64_t calib_len, int64_t eval_rows, int64_t eval_len,
                const std::vector<uint64_t>& seeds, const std::string& out_path) {
  const Model model = load_model(model_path);
  const int64_t c = resolve_target_layers(layers, rate, model.config().n_layers);

  CalibrationSource source;
  source.tokens = tokenize_file(corpus);
  source.rows = calib_rows;
  source.row_len = calib_len;
  source.tag = corpus;
  const CalibrationSet eval_set = load_calibration(eval_data, eval_rows, eval_len, /*seed=*/0);

  const OrderingTable table =
      compare_orderings(model, source, eval_set.sequences, c, threshold, seeds);
  const std::string text = table.to_json();
  if (out_path.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream out(out_path);
    if (!out) throw InputError("cannot write " + out_path);
    out << text << "\n";
    std::cout << "wrote " << out_path << "\n";
  }
  for (const OrderingRow& row : table.rows) {
    if (!row.ok) return 2;
  }
  return 0;
}

int cmd_bench(const std::string& model_path, const std::string& strategy, int64_t in_len,
              int64_t out_len, int64_t heavy, int64_t recent) {
  const Model model = load_model(model_path);
  const SharingStrategy z = strategy_from_file(strategy, model);
  const CompressorConfig compressor = compressor_from_flags(heavy, recent);
  if (in_len < 1 || out_len < 1 ||
      in_len + out_len > model.config().max_seq) {
    throw CapacityError("in_len + out_len must fit in max_seq = " +
                        std::to_string(model.config().max_seq));
  }

  // Deterministic synthetic prompt so the bench needs no corpus.
  std::vector<TokenId> prompt(static_cast<size_t>(in_len));
  for (int64_t i = 0; i < in_len; ++i) {
    prompt[static_cast<size_t>(i)] = static_cast<TokenId>(32 + (i * 7) % 95);
  }

  // Median of 3 runs per configuration.
  auto run_config = [&](const SharingStrategy& s, const CompressorConfig& comp) {
    std::vector<EvalReport> reports;
    for (int run = 0; run < 3; ++run) {
      reports.push_back(generate(model, prompt, out_len, s, comp).report);
    }
    std::sort(reports.begin(), reports.end(), [](const EvalReport& a, const EvalReport& b) {
      return a.tokens_per_second < b.tokens_per_second;
    });
    EvalReport median = reports[1];
    std::vector<double> prefills = {reports[0].prefill_seconds, reports[1].prefill_seconds,
                                    reports[2].prefill_seconds};
    std::sort(prefills.begin(), prefills.end());
    median.prefill_seconds = prefills[1];
    return median;
  };

  const EvalReport base = run_config(SharingStrategy{}, CompressorConfig{});
  const EvalReport shared = run_config(z, compressor);

  json j;
  j["seq"] = std::to_string(in_len) + "+" + std::to_string(out_len);
  j["baseline"] = {{"kv_bytes_peak", base.kv_bytes_peak},
                   {"prefill_seconds", base.prefill_seconds},
                   {"generation_tokens_per_second", base.tokens_per_second}};
  j["strategy"] = {{"kv_bytes_peak", shared.kv_bytes_peak},
                   {"prefill_seconds", shared.prefill_seconds},
                   {"generation_tokens_per_second", shared.tokens_per_second}};
  j["ratios"] = {{"kv_bytes", static_cast<double>(shared.kv_bytes_peak) /
                                  static_cast<double>(base.kv_bytes_peak)},
                 {"prefill", shared.prefill_seconds / base.prefill_seconds},
                 {"generation_speedup", shared.tokens_per_second / base.tokens_per_second}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layer-wise KV-cache sharing engine"};
  app.require_subcommand(1);

  std::string model_path, corpus, data, strategy, prompt, out_path, ordering = "dissimilar";
  std::optional<int64_t> layers;
  std::optional<double> rate;
  double threshold = 0.5;
  uint64_t seed = 0;
  int64_t calib_rows = 30, calib_len = 64;
  int64_t eval_rows = 16, eval_len = 256;
  int64_t max_new = 64, in_len = 128, out_len = 128;
  int64_t heavy = 0, recent = 0;
  std::vector<uint64_t> seeds;

  CLI::App* search = app.add_subcommand("search", "search a cache sharing strategy");
  search->add_option("--model", model_path)->required();
  search->add_option("--corpus", corpus, "calibration corpus (UTF-8 text)")->required();
  search->add_option("--layers", layers, "target shared layers C");
  search->add_option("--rate", rate, "compression rate; C = round(rate * L)");
  search->add_option("--threshold", threshold, "similarity gate T");
  search->add_option("--ordering", ordering, "dissimilar | similar | random");
  search->add_option("--seed", seed);
  search->add_option("--calib-rows", calib_rows);
  search->add_option("--calib-len", calib_len);
  search->add_option("--out", out_path, "strategy JSON output")->required();

  CLI::App* ppl = app.add_subcommand("ppl", "teacher-forced perplexity");
  ppl->add_option("--model", model_path)->required();
  ppl->add_option("--data", data, "evaluation corpus")->required();
  ppl->add_option("--strategy", strategy, "strategy JSON (empty = full cache)");
  ppl->add_option("--rows", eval_rows);
  ppl->add_option("--len", eval_len);
  ppl->add_option("--seed", seed);
  ppl->add_option("--h2o-heavy", heavy, "heavy-hitter budget (0 disables)");
  ppl->add_option("--h2o-recent", recent, "recent window (0 disables)");

  CLI::App* gen = app.add_subcommand("generate", "greedy generation");
  gen->add_option("--model", model_path)->required();
  gen->add_option("--prompt", prompt)->required();
  gen->add_option("--max-new", max_new);
  gen->add_option("--strategy", strategy);
  gen->add_option("--h2o-heavy", heavy);
  gen->add_option("--h2o-recent", recent);

  CLI::App* compare = app.add_subcommand("compare", "ordering ablation table");
  compare->add_option("--model", model_path)->required();
  compare->add_option("--corpus", corpus, "calibration corpus")->required();
  compare->add_option("--eval-data", data, "held-out corpus")->required();
  compare->add_option("--layers", layers);
  compare->add_option("--rate", rate);
  compare->add_option("--threshold", threshold);
  compare->add_option("--calib-rows", calib_rows);
  compare->add_option("--calib-len", calib_len);
  compare->add_option("--eval-rows", eval_rows);
  compare->add_option("--eval-len", eval_len);
  compare->add_option("--seeds", seeds, "search/draw seeds")->expected(-1);
  compare->add_option("--out", out_path, "table JSON output");

  CLI::App* bench = app.add_subcommand("bench", "memory, prefill time, generation speed");
  bench->add_option("--model", model_path)->required();
  bench->add_option("--strategy", strategy);
  bench->add_option("--in-len", in_len);
  bench->add_option("--out-len", out_len);
  bench->add_option("--h2o-heavy", heavy);
  bench->add_option("--h2o-recent", recent);

  CLI11_PARSE(app, argc, argv);

  try {
    if (search->parsed()) {
      return cmd_search(model_path, corpus, layers, rate, threshold, ordering, seed, calib_rows,
                        calib_len, out_path);
    }
    if (ppl->parsed()) {
      return cmd_ppl(model_path, data, strategy, eval_rows, eval_len, seed, heavy, recent);
    }
    if (gen->parsed()) {
      return cmd_generate(model_path, prompt, max_new, strategy, heavy, recent);
    }
    if (compare->parsed()) {
      if (seeds.empty()) seeds = {0, 1, 2, 3, 4};
      return cmd_compare(model_path, corpus, data, layers, rate, threshold, calib_rows,
                         calib_len, eval_rows, eval_len, seeds, out_path);
    }
    if (bench->parsed()) {
      return cmd_bench(model_path, strategy, in_len, out_len, heavy, recent);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
