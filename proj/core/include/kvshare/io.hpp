#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kvshare/kv_cache.hpp"
#include "kvshare/model.hpp"

namespace kvshare {

// Byte-level tokenizer: token id == byte value, plus BOS/EOS specials.
inline constexpr TokenId kBosToken = 256;
inline constexpr TokenId kEosToken = 257;
inline constexpr int64_t kByteVocab = 258;

// Prepends BOS; every byte maps to its own id.
std::vector<TokenId> tokenize_bytes(std::string_view text);
// Inverse, dropping special tokens.
std::string detokenize(std::span<const TokenId> tokens);

// Whole file through tokenize_bytes.
std::vector<TokenId> tokenize_file(const std::filesystem::path& path);

// Equal-length token rows used for strategy search and evaluation.
struct CalibrationSet {
  std::vector<std::vector<TokenId>> sequences;
  std::string source;

  int64_t rows() const { return static_cast<int64_t>(sequences.size()); }
  int64_t row_len() const { return sequences.empty() ? 0 : static_cast<int64_t>(sequences[0].size()); }
  void validate() const;  // InputError when ragged or empty
};

// Seeded draw of `rows` distinct non-overlapping windows of row_len tokens.
CalibrationSet sample_windows(std::span<const TokenId> tokens, int64_t rows, int64_t row_len,
                              uint64_t seed, std::string source_tag);

CalibrationSet load_calibration(const std::filesystem::path& corpus, int64_t rows = 30,
                                int64_t row_len = 64, uint64_t seed = 0);

// Weight container: 8-byte little-endian header length, JSON header mapping
// tensor name -> {dtype, shape, offset, length}, then the raw fp32 payload.
// A config.json sidecar holds the ModelConfig.
Model load_model(const std::filesystem::path& path);
void save_model(const std::filesystem::path& dir, const Model& model);

// Searched strategy with enough context to reproduce it.
struct StrategyFile {
  std::string model_hash;
  int64_t n_layers = 0;
  int64_t target_shared_layers = 0;  // C
  double threshold = 0.5;            // T
  std::string ordering = "dissimilar";
  uint64_t seed = 0;
  SharingStrategy strategy;
  std::string fingerprint_combine = "mean";
  double achieved_similarity = 1.0;
};

void save_strategy(const std::filesystem::path& path, const StrategyFile& file);
StrategyFile load_strategy(const std::filesystem::path& path);

// FNV-1a 64-bit as a 16-char hex string.
std::string fnv1a_hex(std::span<const uint8_t> bytes);
std::string hash_file(const std::filesystem::path& path);

}  // namespace kvshare
