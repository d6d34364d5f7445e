#include "kvshare/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "kvshare/rng.hpp"

namespace kvshare {

static_assert(std::endian::native == std::endian::little,
              "the weight container assumes a little-endian host");

using nlohmann::json;

std::vector<TokenId> tokenize_bytes(std::string_view text) {
  std::vector<TokenId> out;
  out.reserve(text.size() + 1);
  out.push_back(kBosToken);
  for (unsigned char c : text) out.push_back(static_cast<TokenId>(c));
  return out;
}

std::string detokenize(std::span<const TokenId> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t >= 0 && t < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

std::vector<TokenId> tokenize_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open corpus file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return tokenize_bytes(ss.str());
}

void CalibrationSet::validate() const {
  if (sequences.empty()) throw InputError("calibration set is empty");
  const size_t len = sequences.front().size();
  if (len == 0) throw InputError("calibration rows must be non-empty");
  for (const auto& row : sequences) {
    if (row.size() != len) {
      throw InputError("calibration rows must all have the same length");
    }
  }
}

CalibrationSet sample_windows(std::span<const TokenId> tokens, int64_t rows, int64_t row_len,
                              uint64_t seed, std::string source_tag) {
  if (rows < 1 || row_len < 1) throw InputError("rows and row_len must be >= 1");
  const int64_t available = static_cast<int64_t>(tokens.size()) / row_len;
  if (available < rows) {
    throw InputError("corpus too small: " + std::to_string(tokens.size()) + " tokens yield " +
                     std::to_string(available) + " windows of " + std::to_string(row_len) +
                     ", need " + std::to_string(rows));
  }
  std::mt19937_64 rng(seed);
  const std::vector<int64_t> picks = sample_distinct(available, rows, rng);
  CalibrationSet set;
  set.source = std::move(source_tag);
  set.sequences.reserve(static_cast<size_t>(rows));
  for (int64_t w : picks) {
    const TokenId* base = tokens.data() + w * row_len;
    set.sequences.emplace_back(base, base + row_len);
  }
  set.validate();
  return set;
}

CalibrationSet load_calibration(const std::filesystem::path& corpus, int64_t rows,
                                int64_t row_len, uint64_t seed) {
  const std::vector<TokenId> tokens = tokenize_file(corpus);
  const std::string tag = corpus.string() + "#rows=" + std::to_string(rows) +
                          ",len=" + std::to_string(row_len) + ",seed=" + std::to_string(seed);
  return sample_windows(tokens, rows, row_len, seed, tag);
}

std::string fnv1a_hex(std::span<const uint8_t> bytes) {
  uint64_t h = 14695981039346656037ull;
  for (uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

std::string hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open file for hashing: " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return fnv1a_hex(bytes);
}

namespace {

// Canonical tensor naming shared by save and load.
std::vector<std::string> tensor_names(const ModelConfig& c) {
  std::vector<std::string> names;
  names.push_back("tok_embedding");
  for (int64_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    for (const char* part :
         {"attn_norm", "wq", "wk", "wv", "wo", "mlp_norm", "w_gate", "w_up", "w_down"}) {
      names.push_back(p + part);
    }
  }
  names.push_back("final_norm");
  names.push_back("output_head");
  return names;
}

Tensor* tensor_by_name(ModelWeights& w, const ModelConfig& c, const std::string& name) {
  if (name == "tok_embedding") return &w.tok_embedding;
  if (name == "final_norm") return &w.final_norm;
  if (name == "output_head") return &w.output_head;
  if (name.rfind("layers.", 0) == 0) {
    const size_t dot = name.find('.', 7);
    if (dot == std::string::npos) return nullptr;
    const int64_t l = std::stoll(name.substr(7, dot - 7));
    if (l < 0 || l >= c.n_layers) return nullptr;
    LayerWeights& lw = w.layers[static_cast<size_t>(l)];
    const std::string part = name.substr(dot + 1);
    if (part == "attn_norm") return &lw.attn_norm;
    if (part == "wq") return &lw.wq;
    if (part == "wk") return &lw.wk;
    if (part == "wv") return &lw.wv;
    if (part == "wo") return &lw.wo;
    if (part == "mlp_norm") return &lw.mlp_norm;
    if (part == "w_gate") return &lw.w_gate;
    if (part == "w_up") return &lw.w_up;
    if (part == "w_down") return &lw.w_down;
  }
  return nullptr;
}

const Tensor* tensor_by_name(const ModelWeights& w, const ModelConfig& c,
                             const std::string& name) {
  return tensor_by_name(const_cast<ModelWeights&>(w), c, name);
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int64_t>();
  c.d_model = j.at("d_model").get<int64_t>();
  c.n_heads = j.at("n_heads").get<int64_t>();
  c.n_kv_heads = j.at("n_kv_heads").get<int64_t>();
  c.d_head = j.at("d_head").get<int64_t>();
  c.d_ff = j.at("d_ff").get<int64_t>();
  c.vocab_size = j.at("vocab_size").get<int64_t>();
  c.max_seq = j.at("max_seq").get<int64_t>();
  c.rope_theta = j.value("rope_theta", 10000.0f);
  c.norm_eps = j.value("norm_eps", 1e-5f);
  return c;
}

json config_to_json(const ModelConfig& c) {
  return json{{"n_layers", c.n_layers},   {"d_model", c.d_model},
              {"n_heads", c.n_heads},     {"n_kv_heads", c.n_kv_heads},
              {"d_head", c.d_head},       {"d_ff", c.d_ff},
              {"vocab_size", c.vocab_size}, {"max_seq", c.max_seq},
              {"rope_theta", c.rope_theta}, {"norm_eps", c.norm_eps}};
}

struct ModelPaths {
  std::filesystem::path weights;
  std::filesystem::path config;
};

ModelPaths resolve_model_paths(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    return {path / "weights.bin", path / "config.json"};
  }
  return {path, path.parent_path() / "config.json"};
}

}  // namespace

Model load_model(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  const ModelPaths paths = resolve_model_paths(path);

  std::ifstream cfg_in(paths.config);
  if (!cfg_in) throw LoadError("missing config sidecar: " + paths.config.string());
  json cfg_json;
  try {
    cfg_in >> cfg_json;
  } catch (const json::exception& e) {
    throw LoadError("config sidecar is not valid JSON: " + std::string(e.what()));
  }
  const ModelConfig config = config_from_json(cfg_json);
  config.validate();

  std::ifstream in(paths.weights, std::ios::binary);
  if (!in) throw LoadError("cannot open weight container: " + paths.weights.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw LoadError("weight container truncated before header length");
  uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data(), 8);
  if (8 + header_len > bytes.size()) {
    throw LoadError("weight container header length " + std::to_string(header_len) +
                    " exceeds file size");
  }
  json header;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<int64_t>(header_len));
  } catch (const json::exception& e) {
    throw LoadError("corrupt container header: " + std::string(e.what()));
  }
  const uint8_t* body = bytes.data() + 8 + header_len;
  const uint64_t body_len = bytes.size() - 8 - header_len;

  const std::vector<std::string> expected = tensor_names(config);
  std::string missing, extra;
  for (const std::string& name : expected) {
    if (!header.contains(name)) missing += (missing.empty() ? "" : ", ") + name;
  }
  for (const auto& [name, entry] : header.items()) {
    if (std::find(expected.begin(), expected.end(), name) == expected.end()) {
      extra += (extra.empty() ? "" : ", ") + name;
    }
  }
  if (!missing.empty() || !extra.empty()) {
    throw LoadError("container tensor set mismatch" +
                    (missing.empty() ? std::string() : "; missing: " + missing) +
                    (extra.empty() ? std::string() : "; extra: " + extra));
  }

  struct Extent {
    uint64_t offset, length;
    std::string name;
  };
  std::vector<Extent> extents;
  ModelWeights weights;
  weights.layers.resize(static_cast<size_t>(config.n_layers));
  for (const std::string& name : expected) {
    const json& entry = header.at(name);
    const std::string dtype = entry.at("dtype").get<std::string>();
    if (dtype != "f32") {
      throw LoadError("tensor " + name + " has unsupported dtype '" + dtype + "' (want f32)");
    }
    const std::vector<int64_t> shape = entry.at("shape").get<std::vector<int64_t>>();
    const uint64_t offset = entry.at("offset").get<uint64_t>();
    const uint64_t length = entry.at("length").get<uint64_t>();
    int64_t numel = 1;
    for (int64_t e : shape) numel *= e;
    if (length != static_cast<uint64_t>(numel) * sizeof(float)) {
      throw LoadError("tensor " + name + " length does not match its shape");
    }
    if (offset + length > body_len) {
      throw LoadError("tensor " + name + " extends past the container body");
    }
    extents.push_back({offset, length, name});
    std::vector<float> data(static_cast<size_t>(numel));
    std::memcpy(data.data(), body + offset, length);
    *tensor_by_name(weights, config, name) = Tensor(shape, std::move(data));
  }
  std::sort(extents.begin(), extents.end(),
            [](const Extent& a, const Extent& b) { return a.offset < b.offset; });
  for (size_t i = 1; i < extents.size(); ++i) {
    if (extents[i - 1].offset + extents[i - 1].length > extents[i].offset) {
      throw LoadError("tensors " + extents[i - 1].name + " and " + extents[i].name +
                      " overlap in the container body");
    }
  }

  Model model(config, std::move(weights));
  model.set_weights_hash(fnv1a_hex(bytes));
  return model;
}

void save_model(const std::filesystem::path& dir, const Model& model) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const ModelConfig& config = model.config();

  {
    std::ofstream out(dir / "config.json");
    if (!out) throw LoadError("cannot write config sidecar in " + dir.string());
    out << config_to_json(config).dump(2) << "\n";
  }

  const std::vector<std::string> names = tensor_names(config);
  json header = json::object();
  uint64_t offset = 0;
  for (const std::string& name : names) {
    const Tensor* t = tensor_by_name(model.weights(), config, name);
    const uint64_t length = static_cast<uint64_t>(t->numel()) * sizeof(float);
    header[name] = {{"dtype", "f32"}, {"shape", t->shape()}, {"offset", offset},
                    {"length", length}};
    offset += length;
  }
  const std::string header_str = header.dump();
  const uint64_t header_len = header_str.size();

  std::ofstream out(dir / "weights.bin", std::ios::binary);
  if (!out) throw LoadError("cannot write weight container in " + dir.string());
  out.write(reinterpret_cast<const char*>(&header_len), 8);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const std::string& name : names) {
    const Tensor* t = tensor_by_name(model.weights(), config, name);
    out.write(reinterpret_cast<const char*>(t->data().data()),
              static_cast<std::streamsize>(t->numel() * sizeof(float)));
  }
  if (!out) throw LoadError("short write while saving weight container");
}

void save_strategy(const std::filesystem::path& path, const StrategyFile& file) {
  json pairs = json::array();
  for (const SharingPair& p : file.strategy.pairs) {
    pairs.push_back(json::array({p.target, p.source}));
  }
  const json j{{"model_hash", file.model_hash},
               {"L", file.n_layers},
               {"C", file.target_shared_layers},
               {"T", file.threshold},
               {"ordering", file.ordering},
               {"seed", file.seed},
               {"pairs", pairs},
               {"fingerprint_combine", file.fingerprint_combine},
               {"achieved_similarity", file.achieved_similarity}};
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write strategy file: " + path.string());
  out << j.dump(2) << "\n";
}

StrategyFile load_strategy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open strategy file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError("strategy file is not valid JSON: " + std::string(e.what()));
  }
  StrategyFile file;
  file.model_hash = j.at("model_hash").get<std::string>();
  file.n_layers = j.at("L").get<int64_t>();
  file.target_shared_layers = j.at("C").get<int64_t>();
  file.threshold = j.at("T").get<double>();
  file.ordering = j.at("ordering").get<std::string>();
  file.seed = j.at("seed").get<uint64_t>();
  file.fingerprint_combine = j.value("fingerprint_combine", "mean");
  file.achieved_similarity = j.value("achieved_similarity", 1.0);
  for (const auto& p : j.at("pairs")) {
    file.strategy.pairs.push_back(
        {p.at(0).get<int32_t>(), p.at(1).get<int32_t>()});
  }
  file.strategy.validate(file.n_layers);
  return file;
}

}  // namespace kvshare
