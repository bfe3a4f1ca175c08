#include "replik/checkpoint.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

namespace replik {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "replik-checkpoint-v1";

json vocab_to_json(const GeneVocab& vocab) {
  json doc;
  auto dump = [&](GeneVocab::Family f, const char* key) {
    json arr = json::array();
    for (int id = 0; id < vocab.size(f); ++id) arr.push_back(vocab.name(f, id));
    doc[key] = std::move(arr);
  };
  dump(GeneVocab::Family::V, "v");
  dump(GeneVocab::Family::D, "d");
  dump(GeneVocab::Family::J, "j");
  return doc;
}

GeneVocab vocab_from_json(const json& doc) {
  GeneVocab vocab;
  auto fill = [&](GeneVocab::Family f, const char* key) {
    const auto& arr = doc.at(key);
    for (size_t i = 1; i < arr.size(); ++i) vocab.intern(f, arr[i].get<std::string>());
  };
  fill(GeneVocab::Family::V, "v");
  fill(GeneVocab::Family::D, "d");
  fill(GeneVocab::Family::J, "j");
  return vocab;
}

}  // namespace

void save_checkpoint(const ModelState& state, const GeneVocab& vocab,
                     std::optional<double> threshold, const std::filesystem::path& path) {
  json doc;
  doc["format"] = kFormat;
  json cfg;
  const ModelConfig& c = state.config;
  cfg["token_dim"] = c.token_dim;
  cfg["n_layers"] = c.n_layers;
  cfg["n_heads"] = c.n_heads;
  cfg["dropout"] = c.dropout;
  cfg["max_cdr3_len"] = c.max_cdr3_len;
  cfg["aa_vocab"] = c.aa_vocab;
  cfg["v_vocab"] = c.v_vocab;
  cfg["d_vocab"] = c.d_vocab;
  cfg["j_vocab"] = c.j_vocab;
  cfg["ffn_mult"] = c.ffn_mult;
  doc["config"] = std::move(cfg);
  doc["gene_vocab"] = vocab_to_json(vocab);
  if (threshold) doc["threshold"] = *threshold;
  doc["step"] = state.step;
  json params;
  for (const auto& e : state.layout.entries) {
    json arr = json::array();
    for (size_t i = 0; i < e.count(); ++i) arr.push_back(state.weights[e.offset + i]);
    params[e.name] = std::move(arr);
  }
  doc["params"] = std::move(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
  out << doc.dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  json doc = json::parse(ss.str());
  if (doc.value("format", "") != kFormat)
    throw std::runtime_error("'" + path.string() + "' is not a " + kFormat + " file");
  const auto& cfg = doc.at("config");
  ModelConfig c;
  c.token_dim = cfg.at("token_dim").get<int>();
  c.n_layers = cfg.at("n_layers").get<int>();
  c.n_heads = cfg.at("n_heads").get<int>();
  c.dropout = cfg.at("dropout").get<double>();
  c.max_cdr3_len = cfg.at("max_cdr3_len").get<int>();
  c.aa_vocab = cfg.at("aa_vocab").get<int>();
  c.v_vocab = cfg.at("v_vocab").get<int>();
  c.d_vocab = cfg.at("d_vocab").get<int>();
  c.j_vocab = cfg.at("j_vocab").get<int>();
  c.ffn_mult = cfg.at("ffn_mult").get<double>();

  Checkpoint ckpt;
  ckpt.state = init_params(c, 0);
  std::fill(ckpt.state.weights.begin(), ckpt.state.weights.end(), 0.0);
  ckpt.state.step = doc.value("step", int64_t{0});
  const auto& params = doc.at("params");
  for (const auto& e : ckpt.state.layout.entries) {
    const auto& arr = params.at(e.name);
    if (arr.size() != e.count())
      throw std::runtime_error("checkpoint tensor '" + e.name + "' has wrong size");
    for (size_t i = 0; i < e.count(); ++i)
      ckpt.state.weights[e.offset + i] = arr[i].get<double>();
  }
  ckpt.vocab = vocab_from_json(doc.at("gene_vocab"));
  if (ckpt.vocab.size(GeneVocab::Family::V) != c.v_vocab ||
      ckpt.vocab.size(GeneVocab::Family::D) != c.d_vocab ||
      ckpt.vocab.size(GeneVocab::Family::J) != c.j_vocab)
    throw std::runtime_error("checkpoint gene vocabulary does not match its model config");
  if (doc.contains("threshold")) ckpt.threshold = doc["threshold"].get<double>();
  return ckpt;
}

}  // namespace replik
