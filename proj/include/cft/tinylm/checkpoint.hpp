#pragma once

// Text checkpoint: one JSON header line (format tag, version, model config,
// vocabulary, tensor shapes) followed by one line per tensor holding its
// values in round-trip decimal precision.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cft/core.hpp"
#include "cft/tinylm/model.hpp"
#include "cft/tokenizer.hpp"

namespace cft {

struct ToyCheckpoint {
  Model model;
  Vocab vocab;
};

inline constexpr const char* checkpoint_format = "cft-tinylm";
inline constexpr int checkpoint_version = 1;

inline json model_config_to_json(const ModelConfig& c) {
  json j;
  j["vocab_size"] = c.vocab_size;
  j["context_len"] = c.context_len;
  j["embed_dim"] = c.embed_dim;
  j["n_heads"] = c.n_heads;
  j["n_layers"] = c.n_layers;
  j["mlp_mult"] = c.mlp_mult;
  j["seed"] = c.seed;
  j["init_std"] = c.init_std;
  return j;
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.vocab_size = j.at("vocab_size").get<int>();
    c.context_len = j.at("context_len").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.mlp_mult = j.at("mlp_mult").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.init_std = j.at("init_std").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("bad model config: ") + e.what());
  }
  return c;
}

inline void save_checkpoint(const std::string& path, const Model& model, const Vocab& vocab) {
  if (vocab.size() != model.config().vocab_size) {
    throw DataError("vocabulary size does not match the model");
  }
  json header;
  header["format"] = checkpoint_format;
  header["version"] = checkpoint_version;
  header["config"] = model_config_to_json(model.config());
  header["vocab"] = vocab.entries();
  json shapes = json::array();
  for (const auto& s : model.slots()) shapes.push_back({{"name", s.name}, {"shape", {s.rows, s.cols}}});
  header["tensors"] = std::move(shapes);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << header.dump() << '\n';
  const auto params = model.params();
  char buf[32];
  for (const auto& s : model.slots()) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      auto res = std::to_chars(buf, buf + sizeof(buf), params[s.offset + i]);
      if (i) out << ' ';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
}

inline ToyCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty checkpoint");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": bad checkpoint header (" + e.what() + ")");
  }
  if (header.value("format", "") != checkpoint_format) throw DataError(path + ": not a toy-model checkpoint");
  if (header.value("version", 0) != checkpoint_version) {
    throw DataError(path + ": unsupported checkpoint version " + header.value("version", json()).dump());
  }
  const ModelConfig cfg = model_config_from_json(header.at("config"));
  Vocab vocab(header.at("vocab").get<std::vector<std::string>>());
  if (vocab.size() != cfg.vocab_size) throw DataError(path + ": vocabulary size does not match the config");
  Model shape_probe(cfg, std::vector<double>(Model(cfg).num_params()));
  const auto& expected = shape_probe.slots();
  const json& tensors = header.at("tensors");
  if (tensors.size() != expected.size()) throw DataError(path + ": tensor count mismatch");
  std::vector<double> params;
  params.reserve(shape_probe.num_params());
  for (std::size_t k = 0; k < expected.size(); ++k) {
    const auto& slot = expected[k];
    const auto& shape = tensors[k].at("shape");
    if (tensors[k].at("name").get<std::string>() != slot.name || shape.at(0).get<std::size_t>() != slot.rows ||
        shape.at(1).get<std::size_t>() != slot.cols) {
      throw DataError(path + ": tensor " + slot.name + " has an unexpected name or shape");
    }
    if (!std::getline(in, line)) throw DataError(path + ": truncated at tensor " + slot.name);
    const char* first = line.data();
    const char* last = line.data() + line.size();
    std::size_t count = 0;
    while (first < last) {
      while (first < last && *first == ' ') ++first;
      if (first == last) break;
      double v = 0.0;
      auto res = std::from_chars(first, last, v);
      if (res.ec != std::errc()) throw DataError(path + ": bad number in tensor " + slot.name);
      params.push_back(v);
      first = res.ptr;
      ++count;
    }
    if (count != slot.size()) throw DataError(path + ": tensor " + slot.name + " has the wrong number of values");
  }
  return {Model(cfg, std::move(params)), std::move(vocab)};
}

}  // namespace cft
