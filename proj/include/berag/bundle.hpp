#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include <json.hpp>

#include "berag/backend.hpp"
#include "berag/oracle_backend.hpp"
#include "berag/tiny_backend.hpp"

namespace berag {

/// A scorer plus its document prior head.
struct ModelBundle {
  std::unique_ptr<ScorerBackend> backend;
  PriorHead prior_head;

  ModelBundle() = default;
  ModelBundle(std::unique_ptr<ScorerBackend> b, PriorHead head) : backend(std::move(b)), prior_head(std::move(head)) {}
  ModelBundle(ModelBundle&&) = default;
  ModelBundle& operator=(ModelBundle&&) = default;
  ModelBundle(const ModelBundle& other)
      : backend(other.backend ? other.backend->clone() : nullptr), prior_head(other.prior_head) {}
  ModelBundle& operator=(const ModelBundle& other) {
    if (this != &other) {
      backend = other.backend ? other.backend->clone() : nullptr;
      prior_head = other.prior_head;
    }
    return *this;
  }
};

/// Tiny backend with a randomly initialized head of matching width.
inline ModelBundle make_tiny_bundle(const TinyConfig& config, double head_scale = 1.0) {
  auto backend = std::make_unique<TinyBackend>(config);
  auto head = PriorHead::random(config.dim, config.seed + 1, Activation::tanh, head_scale);
  return ModelBundle(std::move(backend), std::move(head));
}

/// Oracle backend with a head that scores `scale * match_score`.
inline ModelBundle make_oracle_bundle(const OracleConfig& config, double scale = 10.0) {
  PriorHead head(3, Activation::identity);
  auto& w1 = head.parameters().get("prior.w1");
  for (std::size_t i = 0; i < 3; ++i) w1.at(i, i) = 1.0;
  head.parameters().get("prior.w2").value[0] = scale;
  return ModelBundle(std::make_unique<OracleBackend>(config), std::move(head));
}

namespace checkpoint {

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kFormatName = "berag-checkpoint";

inline nlohmann::json parameters_to_json(const ad::ParameterSet& params) {
  auto arr = nlohmann::json::array();
  for (const auto& p : params.items())
    arr.push_back({{"id", p.id}, {"shape", {p.shape.rows, p.shape.cols}}, {"values", p.value}});
  return arr;
}

/// Overwrites `params` from JSON; ids and shapes must match exactly.
inline void parameters_from_json(const nlohmann::json& arr, ad::ParameterSet& params) {
  if (!arr.is_array() || arr.size() != params.items().size())
    throw CheckpointError("checkpoint: parameter list does not match the model");
  for (const auto& entry : arr) {
    const auto id = entry.at("id").get<std::string>();
    auto* p = params.find(id);
    if (p == nullptr) throw CheckpointError("checkpoint: unexpected parameter " + id);
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[0] != p->shape.rows || shape[1] != p->shape.cols)
      throw CheckpointError("checkpoint: shape mismatch for " + id);
    auto values = entry.at("values").get<std::vector<double>>();
    if (values.size() != p->size()) throw CheckpointError("checkpoint: value count mismatch for " + id);
    p->value = std::move(values);
  }
}

inline nlohmann::json to_json(const ModelBundle& bundle) {
  nlohmann::json backend;
  backend["kind"] = bundle.backend->kind();
  if (const auto* tiny = dynamic_cast<const TinyBackend*>(bundle.backend.get())) {
    const auto& c = tiny->config();
    backend["config"] = {{"vocab_size", c.vocab_size},
                         {"dim", c.dim},
                         {"max_query_positions", c.max_query_positions},
                         {"max_doc_positions", c.max_doc_positions},
                         {"max_history_positions", c.max_history_positions},
                         {"max_steps", c.max_steps},
                         {"init_scale", c.init_scale},
                         {"seed", c.seed}};
    backend["parameters"] = parameters_to_json(*tiny->parameters());
  } else if (const auto* oracle = dynamic_cast<const OracleBackend*>(bundle.backend.get())) {
    const auto& c = oracle->config();
    backend["config"] = {{"vocab_size", c.vocab_size}, {"epsilon", c.epsilon},   {"key_length", c.key_length},
                         {"max_doc_length", c.max_doc_length}, {"eos", c.eos}, {"terminator", c.terminator}};
  } else {
    throw UsageError("checkpoint: unsupported backend kind " + bundle.backend->kind());
  }
  return {{"format", kFormatName},
          {"format_version", kFormatVersion},
          {"backend", backend},
          {"prior_head",
           {{"dim", bundle.prior_head.dim()},
            {"activation", to_string(bundle.prior_head.activation())},
            {"parameters", parameters_to_json(bundle.prior_head.parameters())}}}};
}

inline ModelBundle from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kFormatName) throw CheckpointError("checkpoint: unknown format");
    const int version = j.at("format_version").get<int>();
    if (version != kFormatVersion)
      throw CheckpointError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kFormatVersion) + ")");
    const auto& b = j.at("backend");
    const auto kind = b.at("kind").get<std::string>();
    const auto& c = b.at("config");
    ModelBundle bundle;
    if (kind == "tiny") {
      TinyConfig tc;
      tc.vocab_size = c.at("vocab_size");
      tc.dim = c.at("dim");
      tc.max_query_positions = c.at("max_query_positions");
      tc.max_doc_positions = c.at("max_doc_positions");
      tc.max_history_positions = c.at("max_history_positions");
      tc.max_steps = c.at("max_steps");
      tc.init_scale = c.at("init_scale");
      tc.seed = c.at("seed");
      auto tiny = std::make_unique<TinyBackend>(tc);
      parameters_from_json(b.at("parameters"), *tiny->parameters());
      bundle.backend = std::move(tiny);
    } else if (kind == "oracle") {
      OracleConfig oc;
      oc.vocab_size = c.at("vocab_size");
      oc.epsilon = c.at("epsilon");
      oc.key_length = c.at("key_length");
      oc.max_doc_length = c.at("max_doc_length");
      oc.eos = c.at("eos");
      oc.terminator = c.at("terminator");
      bundle.backend = std::make_unique<OracleBackend>(oc);
    } else {
      throw CheckpointError("checkpoint: unknown backend kind " + kind);
    }
    const auto& h = j.at("prior_head");
    PriorHead head(h.at("dim").get<std::size_t>(), activation_from_string(h.at("activation").get<std::string>()));
    parameters_from_json(h.at("parameters"), head.parameters());
    if (head.dim() != bundle.backend->embedding_dim())
      throw CheckpointError("checkpoint: prior head width does not match backend embedding");
    bundle.prior_head = std::move(head);
    return bundle;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
}

/// Writes to a sibling temporary file, then renames it over `path`.
inline void save(const ModelBundle& bundle, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error("cannot write checkpoint " + path);
    out << to_json(bundle).dump() << '\n';
    if (!out) throw Error("cannot write checkpoint " + path);
  }
  std::filesystem::rename(tmp, path);
}

inline ModelBundle load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  return from_json(j);
}

}  // namespace checkpoint
}  // namespace berag
