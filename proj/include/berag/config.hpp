#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "berag/decoder.hpp"
#include "berag/training.hpp"

namespace berag {

/// Plain-text `key = value` settings. Blank lines and lines starting with '#' are ignored.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& source = "config") {
    KeyValueConfig out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto text = trim(line);
      if (text.empty() || text.front() == '#') continue;
      const auto eq = text.find('=');
      if (eq == std::string::npos)
        throw UsageError(source + ":" + std::to_string(line_no) + ": expected key = value");
      const auto key = trim(text.substr(0, eq));
      if (key.empty()) throw UsageError(source + ":" + std::to_string(line_no) + ": empty key");
      out.values_[key] = trim(text.substr(eq + 1));
    }
    return out;
  }

  static KeyValueConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config " + path);
    return parse(in, path);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string text(const std::string& key) const { return values_.at(key); }

  double real(const std::string& key) const {
    const auto& v = values_.at(key);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw UsageError("config key '" + key + "': not a number: " + v);
    }
  }

  std::uint64_t integer(const std::string& key) const {
    const auto& v = values_.at(key);
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
      throw UsageError("config key '" + key + "': not a non-negative integer: " + v);
    return out;
  }

  bool boolean(const std::string& key) const {
    const auto& v = values_.at(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw UsageError("config key '" + key + "': not a boolean: " + v);
  }

  /// Every key/value in sorted order, one per line; stable input for hashing.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

inline Optimizer optimizer_from_string(const std::string& s) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "adam") return Optimizer::adam;
  throw UsageError("unknown optimizer '" + s + "'");
}

inline std::string to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }

/// Overrides the fields of `config` named in `kv`; unknown keys are rejected.
inline void apply(const KeyValueConfig& kv, TrainConfig& config) {
  for (const auto& [key, value] : kv.values()) {
    if (key == "k_train") config.k_train = kv.integer(key);
    else if (key == "epochs") config.epochs = kv.integer(key);
    else if (key == "batch_size") config.batch_size = kv.integer(key);
    else if (key == "backbone_lr") config.backbone_lr = kv.real(key);
    else if (key == "prior_head_lr") config.prior_head_lr = kv.real(key);
    else if (key == "null_doc_augmentation_rate") config.null_doc_augmentation_rate = kv.real(key);
    else if (key == "include_null_doc") config.include_null_doc = kv.boolean(key);
    else if (key == "include_prior_loss") config.include_prior_loss = kv.boolean(key);
    else if (key == "prior_loss_weight") config.prior_loss_weight = kv.real(key);
    else if (key == "optimizer") config.optimizer = optimizer_from_string(value);
    else if (key == "append_eos") config.append_eos = kv.boolean(key);
    else if (key == "seed") config.seed = kv.integer(key);
    else if (key == "threads") config.threads = kv.integer(key);
    else throw UsageError("unknown training config key '" + key + "'");
  }
  config.validate();
}

inline void apply(const KeyValueConfig& kv, DecodeConfig& config) {
  for (const auto& [key, value] : kv.values()) {
    if (key == "max_new_tokens") config.max_new_tokens = kv.integer(key);
    else if (key == "top_p_pruning") config.top_p_pruning = kv.boolean(key);
    else if (key == "include_null_doc") config.include_null_doc = kv.boolean(key);
    else if (key == "deflection") config.deflection = kv.boolean(key);
    else if (key == "eos") config.eos = static_cast<Token>(kv.integer(key));
    else if (key == "context_limit") config.context_limit = kv.integer(key);
    else throw UsageError("unknown decode config key '" + key + "'");
  }
  config.validate();
}

}  // namespace berag
