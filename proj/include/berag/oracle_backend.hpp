#pragma once

#include <algorithm>
#include <cmath>

#include "berag/backend.hpp"
#include "berag/vocab.hpp"

namespace berag {

struct OracleConfig {
  std::size_t vocab_size = 64;
  /// Probability mass spread over the V-1 non-gold tokens.
  double epsilon = 0.05;
  /// Number of leading tokens shared by a query and the fact document answering it.
  std::size_t key_length = 2;
  std::size_t max_doc_length = 32;
  Token eos = vocab::kEos;
  Token terminator = vocab::kSep;
};

/// Deterministic scorer that knows the fact-document layout
///   [key_1 .. key_n, value_1 .. value_m, terminator, filler...]
/// A document answers a query when its key matches the query's first
/// key_length tokens. Given such a document and a history that is a prefix of
/// value + [eos], the next gold token gets mass 1 - epsilon; every other case
/// yields the uniform distribution.
class OracleBackend final : public ScorerBackend {
 public:
  explicit OracleBackend(OracleConfig config = {}) : config_(config) {
    if (config_.vocab_size < 2) throw UsageError("oracle: vocabulary must have at least two tokens");
    if (config_.epsilon < 0.0 || config_.epsilon >= 1.0) throw UsageError("oracle: epsilon must lie in [0, 1)");
    if (config_.max_doc_length == 0) throw UsageError("oracle: max_doc_length must be positive");
  }

  const OracleConfig& config() const noexcept { return config_; }
  std::string kind() const override { return "oracle"; }
  std::size_t vocab_size() const override { return config_.vocab_size; }
  std::size_t embedding_dim() const override { return 3; }
  std::unique_ptr<ScorerBackend> clone() const override { return std::make_unique<OracleBackend>(*this); }

  /// True when `doc` carries the fact the query asks for.
  bool answers(const Query& query, const Document& doc) const {
    if (doc.is_null || query.tokens.size() < config_.key_length || doc.tokens.size() < config_.key_length)
      return false;
    return std::equal(query.tokens.begin(), query.tokens.begin() + static_cast<std::ptrdiff_t>(config_.key_length),
                      doc.tokens.begin());
  }

  /// Fraction of key positions on which query and document agree.
  double match_score(const Query& query, const Document& doc) const {
    if (doc.is_null || config_.key_length == 0) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < config_.key_length; ++i)
      if (i < query.tokens.size() && i < doc.tokens.size() && query.tokens[i] == doc.tokens[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(config_.key_length);
  }

  /// value tokens followed by eos, read from the document.
  std::vector<Token> continuation(const Document& doc) const {
    std::vector<Token> out;
    for (std::size_t i = config_.key_length; i < doc.tokens.size() && doc.tokens[i] != config_.terminator; ++i)
      out.push_back(doc.tokens[i]);
    out.push_back(config_.eos);
    return out;
  }

 protected:
  LogDistribution do_next_token_logdist(const Query& query, const Document& doc,
                                        std::span<const Token> history) const override {
    return LogDistribution(log_probs(query, doc, history));
  }

  SummaryEmbedding do_summary_embedding(const Query& query, const Document& doc) const override {
    return SummaryEmbedding{features(query, doc)};
  }

  ad::Var do_next_token_logprobs(ad::Tape& tape, const Query& query, const Document& doc,
                                 std::span<const Token> history) const override {
    return tape.constant(log_probs(query, doc, history));
  }

  ad::Var do_summary(ad::Tape& tape, const Query& query, const Document& doc) const override {
    return tape.constant(features(query, doc));
  }

 private:
  std::vector<double> features(const Query& query, const Document& doc) const {
    const double len = std::min(1.0, static_cast<double>(doc.tokens.size()) /
                                         static_cast<double>(config_.max_doc_length));
    return {match_score(query, doc), len, doc.is_null ? 1.0 : 0.0};
  }

  std::vector<double> log_probs(const Query& query, const Document& doc, std::span<const Token> history) const {
    const auto v = static_cast<double>(config_.vocab_size);
    std::vector<double> out(config_.vocab_size, -std::log(v));
    if (!answers(query, doc)) return out;
    const auto gold = continuation(doc);
    if (history.size() >= gold.size() || !std::equal(history.begin(), history.end(), gold.begin())) return out;
    const double eps = config_.epsilon;
    std::fill(out.begin(), out.end(), eps > 0.0 ? std::log(eps / (v - 1.0)) : kNegInf);
    out[gold[history.size()]] = std::log1p(-eps);
    return out;
  }

  OracleConfig config_;
};

}  // namespace berag
