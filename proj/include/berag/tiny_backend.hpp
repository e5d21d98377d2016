#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "berag/backend.hpp"

namespace berag {

struct TinyConfig {
  std::size_t vocab_size = 64;
  std::size_t dim = 16;
  /// Position-weight table sizes; positions past the end share the last weight.
  std::size_t max_query_positions = 8;
  std::size_t max_doc_positions = 64;
  std::size_t max_history_positions = 8;
  /// Decoding steps with their own copy weights; later steps reuse the last row.
  std::size_t max_steps = 8;
  double init_scale = 0.5;
  std::uint64_t seed = 42;
};

/// Small trainable scorer.
///
/// Position-weighted averages of token embeddings summarize the query, the
/// document and the recent history. The summary embedding mixes query,
/// document and their elementwise product. The next-token head adds a tied
/// copy score (embedding table times a step-specific document average) to a
/// linear readout of a tanh hidden layer.
class TinyBackend final : public ScorerBackend {
 public:
  explicit TinyBackend(TinyConfig config = {}) : config_(config) {
    const std::size_t v = config_.vocab_size, d = config_.dim;
    if (v < 2 || d == 0) throw UsageError("tiny backend: vocab_size >= 2 and dim >= 1 required");
    if (config_.max_query_positions == 0 || config_.max_doc_positions == 0 ||
        config_.max_history_positions == 0 || config_.max_steps == 0)
      throw UsageError("tiny backend: position tables must be non-empty");

    std::mt19937_64 rng(config_.seed);
    auto gaussian = [&](std::string id, ad::Shape shape, double stddev) {
      std::normal_distribution<double> normal(0.0, stddev);
      ad::Parameter p(std::move(id), shape);
      for (double& x : p.value) x = normal(rng);
      params_.add(std::move(p));
    };
    auto filled = [&](std::string id, ad::Shape shape, double value) {
      params_.add(ad::Parameter(std::move(id), shape, std::vector<double>(shape.size(), value)));
    };
    const double s = config_.init_scale;
    const double sd = std::sqrt(static_cast<double>(d));
    gaussian("tiny.embed", {v, d}, s);
    filled("tiny.query_pos", {config_.max_query_positions, 1}, 0.5);
    filled("tiny.doc_pos", {config_.max_doc_positions, 1}, 0.1);
    gaussian("tiny.copy_pos", {config_.max_steps, config_.max_doc_positions}, 0.1);
    filled("tiny.hist_pos", {config_.max_history_positions, 1}, 0.5);
    gaussian("tiny.summary_w", {d, 3 * d}, s / sd);
    filled("tiny.summary_b", {d, 1}, 0.0);
    gaussian("tiny.hidden_w", {d, 4 * d}, s / sd);
    filled("tiny.hidden_b", {d, 1}, 0.0);
    gaussian("tiny.out_w", {v, d}, s / sd);
    filled("tiny.out_b", {v, 1}, 0.0);
  }

  TinyBackend(const TinyBackend&) = default;
  TinyBackend& operator=(const TinyBackend&) = default;

  const TinyConfig& config() const noexcept { return config_; }
  std::string kind() const override { return "tiny"; }
  std::size_t vocab_size() const override { return config_.vocab_size; }
  std::size_t embedding_dim() const override { return config_.dim; }
  std::unique_ptr<ScorerBackend> clone() const override { return std::make_unique<TinyBackend>(*this); }
  ad::ParameterSet* parameters() override { return &params_; }
  const ad::ParameterSet* parameters() const override { return &params_; }

 protected:
  ad::Var do_summary(ad::Tape& tape, const Query& query, const Document& doc) const override {
    // The empty passage carries no evidence, so its summary ignores the query
    // and its prior logit acts as a learned threshold.
    if (doc.tokens.empty()) return ad::tanh(p(tape, "tiny.summary_b"));
    auto hq = query_summary(tape, query);
    auto hd = doc_summary(tape, doc);
    auto features = ad::concat({hq, hd, hq * hd});
    return ad::tanh(ad::matvec(p(tape, "tiny.summary_w"), features) + p(tape, "tiny.summary_b"));
  }

  ad::Var do_next_token_logprobs(ad::Tape& tape, const Query& query, const Document& doc,
                                 std::span<const Token> history) const override {
    const std::size_t d = config_.dim;
    auto embed = p(tape, "tiny.embed");
    auto hq = query_summary(tape, query);
    auto e = do_summary(tape, query, doc);

    ad::Var copy = zeros(tape, d);
    if (!doc.tokens.empty()) {
      const std::size_t step = std::min(history.size(), config_.max_steps - 1);
      std::vector<std::size_t> idx(doc.tokens.size());
      for (std::size_t i = 0; i < idx.size(); ++i)
        idx[i] = step * config_.max_doc_positions + std::min(i, config_.max_doc_positions - 1);
      auto weights = ad::gather(p(tape, "tiny.copy_pos"), idx);
      copy = ad::vecmat(weights, ad::gather_rows(embed, as_indices(doc.tokens)));
    }

    ad::Var hist = zeros(tape, d);
    if (!history.empty()) {
      std::vector<std::size_t> idx(history.size());
      for (std::size_t i = 0; i < idx.size(); ++i)
        idx[i] = std::min(history.size() - 1 - i, config_.max_history_positions - 1);
      auto weights = ad::gather(p(tape, "tiny.hist_pos"), idx);
      hist = ad::vecmat(weights, ad::gather_rows(embed, as_indices(history)));
    }

    auto hidden = ad::tanh(ad::matvec(p(tape, "tiny.hidden_w"), ad::concat({copy, hq, hist, e})) +
                           p(tape, "tiny.hidden_b"));
    auto logits = ad::matvec(p(tape, "tiny.out_w"), hidden) + p(tape, "tiny.out_b") + ad::matvec(embed, copy);
    return ad::log_softmax(logits);
  }

 private:
  ad::Var p(ad::Tape& tape, std::string_view id) const { return tape.param(params_.get(id)); }

  static ad::Var zeros(ad::Tape& tape, std::size_t n) { return tape.constant(std::vector<double>(n, 0.0)); }

  static std::vector<std::size_t> as_indices(std::span<const Token> tokens) {
    return {tokens.begin(), tokens.end()};
  }

  ad::Var weighted_average(ad::Tape& tape, std::span<const Token> tokens, std::string_view table,
                           std::size_t table_size) const {
    std::vector<std::size_t> idx(tokens.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = std::min(i, table_size - 1);
    auto weights = ad::gather(p(tape, table), idx);
    return ad::vecmat(weights, ad::gather_rows(p(tape, "tiny.embed"), as_indices(tokens)));
  }

  ad::Var query_summary(ad::Tape& tape, const Query& query) const {
    return weighted_average(tape, query.tokens, "tiny.query_pos", config_.max_query_positions);
  }

  ad::Var doc_summary(ad::Tape& tape, const Document& doc) const {
    if (doc.tokens.empty()) return zeros(tape, config_.dim);
    return weighted_average(tape, doc.tokens, "tiny.doc_pos", config_.max_doc_positions);
  }

  TinyConfig config_;
  ad::ParameterSet params_;
};

}  // namespace berag
