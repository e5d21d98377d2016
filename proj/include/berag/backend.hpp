#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "berag/autodiff.hpp"
#include "berag/numerics.hpp"
#include "berag/types.hpp"

namespace berag {

/// Contract for a document-conditioned next-token model.
///
/// Scoring is const and safe to call from several threads at once; mutating
/// parameters (training, checkpoint loading) needs exclusive access.
/// Differentiable entry points take a tape: parameters enter through
/// `tape.param()` so gradients reach them.
class ScorerBackend {
 public:
  virtual ~ScorerBackend() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t embedding_dim() const = 0;
  virtual std::unique_ptr<ScorerBackend> clone() const = 0;

  /// Log-probabilities over the vocabulary for the next token.
  LogDistribution next_token_logdist(const Query& query, const Document& doc,
                                     std::span<const Token> history) const {
    validate(query, doc, history);
    return do_next_token_logdist(query, doc, history);
  }

  SummaryEmbedding summary_embedding(const Query& query, const Document& doc) const {
    validate(query, doc, {});
    return do_summary_embedding(query, doc);
  }

  /// Tape form of next_token_logdist: a vector of V log-probabilities.
  ad::Var next_token_logprobs(ad::Tape& tape, const Query& query, const Document& doc,
                              std::span<const Token> history) const {
    validate(query, doc, history);
    return do_next_token_logprobs(tape, query, doc, history);
  }

  /// Tape form of summary_embedding.
  ad::Var summary(ad::Tape& tape, const Query& query, const Document& doc) const {
    validate(query, doc, {});
    return do_summary(tape, query, doc);
  }

  virtual ad::ParameterSet* parameters() { return nullptr; }
  virtual const ad::ParameterSet* parameters() const { return nullptr; }

 protected:
  virtual ad::Var do_next_token_logprobs(ad::Tape& tape, const Query& query, const Document& doc,
                                         std::span<const Token> history) const = 0;
  virtual ad::Var do_summary(ad::Tape& tape, const Query& query, const Document& doc) const = 0;

  virtual LogDistribution do_next_token_logdist(const Query& query, const Document& doc,
                                                std::span<const Token> history) const {
    ad::Tape tape;
    auto v = do_next_token_logprobs(tape, query, doc, history);
    return LogDistribution(std::vector<double>(v.value().begin(), v.value().end()));
  }

  virtual SummaryEmbedding do_summary_embedding(const Query& query, const Document& doc) const {
    ad::Tape tape;
    auto v = do_summary(tape, query, doc);
    return SummaryEmbedding{std::vector<double>(v.value().begin(), v.value().end())};
  }

 private:
  void validate(const Query& query, const Document& doc, std::span<const Token> history) const {
    if (query.tokens.empty()) throw UsageError("query must be non-empty");
    doc.validate();
    const auto v = vocab_size();
    auto check = [v](std::span<const Token> toks, const char* what) {
      for (Token t : toks)
        if (t >= v) throw UsageError(std::string(what) + " token " + std::to_string(t) + " out of vocabulary");
    };
    check(query.tokens, "query");
    check(doc.tokens, "document");
    check(history, "history");
  }
};

enum class Activation { identity, tanh, relu };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
  }
  return "tanh";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw UsageError("unknown activation '" + s + "'");
}

/// Two-layer scoring head over a summary embedding:
///   s(e) = W2 * act(W1 * e + b1) + b2
class PriorHead {
 public:
  PriorHead() : PriorHead(1) {}

  /// Zero-initialized head of input width `dim`.
  explicit PriorHead(std::size_t dim, Activation act = Activation::tanh) : dim_(dim), act_(act) {
    if (dim == 0) throw UsageError("prior head dimension must be positive");
    params_.add(ad::Parameter("prior.w1", {dim, dim}));
    params_.add(ad::Parameter("prior.b1", {dim, 1}));
    params_.add(ad::Parameter("prior.w2", {1, dim}));
    params_.add(ad::Parameter("prior.b2", {1, 1}));
  }

  /// Gaussian init with standard deviation `scale / sqrt(dim)`; biases zero.
  static PriorHead random(std::size_t dim, std::uint64_t seed, Activation act = Activation::tanh,
                          double scale = 1.0) {
    PriorHead head(dim, act);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale / std::sqrt(static_cast<double>(dim)));
    for (auto* id : {"prior.w1", "prior.w2"})
      for (double& w : head.params_.get(id).value) w = normal(rng);
    return head;
  }

  std::size_t dim() const noexcept { return dim_; }
  Activation activation() const noexcept { return act_; }
  ad::ParameterSet& parameters() noexcept { return params_; }
  const ad::ParameterSet& parameters() const noexcept { return params_; }

  ad::Var logit(ad::Tape& tape, ad::Var e) const {
    if (e.size() != dim_) throw UsageError("prior head: embedding dimension mismatch");
    auto h = ad::matvec(tape.param(params_.get("prior.w1")), e) + tape.param(params_.get("prior.b1"));
    switch (act_) {
      case Activation::identity: break;
      case Activation::tanh: h = ad::tanh(h); break;
      case Activation::relu: h = ad::relu(h); break;
    }
    return ad::matvec(tape.param(params_.get("prior.w2")), h) + tape.param(params_.get("prior.b2"));
  }

  double prior_logit(const SummaryEmbedding& e) const {
    if (e.size() != dim_) throw UsageError("prior head: embedding dimension mismatch");
    ad::Tape tape;
    return logit(tape, tape.constant(e.values)).scalar();
  }

 private:
  std::size_t dim_;
  Activation act_;
  ad::ParameterSet params_;
};

/// Per-document prior logits in input order.
inline std::vector<double> prior_logits(const PriorHead& head, const ScorerBackend& backend,
                                        const Query& query, std::span<const Document> docs) {
  std::vector<double> logits;
  logits.reserve(docs.size());
  for (const auto& d : docs) logits.push_back(head.prior_logit(backend.summary_embedding(query, d)));
  return logits;
}

/// Softmax of per-document logits, normalized in canonical doc-id order and
/// returned in input order.
inline LogDistribution normalize_over_documents(std::span<const double> logits,
                                                std::span<const Document> docs) {
  if (logits.size() != docs.size()) throw UsageError("logit/document count mismatch");
  const auto order = canonical_order(docs);
  std::vector<double> canonical(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) canonical[i] = logits[order[i]];
  const auto normalized = normalize_logits(canonical);
  std::vector<double> out(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) out[order[i]] = normalized[i];
  return LogDistribution(std::move(out));
}

/// Document prior over the K retrieved documents.
inline LogDistribution prior_distribution(const PriorHead& head, const ScorerBackend& backend,
                                          const Query& query, std::span<const Document> docs) {
  if (docs.empty()) throw UsageError("prior_distribution: empty document list");
  const auto logits = prior_logits(head, backend, query, docs);
  return normalize_over_documents(logits, docs);
}

}  // namespace berag
