#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "berag/backend.hpp"
#include "berag/numerics.hpp"
#include "berag/types.hpp"
#include "berag/vocab.hpp"

namespace berag {

struct DecodeConfig {
  std::size_t max_new_tokens = 8;
  bool top_p_pruning = false;
  /// Append the empty passage to the list when it is missing.
  bool include_null_doc = false;
  /// Report a deflection when the empty passage ends with the highest posterior.
  bool deflection = false;
  Token eos = vocab::kEos;
  /// Context window for the concatenation baseline, in tokens.
  std::size_t context_limit = 4096;

  void validate() const {
    if (max_new_tokens == 0) throw UsageError("max_new_tokens must be at least 1");
  }
};

/// Analytic work counters. Attention pairs follow a dense-attention model:
/// a prefill over n tokens costs n^2 pairs, a decoded token with n tokens of
/// context costs n pairs.
struct CostCounters {
  std::uint64_t backend_calls = 0;
  std::uint64_t prefill_pairs = 0;
  std::uint64_t decode_pairs = 0;

  CostCounters& operator+=(const CostCounters& o) {
    backend_calls += o.backend_calls;
    prefill_pairs += o.prefill_pairs;
    decode_pairs += o.decode_pairs;
    return *this;
  }
  friend bool operator==(const CostCounters&, const CostCounters&) = default;
};

/// Prefill pairs for one branch per document: K (D + |x|)^2.
inline std::uint64_t ensemble_prefill_pairs(std::uint64_t k, std::uint64_t doc_len, std::uint64_t query_len) {
  const std::uint64_t n = doc_len + query_len;
  return k * n * n;
}

/// Prefill pairs for one concatenated context: (K D + |x|)^2.
inline std::uint64_t concat_prefill_pairs(std::uint64_t k, std::uint64_t doc_len, std::uint64_t query_len) {
  const std::uint64_t n = k * doc_len + query_len;
  return n * n;
}

struct StepRecord {
  std::size_t step = 0;
  Token token = 0;
  std::size_t scored_docs = 0;
  /// Doc ids still active after this step, ascending.
  std::vector<DocId> active;
  /// Posterior probabilities after this step's update, input order; 0 for pruned docs.
  std::vector<double> posterior;
  CostCounters cost;
  double wall_ms = 0.0;
};

struct DecodeTrace {
  std::vector<double> prior;  // probabilities, input order
  std::vector<StepRecord> steps;
  CostCounters total;
  double prefill_ms = 0.0;
  /// Deflection decision taken from the prior alone (before any token).
  bool prior_deflected = false;

  double decode_ms() const {
    double ms = 0.0;
    for (const auto& s : steps) ms += s.wall_ms;
    return ms;
  }
};

struct DecodeResult {
  std::vector<Token> tokens;  // without the terminating eos
  DecodeTrace trace;
  bool deflected = false;
  /// Documents actually decoded against (the input list, plus the empty passage when appended).
  std::vector<Document> docs;
};

/// Per-document Bayesian state during decoding.
///
/// Holds the prior log-weights and accumulated history log-likelihoods; the
/// posterior over active documents is derived on demand. All reductions over
/// documents run in ascending doc-id order.
class EnsembleState {
 public:
  EnsembleState(std::span<const Document> docs, const LogDistribution& log_prior)
      : canonical_(canonical_order(docs)),
        log_prior_(log_prior.vector()),
        history_ll_(docs.size(), 0.0),
        active_(docs.size(), true) {
    if (docs.empty()) throw UsageError("ensemble: empty document list");
    if (log_prior.size() != docs.size()) throw UsageError("ensemble: prior size does not match documents");
    ids_.reserve(docs.size());
    for (const auto& d : docs) ids_.push_back(d.doc_id);
  }

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t step() const noexcept { return step_; }
  DocId doc_id(std::size_t i) const { return ids_.at(i); }
  bool is_active(std::size_t i) const { return active_.at(i); }
  double log_prior(std::size_t i) const { return log_prior_.at(i); }
  double history_log_likelihood(std::size_t i) const { return history_ll_.at(i); }
  const std::vector<std::size_t>& canonical() const noexcept { return canonical_; }

  std::size_t active_count() const {
    return static_cast<std::size_t>(std::count(active_.begin(), active_.end(), true));
  }

  /// Active input indices in canonical order.
  std::vector<std::size_t> active_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i : canonical_)
      if (active_[i]) out.push_back(i);
    return out;
  }

  /// Log posterior in input order; -inf for inactive documents.
  std::vector<double> log_posterior() const {
    const auto act = active_indices();
    std::vector<double> joint;
    joint.reserve(act.size());
    for (std::size_t i : act) joint.push_back(history_ll_[i] + log_prior_[i]);
    const double z = log_sum_exp(joint);
    if (z == kNegInf) throw DegenerateDistributionError("ensemble: every active document has zero posterior mass");
    std::vector<double> out(ids_.size(), kNegInf);
    for (std::size_t n = 0; n < act.size(); ++n) out[act[n]] = joint[n] - z;
    return out;
  }

  std::vector<double> posterior_probs() const {
    auto lp = log_posterior();
    for (double& v : lp) v = std::exp(v);
    return lp;
  }

  /// Adds each active document's log-probability of `token` to its history likelihood.
  void observe(Token token, std::span<const LogDistribution> per_doc) {
    for (std::size_t i : active_indices()) history_ll_[i] += per_doc[i][token];
    ++step_;
  }

  void deactivate(std::size_t i) {
    active_.at(i) = false;
    history_ll_[i] = kNegInf;
  }

 private:
  std::vector<DocId> ids_;
  std::vector<std::size_t> canonical_;
  std::vector<double> log_prior_;
  std::vector<double> history_ll_;
  std::vector<bool> active_;
  std::size_t step_ = 0;
};

namespace detail {

inline void check_per_doc(const EnsembleState& state, std::span<const LogDistribution> per_doc) {
  if (per_doc.size() != state.size()) throw UsageError("expected one distribution per document");
  std::size_t vocab = 0;
  for (std::size_t i : state.active_indices()) {
    if (per_doc[i].empty()) throw UsageError("missing distribution for active document");
    if (vocab == 0) vocab = per_doc[i].size();
    if (per_doc[i].size() != vocab) throw UsageError("per-document distributions differ in size");
  }
}

inline std::optional<std::size_t> null_index(std::span<const Document> docs) {
  for (std::size_t i = 0; i < docs.size(); ++i)
    if (docs[i].is_null) return i;
  return std::nullopt;
}

// Index of the largest posterior; ties go to the smallest doc id.
inline std::size_t top_document(const EnsembleState& state, std::span<const double> posterior) {
  std::size_t best = state.canonical().front();
  for (std::size_t i : state.canonical())
    if (posterior[i] > posterior[best]) best = i;
  return best;
}

}  // namespace detail

/// Prior from the head, all history likelihoods zero, every document active.
inline EnsembleState init_state(const Query& query, std::span<const Document> docs, const PriorHead& head,
                                const ScorerBackend& backend) {
  if (docs.empty()) throw UsageError("init_state: empty document list");
  return EnsembleState(docs, prior_distribution(head, backend, query, docs));
}

/// Posterior-weighted mixture of the active documents' next-token distributions.
inline LogDistribution step_mixture(const EnsembleState& state, std::span<const LogDistribution> per_doc) {
  detail::check_per_doc(state, per_doc);
  const auto post = state.log_posterior();
  const auto act = state.active_indices();
  const std::size_t vocab = per_doc[act.front()].size();
  std::vector<double> out(vocab);
  std::vector<double> terms(act.size());
  for (std::size_t t = 0; t < vocab; ++t) {
    for (std::size_t n = 0; n < act.size(); ++n) terms[n] = per_doc[act[n]][t] + post[act[n]];
    out[t] = log_sum_exp(terms);
  }
  return LogDistribution(std::move(out));
}

/// Bayes update after emitting `token`.
inline EnsembleState update_posterior(EnsembleState state, Token token, std::span<const LogDistribution> per_doc) {
  detail::check_per_doc(state, per_doc);
  if (token >= per_doc[state.active_indices().front()].size()) throw UsageError("chosen token out of vocabulary");
  state.observe(token, per_doc);
  return state;
}

/// Keeps the fewest highest-posterior documents whose mass reaches 1 - 1/(2K).
inline EnsembleState prune_top_p(EnsembleState state, std::size_t k_original) {
  if (k_original == 0) throw UsageError("prune_top_p: K must be positive");
  const double threshold = 1.0 - 1.0 / (2.0 * static_cast<double>(k_original));
  const auto probs = state.posterior_probs();
  auto ranked = state.active_indices();  // canonical, so stable sort breaks ties by doc id
  std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  double mass = 0.0;
  std::size_t keep = ranked.size();
  for (std::size_t n = 0; n < ranked.size(); ++n) {
    mass += probs[ranked[n]];
    if (mass >= threshold) {
      keep = n + 1;
      break;
    }
  }
  for (std::size_t n = keep; n < ranked.size(); ++n) state.deactivate(ranked[n]);
  return state;
}

/// Greedy decoding against a single document.
inline DecodeResult single_document_decode(const Query& query, const Document& doc, const ScorerBackend& backend,
                                           const DecodeConfig& config) {
  config.validate();
  DecodeResult result;
  result.docs = {doc};
  std::vector<Token> history;
  const std::uint64_t ctx = query.tokens.size() + doc.tokens.size();
  result.trace.total.prefill_pairs = ctx * ctx;
  for (std::size_t j = 0; j < config.max_new_tokens; ++j) {
    const auto dist = backend.next_token_logdist(query, doc, history);
    const auto token = static_cast<Token>(dist.argmax());
    StepRecord rec;
    rec.step = j;
    rec.token = token;
    rec.scored_docs = 1;
    rec.cost = {1, 0, ctx + j};
    result.trace.total += rec.cost;
    result.trace.steps.push_back(std::move(rec));
    if (token == config.eos) break;
    history.push_back(token);
  }
  result.tokens = history;
  return result;
}

/// Ensemble decoding with an explicit log prior (input order).
inline DecodeResult berag_decode_with_prior(const Query& query, std::span<const Document> input_docs,
                                            const ScorerBackend& backend, const LogDistribution& log_prior,
                                            const DecodeConfig& config) {
  using clock = std::chrono::steady_clock;
  config.validate();
  if (input_docs.empty()) throw UsageError("berag_decode: empty document list");
  DecodeResult result;
  result.docs.assign(input_docs.begin(), input_docs.end());
  const auto null_idx = detail::null_index(result.docs);
  if (config.deflection && !null_idx) throw UsageError("deflection requires the empty passage in the document list");
  if (log_prior.size() != result.docs.size()) throw UsageError("berag_decode: prior size does not match documents");

  const auto t0 = clock::now();
  EnsembleState state(result.docs, log_prior);
  const std::size_t k_original = result.docs.size();
  auto& trace = result.trace;
  for (double lp : log_prior.values()) trace.prior.push_back(std::exp(lp));
  if (null_idx) trace.prior_deflected = detail::top_document(state, log_prior.values()) == *null_idx;
  for (const auto& d : result.docs) {
    const std::uint64_t ctx = query.tokens.size() + d.tokens.size();
    trace.total.prefill_pairs += ctx * ctx;
  }
  trace.prefill_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();

  std::vector<Token> history;
  std::vector<LogDistribution> per_doc(result.docs.size());
  for (std::size_t j = 0; j < config.max_new_tokens; ++j) {
    const auto ts = clock::now();
    StepRecord rec;
    rec.step = j;
    for (std::size_t i = 0; i < per_doc.size(); ++i) {
      if (!state.is_active(i)) {
        per_doc[i] = LogDistribution();
        continue;
      }
      per_doc[i] = backend.next_token_logdist(query, result.docs[i], history);
      rec.cost.backend_calls += 1;
      rec.cost.decode_pairs += query.tokens.size() + result.docs[i].tokens.size() + j;
      ++rec.scored_docs;
    }
    const auto mixture = step_mixture(state, per_doc);
    const auto token = static_cast<Token>(mixture.argmax());
    state = update_posterior(std::move(state), token, per_doc);
    if (config.top_p_pruning) state = prune_top_p(std::move(state), k_original);

    rec.token = token;
    rec.posterior = state.posterior_probs();
    for (std::size_t i : state.active_indices()) rec.active.push_back(state.doc_id(i));
    rec.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - ts).count();
    trace.total += rec.cost;
    trace.steps.push_back(std::move(rec));
    if (token == config.eos) break;
    history.push_back(token);
  }
  result.tokens = std::move(history);
  if (config.deflection) {
    const auto& final_post = trace.steps.back().posterior;
    result.deflected = detail::top_document(state, final_post) == *null_idx;
  }
  return result;
}

/// Adds the empty passage when the config asks for it and it is missing.
inline std::vector<Document> with_null_doc(std::span<const Document> docs, const DecodeConfig& config) {
  std::vector<Document> out(docs.begin(), docs.end());
  if ((config.include_null_doc || config.deflection) && !detail::null_index(out))
    out.push_back(Document::null_document());
  return out;
}

/// Ensemble decoding: greedy argmax over the posterior-weighted mixture,
/// Bayes update of the posterior, optional Top-P pruning after each update.
inline DecodeResult berag_decode(const Query& query, std::span<const Document> docs, const ScorerBackend& backend,
                                 const PriorHead& head, const DecodeConfig& config) {
  if (docs.empty()) throw UsageError("berag_decode: empty document list");
  const auto all = with_null_doc(docs, config);
  const auto prior = prior_distribution(head, backend, query, all);
  return berag_decode_with_prior(query, all, backend, prior, config);
}

/// Teacher-forced log P(answer | query, docs) under the ensemble, no pruning.
inline double sequence_log_likelihood_with_prior(const Query& query, std::span<const Token> answer,
                                                 std::span<const Document> docs, const ScorerBackend& backend,
                                                 const LogDistribution& log_prior) {
  if (answer.empty()) throw UsageError("sequence_log_likelihood: empty answer");
  EnsembleState state(docs, log_prior);
  std::vector<LogDistribution> per_doc(docs.size());
  double total = 0.0;
  for (std::size_t j = 0; j < answer.size(); ++j) {
    const std::span<const Token> history = answer.first(j);
    for (std::size_t i = 0; i < docs.size(); ++i) per_doc[i] = backend.next_token_logdist(query, docs[i], history);
    const auto mixture = step_mixture(state, per_doc);
    if (answer[j] >= mixture.size()) throw UsageError("answer token out of vocabulary");
    total += mixture[answer[j]];
    state = update_posterior(std::move(state), answer[j], per_doc);
  }
  return total;
}

inline double sequence_log_likelihood(const Query& query, std::span<const Token> answer,
                                      std::span<const Document> docs, const ScorerBackend& backend,
                                      const PriorHead& head) {
  if (docs.empty()) throw UsageError("sequence_log_likelihood: empty document list");
  return sequence_log_likelihood_with_prior(query, answer, docs, backend,
                                            prior_distribution(head, backend, query, docs));
}

/// Id given to the concatenated pseudo-document.
inline constexpr DocId kConcatDocId = std::numeric_limits<DocId>::max();

/// Documents joined in list order; empty passages contribute nothing.
inline Document concatenate_documents(std::span<const Document> docs) {
  Document out{kConcatDocId, {}, false, std::nullopt};
  for (const auto& d : docs) out.tokens.insert(out.tokens.end(), d.tokens.begin(), d.tokens.end());
  if (out.tokens.empty()) return Document::null_document();
  return out;
}

/// Concatenation baseline: greedy decoding conditioned on all documents joined
/// into one context. Throws OutOfLengthError past the context window.
inline DecodeResult concat_decode(const Query& query, std::span<const Document> docs, const ScorerBackend& backend,
                                  const DecodeConfig& config) {
  using clock = std::chrono::steady_clock;
  config.validate();
  if (docs.empty()) throw UsageError("concat_decode: empty document list");
  const auto t0 = clock::now();
  const Document joined = concatenate_documents(docs);
  const std::uint64_t ctx = query.tokens.size() + joined.tokens.size();
  if (ctx > config.context_limit) throw OutOfLengthError(ctx, config.context_limit);

  DecodeResult result;
  result.docs.assign(docs.begin(), docs.end());
  auto& trace = result.trace;
  trace.total.prefill_pairs = ctx * ctx;
  trace.prefill_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  std::vector<Token> history;
  for (std::size_t j = 0; j < config.max_new_tokens; ++j) {
    const auto ts = clock::now();
    const auto dist = backend.next_token_logdist(query, joined, history);
    const auto token = static_cast<Token>(dist.argmax());
    StepRecord rec;
    rec.step = j;
    rec.token = token;
    rec.scored_docs = 1;
    rec.cost = {1, 0, ctx + j};
    rec.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - ts).count();
    trace.total += rec.cost;
    trace.steps.push_back(std::move(rec));
    if (token == config.eos) break;
    history.push_back(token);
  }
  result.tokens = std::move(history);
  return result;
}

/// One JSON object per step: step, token, active ids, posterior, cost counters.
inline std::string trace_to_jsonl(const DecodeTrace& trace, const std::string& item_id = {}) {
  std::string out;
  for (const auto& s : trace.steps) {
    nlohmann::json j;
    if (!item_id.empty()) j["item"] = item_id;
    j["step"] = s.step;
    j["token"] = s.token;
    j["active"] = s.active;
    j["posterior"] = s.posterior;
    j["cost"] = {{"backend_calls", s.cost.backend_calls},
                 {"prefill_pairs", s.cost.prefill_pairs},
                 {"decode_pairs", s.cost.decode_pairs}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace berag
