#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "berag/autodiff.hpp"
#include "berag/backend.hpp"
#include "berag/bundle.hpp"
#include "berag/parallel.hpp"
#include "berag/types.hpp"
#include "berag/vocab.hpp"

namespace berag {

/// One supervised example: query, target answer, and its K documents.
/// Relevance labels live on the documents.
struct TrainingItem {
  std::string id;
  Query query;
  std::vector<Token> answer;
  std::vector<Document> docs;

  bool has_labels() const {
    return std::all_of(docs.begin(), docs.end(), [](const Document& d) { return d.relevance.has_value(); });
  }

  /// Index of the first relevance-1 document, ignoring the empty passage.
  std::optional<std::size_t> gold_index() const {
    for (std::size_t i = 0; i < docs.size(); ++i)
      if (!docs[i].is_null && docs[i].relevance.value_or(0) == 1) return i;
    return std::nullopt;
  }

  void validate() const {
    if (query.tokens.empty()) throw UsageError("item " + id + ": empty query");
    if (answer.empty()) throw UsageError("item " + id + ": empty answer");
    if (docs.empty()) throw UsageError("item " + id + ": no documents");
    std::size_t nulls = 0;
    for (const auto& d : docs) {
      d.validate();
      nulls += d.is_null ? 1 : 0;
    }
    if (nulls > 1) throw UsageError("item " + id + ": more than one empty passage");
    (void)canonical_order(docs);
  }

  friend bool operator==(const TrainingItem&, const TrainingItem&) = default;
};

enum class Optimizer { sgd, adam };

struct TrainConfig {
  std::size_t k_train = 2;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double backbone_lr = 0.01;
  /// Defaults to backbone_lr * 1e-2 when unset.
  std::optional<double> prior_head_lr;
  double null_doc_augmentation_rate = 0.0;
  /// Append the empty passage (relevance 0) to every item that lacks one, so
  /// the prior learns to rank it against gold documents too.
  bool include_null_doc = false;
  bool include_prior_loss = false;
  double prior_loss_weight = 1.0;
  Optimizer optimizer = Optimizer::sgd;
  /// Append eos to every target answer.
  bool append_eos = true;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  double head_lr() const { return prior_head_lr.value_or(backbone_lr * 1e-2); }

  void validate() const {
    if (k_train == 0) throw UsageError("k_train must be positive");
    if (batch_size == 0) throw UsageError("batch_size must be positive");
    if (backbone_lr < 0.0 || head_lr() < 0.0) throw UsageError("learning rates must be non-negative");
    if (null_doc_augmentation_rate < 0.0 || null_doc_augmentation_rate > 1.0)
      throw UsageError("null_doc_augmentation_rate must lie in [0, 1]");
    if (prior_loss_weight < 0.0) throw UsageError("prior_loss_weight must be non-negative");
  }
};

/// Negative log mixture likelihood of `target` with the Bayesian posterior
/// inside; gradients reach both the next-token model and the prior head.
inline ad::Var beft_loss(ad::Tape& tape, const Query& query, std::span<const Token> target,
                         std::span<const Document> docs, const ScorerBackend& backend, const PriorHead& head) {
  if (target.empty()) throw UsageError("beft_loss: empty target");
  if (docs.empty()) throw UsageError("beft_loss: no documents");
  const auto order = canonical_order(docs);
  std::vector<ad::Var> logits;
  for (std::size_t i : order) logits.push_back(head.logit(tape, backend.summary(tape, query, docs[i])));
  const ad::Var log_prior = ad::log_softmax(ad::concat(logits));

  ad::Var history_ll = tape.constant(std::vector<double>(docs.size(), 0.0));
  ad::Var loss = tape.scalar(0.0);
  std::vector<ad::Var> step(docs.size());
  for (std::size_t j = 0; j < target.size(); ++j) {
    const auto history = target.first(j);
    for (std::size_t n = 0; n < order.size(); ++n)
      step[n] = ad::element(backend.next_token_logprobs(tape, query, docs[order[n]], history), target[j]);
    const ad::Var step_ll = ad::concat(step);
    const ad::Var log_post = ad::log_softmax(log_prior + history_ll);
    loss = loss - ad::log_sum_exp(step_ll + log_post);
    history_ll = history_ll + step_ll;
  }
  return loss;
}

inline std::vector<Token> training_target(const TrainingItem& item, std::optional<Token> eos) {
  std::vector<Token> target = item.answer;
  if (eos) target.push_back(*eos);
  return target;
}

/// beft_loss for one item; numeric failures name the item.
inline ad::Var beft_loss(ad::Tape& tape, const TrainingItem& item, const ScorerBackend& backend,
                         const PriorHead& head, std::optional<Token> eos = std::nullopt) {
  const auto target = training_target(item, eos);
  try {
    return beft_loss(tape, item.query, target, item.docs, backend, head);
  } catch (const NumericError& e) {
    throw NumericError("beft_loss on item '" + item.id + "': " + e.what(), e.node());
  }
}

/// Binary cross-entropy of sigmoid(prior logit) against relevance labels,
/// averaged over every document of every item.
inline ad::Var prior_loss(ad::Tape& tape, std::span<const TrainingItem> items, const ScorerBackend& backend,
                          const PriorHead& head) {
  std::vector<ad::Var> terms;
  for (const auto& item : items) {
    for (const auto& d : item.docs) {
      if (!d.relevance) throw UsageError("prior_loss: item '" + item.id + "' has a document without a label");
      const ad::Var s = head.logit(tape, backend.summary(tape, item.query, d));
      terms.push_back(*d.relevance == 1 ? ad::log_sigmoid(s) : ad::log_sigmoid(ad::scale(s, -1.0)));
    }
  }
  if (terms.empty()) throw UsageError("prior_loss: no documents");
  return ad::scale(ad::sum(ad::concat(terms)), -1.0 / static_cast<double>(terms.size()));
}

/// Replaces the gold document with the empty passage on a seeded fraction of items.
inline std::vector<TrainingItem> augment_with_null(std::vector<TrainingItem> items, double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0) throw UsageError("augment_with_null: rate must lie in [0, 1]");
  for (const auto& item : items) {
    if (!item.gold_index()) throw UsageError("augment_with_null: item '" + item.id + "' has no gold document");
    for (const auto& d : item.docs)
      if (d.is_null) throw UsageError("augment_with_null: item '" + item.id + "' already holds the empty passage");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (auto& item : items) {
    if (coin(rng) < rate) {
      auto& gold = item.docs[*item.gold_index()];
      gold = Document::null_document(1);
    }
  }
  return items;
}

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  /// Mean prior loss over batches; 0 when the prior loss is disabled.
  double prior_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> curve;
};

inline std::string loss_curve_csv(const TrainResult& result) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,mean_loss,prior_loss\n";
  for (const auto& e : result.curve) out << e.epoch << ',' << e.mean_loss << ',' << e.prior_loss << '\n';
  return out.str();
}

namespace detail {

struct ParamGroup {
  ad::ParameterSet* params;
  double lr;
};

class GroupOptimizer {
 public:
  GroupOptimizer(Optimizer kind, std::vector<ParamGroup> groups) : kind_(kind), groups_(std::move(groups)) {
    for (auto& g : groups_)
      for (auto& p : g.params->items()) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
      }
  }

  void step() {
    ++t_;
    std::size_t slot = 0;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (auto& g : groups_) {
      for (auto& p : g.params->items()) {
        auto& m = m_[slot];
        auto& v = v_[slot];
        ++slot;
        if (p.gradient.size() != p.size()) continue;
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double grad = p.gradient[i];
          if (kind_ == Optimizer::sgd) {
            p.value[i] -= g.lr * grad;
          } else {
            m[i] = b1 * m[i] + (1.0 - b1) * grad;
            v[i] = b2 * v[i] + (1.0 - b2) * grad * grad;
            p.value[i] -= g.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
          }
        }
      }
    }
  }

 private:
  Optimizer kind_;
  std::vector<ParamGroup> groups_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// Flattened gradients of every parameter in `sets`, in order.
inline std::vector<double> collect_gradients(const ad::Tape& tape, std::span<ad::ParameterSet* const> sets) {
  std::vector<double> out;
  for (auto* set : sets)
    for (const auto& p : set->items()) {
      auto g = tape.gradient_of(p);
      out.insert(out.end(), g.begin(), g.end());
    }
  return out;
}

inline void add_gradients(std::span<const double> flat, double weight, std::span<ad::ParameterSet* const> sets) {
  std::size_t offset = 0;
  for (auto* set : sets)
    for (auto& p : set->items()) {
      if (p.gradient.size() != p.size()) p.gradient.assign(p.size(), 0.0);
      for (std::size_t i = 0; i < p.size(); ++i) p.gradient[i] += weight * flat[offset + i];
      offset += p.size();
    }
}

}  // namespace detail

/// Mini-batch training of the bundle on the mixture likelihood (plus the
/// weighted prior loss when enabled). Backbone and prior head use separate
/// learning rates. Deterministic for a fixed seed and any thread count.
inline TrainResult train(std::vector<TrainingItem> dataset, const TrainConfig& config, ModelBundle& bundle) {
  config.validate();
  if (!bundle.backend) throw UsageError("train: bundle has no backend");
  if (dataset.empty()) throw UsageError("train: empty dataset");
  for (const auto& item : dataset) {
    item.validate();
    if (item.docs.size() != config.k_train)
      throw UsageError("train: item '" + item.id + "' has " + std::to_string(item.docs.size()) +
                       " documents, expected k_train = " + std::to_string(config.k_train));
  }
  if (config.include_prior_loss)
    for (const auto& item : dataset)
      if (!item.has_labels()) throw UsageError("train: prior loss needs relevance labels on item '" + item.id + "'");
  if (config.null_doc_augmentation_rate > 0.0)
    dataset = augment_with_null(std::move(dataset), config.null_doc_augmentation_rate, config.seed);
  if (config.include_null_doc)
    for (auto& item : dataset)
      if (std::none_of(item.docs.begin(), item.docs.end(), [](const Document& d) { return d.is_null; }))
        item.docs.push_back(Document::null_document(0));

  std::vector<ad::ParameterSet*> sets;
  std::vector<detail::ParamGroup> groups;
  if (auto* bp = bundle.backend->parameters()) {
    sets.push_back(bp);
    groups.push_back({bp, config.backbone_lr});
  }
  sets.push_back(&bundle.prior_head.parameters());
  groups.push_back({&bundle.prior_head.parameters(), config.head_lr()});
  detail::GroupOptimizer optimizer(config.optimizer, groups);
  const std::optional<Token> eos = config.append_eos ? std::optional<Token>(vocab::kEos) : std::nullopt;

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  TrainResult result;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, prior_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += config.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::size_t n = end - start;
      for (auto* s : sets) s->zero_gradients();

      std::vector<std::vector<double>> grads(n);
      std::vector<double> losses(n, 0.0);
      try {
        parallel_for(n, config.threads, [&](std::size_t b) {
          ad::Tape tape;
          auto loss = beft_loss(tape, dataset[order[start + b]], *bundle.backend, bundle.prior_head, eos);
          tape.backward(loss);
          losses[b] = loss.scalar();
          grads[b] = detail::collect_gradients(tape, sets);
        });
        for (std::size_t b = 0; b < n; ++b) {
          detail::add_gradients(grads[b], 1.0 / static_cast<double>(n), sets);
          loss_sum += losses[b];
        }
        if (config.include_prior_loss) {
          std::vector<TrainingItem> batch_items;
          for (std::size_t b = start; b < end; ++b) batch_items.push_back(dataset[order[b]]);
          ad::Tape tape;
          auto ploss = prior_loss(tape, batch_items, *bundle.backend, bundle.prior_head);
          tape.backward(ploss);
          prior_sum += ploss.scalar();
          detail::add_gradients(detail::collect_gradients(tape, sets), config.prior_loss_weight, sets);
        }
      } catch (const NumericError& e) {
        throw TrainingError(std::string("non-finite loss: ") + e.what(), epoch, batch);
      }
      for (auto* s : sets)
        for (const auto& p : s->items())
          for (double g : p.gradient)
            if (!std::isfinite(g)) throw TrainingError("non-finite gradient", epoch, batch);
      optimizer.step();
      ++batches;
    }
    const double mean = loss_sum / static_cast<double>(dataset.size());
    if (!std::isfinite(mean)) throw TrainingError("non-finite epoch loss", epoch, batches);
    result.curve.push_back({epoch, mean, config.include_prior_loss ? prior_sum / static_cast<double>(batches) : 0.0});
  }
  return result;
}

}  // namespace berag
