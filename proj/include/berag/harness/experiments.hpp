#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "berag/harness/evaluate.hpp"

namespace berag::harness {

// ---------------------------------------------------------------------------
// Gold-position sweep

struct PositionBucket {
  std::size_t first = 1;  // 1-based, inclusive
  std::size_t last = 1;

  std::string label() const { return "GT@" + std::to_string(first) + "-" + std::to_string(last); }
};

/// Consecutive buckets of `width` positions covering 1..K.
inline std::vector<PositionBucket> make_buckets(std::size_t k, std::size_t width) {
  if (width == 0) throw UsageError("bucket width must be positive");
  std::vector<PositionBucket> out;
  for (std::size_t first = 1; first <= k; first += width) out.push_back({first, std::min(k, first + width - 1)});
  return out;
}

struct PositionSweepRow {
  Strategy strategy = Strategy::berag;
  PositionBucket bucket;
  std::optional<double> accuracy;
  std::size_t items = 0;
  std::size_t out_of_length = 0;
};

struct PositionSweepResult {
  std::vector<PositionSweepRow> rows;
  /// Items skipped because their gold document was not in the list.
  std::size_t excluded = 0;
  /// Per strategy: every item decoded to the same tokens in every bucket.
  std::map<Strategy, bool> outputs_identical;
};

/// Moves the gold document of `item` to 0-based `position` by swapping.
inline TrainingItem move_gold(const TrainingItem& item, std::size_t position) {
  const auto g = item.gold_index();
  if (!g) throw UsageError("move_gold: item '" + item.id + "' has no gold document");
  if (position >= item.docs.size()) throw UsageError("move_gold: position out of range");
  TrainingItem out = item;
  std::swap(out.docs[*g], out.docs[position]);
  return out;
}

/// Re-evaluates the same items with the gold document swapped into each
/// bucket. Item i goes to position first + (i mod bucket width).
inline PositionSweepResult position_sweep(const ModelBundle& bundle, const std::vector<TrainingItem>& dataset,
                                          std::size_t k, const std::vector<PositionBucket>& buckets,
                                          const std::vector<Strategy>& strategies, const EvalConfig& base) {
  PositionSweepResult result;
  std::vector<TrainingItem> usable;
  for (const auto& item : dataset) {
    if (item.docs.size() != k) throw UsageError("position_sweep: item '" + item.id + "' does not have K documents");
    if (item.gold_index()) usable.push_back(item);
    else ++result.excluded;
  }
  for (const auto& b : buckets)
    if (b.first == 0 || b.last < b.first || b.last > k) throw UsageError("position_sweep: bucket outside 1..K");

  for (Strategy s : strategies) {
    EvalConfig config = base;
    config.strategy = s;
    std::vector<std::vector<Token>> reference(usable.size());
    bool identical = true;
    for (std::size_t bi = 0; bi < buckets.size(); ++bi) {
      const auto& b = buckets[bi];
      std::vector<TrainingItem> moved;
      moved.reserve(usable.size());
      const std::size_t width = b.last - b.first + 1;
      for (std::size_t i = 0; i < usable.size(); ++i) moved.push_back(move_gold(usable[i], b.first - 1 + i % width));
      const auto ev = evaluate(bundle, moved, config);
      for (std::size_t i = 0; i < usable.size(); ++i) {
        if (bi == 0) reference[i] = ev.outcomes[i].tokens;
        else if (ev.outcomes[i].tokens != reference[i]) identical = false;
      }
      result.rows.push_back({s, b, ev.report.exact_match, ev.report.evaluated, ev.report.out_of_length});
    }
    result.outputs_identical[s] = identical;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Prior-based reranking

struct RankedDoc {
  std::size_t index = 0;  // position in the input list
  DocId doc_id = 0;
  double logit = 0.0;
};

/// Documents sorted by descending prior logit; ties by ascending doc id.
inline std::vector<RankedDoc> rerank_by_logits(std::span<const Document> docs, std::span<const double> logits) {
  if (docs.empty()) throw UsageError("rerank: empty document list");
  if (docs.size() != logits.size()) throw UsageError("rerank: logit count mismatch");
  std::vector<RankedDoc> out;
  for (std::size_t i = 0; i < docs.size(); ++i) out.push_back({i, docs[i].doc_id, logits[i]});
  std::stable_sort(out.begin(), out.end(), [](const RankedDoc& a, const RankedDoc& b) {
    if (a.logit != b.logit) return a.logit > b.logit;
    return a.doc_id < b.doc_id;
  });
  return out;
}

inline std::vector<RankedDoc> rerank_with_prior(const Query& query, std::span<const Document> docs,
                                                const ScorerBackend& backend, const PriorHead& head) {
  const auto logits = prior_logits(head, backend, query, docs);
  return rerank_by_logits(docs, logits);
}

struct RerankReport {
  std::size_t items = 0;
  std::size_t recall1_before = 0;
  std::size_t recall1_after = 0;

  double before() const { return items ? static_cast<double>(recall1_before) / static_cast<double>(items) : 0.0; }
  double after() const { return items ? static_cast<double>(recall1_after) / static_cast<double>(items) : 0.0; }
};

/// Recall@1 of the given list order versus the prior-reranked order.
inline RerankReport rerank_recall(const ModelBundle& bundle, const std::vector<TrainingItem>& dataset) {
  RerankReport r;
  for (const auto& item : dataset) {
    const auto g = item.gold_index();
    ++r.items;
    if (!g) continue;
    r.recall1_before += *g == 0 ? 1 : 0;
    const auto ranked = rerank_with_prior(item.query, item.docs, *bundle.backend, bundle.prior_head);
    r.recall1_after += ranked.front().index == *g ? 1 : 0;
  }
  return r;
}

/// Share of labelled documents where sigmoid(prior logit) > 0.5 agrees with the label.
inline double prior_classification_accuracy(const ModelBundle& bundle, const std::vector<TrainingItem>& dataset) {
  std::size_t right = 0, total = 0;
  for (const auto& item : dataset) {
    for (const auto& d : item.docs) {
      if (!d.relevance) continue;
      const double s = bundle.prior_head.prior_logit(bundle.backend->summary_embedding(item.query, d));
      right += (s > 0.0) == (*d.relevance == 1) ? 1 : 0;
      ++total;
    }
  }
  if (total == 0) throw UsageError("prior_classification_accuracy: no labelled documents");
  return static_cast<double>(right) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Latency and cost benchmark

/// First k documents of the item; a gold document past k replaces position (gold mod k).
inline TrainingItem truncate_keep_gold(const TrainingItem& item, std::size_t k) {
  if (k == 0) throw UsageError("truncate: K must be positive");
  TrainingItem out = item;
  if (item.docs.size() <= k) return out;
  out.docs.assign(item.docs.begin(), item.docs.begin() + static_cast<std::ptrdiff_t>(k));
  if (const auto g = item.gold_index(); g && *g >= k) out.docs[*g % k] = item.docs[*g];
  return out;
}

struct BenchConfig {
  std::vector<std::size_t> ks{10, 30, 50};
  std::vector<Strategy> strategies{Strategy::berag, Strategy::concat};
  std::vector<bool> pruning{false, true};
  DecodeConfig decode;
  /// Items decoded untimed before each row.
  std::size_t warmup = 8;
};

struct BenchRow {
  Strategy strategy = Strategy::berag;
  std::size_t k = 0;
  bool pruning = false;
  std::size_t items = 0;
  std::size_t out_of_length = 0;
  std::optional<double> ms_per_token;
  std::optional<double> mean_active_docs;
  /// Mean scored documents per step from the fourth generated token on.
  std::optional<double> mean_active_after_3;
  /// Share of items whose mean active documents after token 3 is below K.
  std::optional<double> concentrated_share;
  std::optional<double> exact_match;
  CostCounters cost;
  std::vector<std::vector<Token>> answers;
};

/// Runs every (strategy, K, pruning) combination sequentially on one thread.
inline std::vector<BenchRow> bench_latency(const ModelBundle& bundle, const std::vector<TrainingItem>& dataset,
                                           const BenchConfig& config) {
  std::vector<BenchRow> rows;
  for (Strategy s : config.strategies) {
    for (std::size_t k : config.ks) {
      std::vector<TrainingItem> items;
      items.reserve(dataset.size());
      for (const auto& item : dataset) items.push_back(truncate_keep_gold(item, k));
      for (bool prune : config.pruning) {
        if (s != Strategy::berag && prune) continue;
        EvalConfig ec;
        ec.strategy = s;
        ec.decode = config.decode;
        ec.decode.top_p_pruning = prune;
        for (std::size_t w = 0; w < std::min(config.warmup, items.size()); ++w) (void)decode_item(bundle, items[w], ec);
        std::vector<ItemOutcome> outcomes;
        outcomes.reserve(items.size());
        for (const auto& item : items) outcomes.push_back(decode_item(bundle, item, ec));
        const auto report = summarize(outcomes, ec.decode.deflection);

        BenchRow row;
        row.strategy = s;
        row.k = k;
        row.pruning = prune;
        row.items = report.evaluated;
        row.out_of_length = report.out_of_length;
        row.ms_per_token = report.ms_per_token;
        row.mean_active_docs = report.mean_active_docs;
        row.exact_match = report.exact_match;
        row.cost = report.cost;
        std::size_t late_steps = 0, late_scored = 0, with_late = 0, concentrated = 0;
        for (const auto& o : outcomes) {
          row.answers.push_back(o.tokens);
          std::size_t ls = 0, lsc = 0;
          for (std::size_t j = 3; j < o.trace.steps.size(); ++j) {
            ++ls;
            lsc += o.trace.steps[j].scored_docs;
          }
          late_steps += ls;
          late_scored += lsc;
          if (ls > 0) {
            ++with_late;
            if (static_cast<double>(lsc) / static_cast<double>(ls) < static_cast<double>(o.trace.prior.size()))
              ++concentrated;
          }
        }
        row.mean_active_after_3 = ratio(late_scored, late_steps);
        row.concentrated_share = ratio(concentrated, with_late);
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

/// Least-squares slope of log(y) against log(x).
inline double log_log_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw UsageError("log_log_slope: need two or more points");
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace berag::harness
