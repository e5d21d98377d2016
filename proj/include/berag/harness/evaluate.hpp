#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "berag/bundle.hpp"
#include "berag/decoder.hpp"
#include "berag/parallel.hpp"
#include "berag/training.hpp"

namespace berag::harness {

enum class Strategy { berag, concat, single, all_deflect };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::berag: return "berag";
    case Strategy::concat: return "concat";
    case Strategy::single: return "single";
    case Strategy::all_deflect: return "all-deflect";
  }
  return "berag";
}

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "berag") return Strategy::berag;
  if (s == "concat") return Strategy::concat;
  if (s == "single") return Strategy::single;
  if (s == "all-deflect") return Strategy::all_deflect;
  throw UsageError("unknown strategy '" + s + "'");
}

struct EvalConfig {
  Strategy strategy = Strategy::berag;
  DecodeConfig decode;
  std::size_t threads = 1;
};

/// Decoding outcome for one item.
struct ItemOutcome {
  std::string id;
  std::vector<Token> tokens;
  bool exact_match = false;
  bool deflected = false;
  bool gold_present = false;
  /// 1-based rank of the gold document in the list.
  std::optional<std::size_t> gold_rank;
  /// Excluded because the concatenated context exceeded the window.
  bool out_of_length = false;
  std::size_t steps = 0;
  std::size_t scored_docs = 0;
  /// Wall clock of steps after the first (the first token comes out of prefill).
  double decode_ms = 0.0;
  double prefill_ms = 0.0;
  CostCounters cost;
  DecodeTrace trace;
};

/// Aggregate metrics. Rates are absent when their denominator is zero.
struct EvalReport {
  std::size_t items = 0;
  std::size_t evaluated = 0;
  std::size_t out_of_length = 0;
  std::size_t exact_matches = 0;
  std::size_t gold_present = 0;
  std::optional<double> exact_match;
  /// gold rank -> (correct, total)
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> per_position;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::optional<double> deflection_accuracy;
  std::optional<double> deflection_f1;
  std::size_t strict_rag_correct = 0;
  std::optional<double> strict_rag;
  std::optional<double> recall_at_k;
  std::optional<double> ms_per_token;
  std::optional<double> mean_active_docs;
  CostCounters cost;
};

inline std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

/// F1 for the "should deflect" class; absent when TP + FP + FN is zero.
inline std::optional<double> f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  return ratio(2 * tp, 2 * tp + fp + fn);
}

/// Decodes one item under the configured strategy.
inline ItemOutcome decode_item(const ModelBundle& bundle, const TrainingItem& item, const EvalConfig& config) {
  ItemOutcome out;
  out.id = item.id;
  if (auto g = item.gold_index()) {
    out.gold_present = true;
    out.gold_rank = *g + 1;
  }
  DecodeResult result;
  switch (config.strategy) {
    case Strategy::berag:
      result = berag_decode(item.query, item.docs, *bundle.backend, bundle.prior_head, config.decode);
      break;
    case Strategy::concat:
      try {
        result = concat_decode(item.query, item.docs, *bundle.backend, config.decode);
      } catch (const OutOfLengthError&) {
        out.out_of_length = true;
        return out;
      }
      break;
    case Strategy::single:
      result = single_document_decode(item.query, item.docs.front(), *bundle.backend, config.decode);
      break;
    case Strategy::all_deflect:
      out.deflected = true;
      return out;
  }
  out.tokens = result.tokens;
  out.exact_match = result.tokens == item.answer;
  out.deflected = result.deflected;
  out.steps = result.trace.steps.size();
  out.prefill_ms = result.trace.prefill_ms;
  for (std::size_t j = 0; j < result.trace.steps.size(); ++j) {
    out.scored_docs += result.trace.steps[j].scored_docs;
    if (j > 0) out.decode_ms += result.trace.steps[j].wall_ms;
  }
  out.cost = result.trace.total;
  out.trace = std::move(result.trace);
  return out;
}

inline EvalReport summarize(const std::vector<ItemOutcome>& outcomes, bool deflection) {
  EvalReport r;
  r.items = outcomes.size();
  double decode_ms = 0.0;
  std::size_t timed_tokens = 0, steps = 0, scored = 0;
  for (const auto& o : outcomes) {
    if (o.out_of_length) {
      ++r.out_of_length;
      continue;
    }
    ++r.evaluated;
    r.gold_present += o.gold_present ? 1 : 0;
    r.exact_matches += o.exact_match ? 1 : 0;
    if (o.gold_rank) {
      auto& cell = r.per_position[*o.gold_rank];
      cell.first += o.exact_match ? 1 : 0;
      cell.second += 1;
    }
    const bool should = !o.gold_present;
    if (o.deflected && should) ++r.tp;
    else if (o.deflected && !should) ++r.fp;
    else if (!o.deflected && should) ++r.fn;
    else ++r.tn;
    const bool strict = should ? o.deflected : (!o.deflected && o.exact_match);
    r.strict_rag_correct += strict ? 1 : 0;
    if (o.steps > 1) {
      decode_ms += o.decode_ms;
      timed_tokens += o.steps - 1;
    }
    steps += o.steps;
    scored += o.scored_docs;
    r.cost += o.cost;
  }
  r.exact_match = ratio(r.exact_matches, r.evaluated);
  r.recall_at_k = ratio(r.gold_present, r.evaluated);
  r.strict_rag = ratio(r.strict_rag_correct, r.evaluated);
  if (deflection) {
    r.deflection_accuracy = ratio(r.tp + r.tn, r.evaluated);
    r.deflection_f1 = f1_score(r.tp, r.fp, r.fn);
  }
  if (timed_tokens > 0) r.ms_per_token = decode_ms / static_cast<double>(timed_tokens);
  r.mean_active_docs = ratio(scored, steps);
  return r;
}

struct Evaluation {
  EvalReport report;
  std::vector<ItemOutcome> outcomes;
};

/// Decodes every item (in parallel when threads > 1) and aggregates in item order.
inline Evaluation evaluate(const ModelBundle& bundle, const std::vector<TrainingItem>& dataset,
                           const EvalConfig& config) {
  Evaluation ev;
  ev.outcomes.resize(dataset.size());
  parallel_for(dataset.size(), config.threads,
               [&](std::size_t i) { ev.outcomes[i] = decode_item(bundle, dataset[i], config); });
  const bool deflection = config.decode.deflection || config.strategy == Strategy::all_deflect;
  ev.report = summarize(ev.outcomes, deflection);
  return ev;
}

}  // namespace berag::harness
