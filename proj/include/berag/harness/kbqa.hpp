#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "berag/training.hpp"
#include "berag/vocab.hpp"

namespace berag::harness {

struct KBConfig {
  std::size_t vocab_size = 64;
  std::size_t n_entities = 20;
  std::size_t n_attributes = 6;
  std::size_t min_value_len = 1;
  std::size_t max_value_len = 3;
  /// Tokens per fact document, including the filler after the terminator.
  std::size_t doc_len = 8;
  /// Share of facts held out for test queries.
  double test_fraction = 0.2;
  std::uint64_t seed = 7;

  void validate() const {
    if (n_entities == 0 || n_attributes == 0) throw UsageError("kb: need at least one entity and attribute");
    if (min_value_len == 0 || min_value_len > max_value_len) throw UsageError("kb: bad value length range");
    if (doc_len < 2 + max_value_len + 1) throw UsageError("kb: doc_len too small for key + value + terminator");
    if (doc_len > 32) throw UsageError("kb: doc_len above 32");
    if (vocab::kFirstContent + n_entities + n_attributes + 1 > vocab_size)
      throw UsageError("kb: vocabulary too small for the entity/attribute/value pools");
    if (test_fraction < 0.0 || test_fraction >= 1.0) throw UsageError("kb: test_fraction must lie in [0, 1)");
  }
};

struct Fact {
  std::size_t id = 0;
  Token entity = 0;
  Token attribute = 0;
  std::vector<Token> value;
};

/// Entities x attributes -> value token sequences. Every (entity, attribute)
/// pair has exactly one value and one fact document
///   [entity, attribute, value..., SEP, filler...].
class SyntheticKB {
 public:
  explicit SyntheticKB(KBConfig config) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(config_.seed);
    const Token first_value = static_cast<Token>(vocab::kFirstContent + config_.n_entities + config_.n_attributes);
    std::uniform_int_distribution<Token> value_token(first_value, static_cast<Token>(config_.vocab_size - 1));
    std::uniform_int_distribution<std::size_t> value_len(config_.min_value_len, config_.max_value_len);
    for (std::size_t e = 0; e < config_.n_entities; ++e) {
      for (std::size_t a = 0; a < config_.n_attributes; ++a) {
        Fact f;
        f.id = facts_.size();
        f.entity = static_cast<Token>(vocab::kFirstContent + e);
        f.attribute = static_cast<Token>(vocab::kFirstContent + config_.n_entities + a);
        const std::size_t n = value_len(rng);
        for (std::size_t i = 0; i < n; ++i) f.value.push_back(value_token(rng));
        Document doc;
        doc.doc_id = f.id + 1;
        doc.tokens = {f.entity, f.attribute};
        doc.tokens.insert(doc.tokens.end(), f.value.begin(), f.value.end());
        doc.tokens.push_back(vocab::kSep);
        while (doc.tokens.size() < config_.doc_len) doc.tokens.push_back(value_token(rng));
        facts_.push_back(std::move(f));
        docs_.push_back(std::move(doc));
      }
    }
    std::vector<std::size_t> ids(facts_.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n_test = static_cast<std::size_t>(config_.test_fraction * static_cast<double>(ids.size()));
    test_facts_.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
    train_facts_.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());
    std::sort(test_facts_.begin(), test_facts_.end());
    std::sort(train_facts_.begin(), train_facts_.end());
  }

  const KBConfig& config() const noexcept { return config_; }
  const std::vector<Fact>& facts() const noexcept { return facts_; }
  const Fact& fact(std::size_t id) const { return facts_.at(id); }
  const Document& document(std::size_t fact_id) const { return docs_.at(fact_id); }
  Query query(std::size_t fact_id) const { return Query{{facts_.at(fact_id).entity, facts_.at(fact_id).attribute}}; }
  const std::vector<std::size_t>& train_facts() const noexcept { return train_facts_; }
  const std::vector<std::size_t>& test_facts() const noexcept { return test_facts_; }

 private:
  KBConfig config_;
  std::vector<Fact> facts_;
  std::vector<Document> docs_;
  std::vector<std::size_t> train_facts_;
  std::vector<std::size_t> test_facts_;
};

enum class FactSplit { train, test, all };

struct ScenarioConfig {
  std::size_t k = 2;
  std::size_t n_items = 100;
  /// 1-based rank of the gold document; 0 draws it uniformly in [1, K].
  std::size_t gold_rank = 0;
  double gold_present_rate = 1.0;
  /// 0: random facts; 1: prefer facts about the same entity;
  /// 2: prefer facts sharing the entity or the attribute.
  int distractor_level = 1;
  FactSplit split = FactSplit::train;

  void validate() const {
    if (k == 0) throw UsageError("scenario: K must be positive");
    if (gold_rank > k) throw UsageError("scenario: gold_rank exceeds K");
    if (gold_present_rate < 0.0 || gold_present_rate > 1.0) throw UsageError("scenario: gold_present_rate outside [0, 1]");
    if (distractor_level < 0 || distractor_level > 2) throw UsageError("scenario: distractor_level must be 0, 1 or 2");
  }
};

namespace detail {

inline std::vector<std::size_t> pick_distractors(const SyntheticKB& kb, std::size_t gold, std::size_t count, int level,
                                                 std::mt19937_64& rng) {
  const Fact& g = kb.fact(gold);
  std::vector<std::size_t> near, far;
  for (const auto& f : kb.facts()) {
    if (f.id == gold) continue;
    const bool same_entity = f.entity == g.entity;
    const bool same_attribute = f.attribute == g.attribute;
    const bool preferred = (level >= 1 && same_entity) || (level >= 2 && same_attribute);
    (preferred ? near : far).push_back(f.id);
  }
  std::shuffle(near.begin(), near.end(), rng);
  std::shuffle(far.begin(), far.end(), rng);
  std::vector<std::size_t> out;
  for (std::size_t id : near) {
    if (out.size() == count) break;
    out.push_back(id);
  }
  for (std::size_t id : far) {
    if (out.size() == count) break;
    out.push_back(id);
  }
  return out;
}

}  // namespace detail

/// Seeded synthetic KB question answering set; every document carries a relevance label.
inline std::vector<TrainingItem> gen_kbqa(const SyntheticKB& kb, const ScenarioConfig& scenario, std::uint64_t seed) {
  scenario.validate();
  if (scenario.k > kb.facts().size() - 1)
    throw UsageError("scenario: K = " + std::to_string(scenario.k) + " exceeds the distractor pool of " +
                     std::to_string(kb.facts().size() - 1));
  const auto& pool = scenario.split == FactSplit::train  ? kb.train_facts()
                     : scenario.split == FactSplit::test ? kb.test_facts()
                                                         : std::vector<std::size_t>{};
  std::vector<std::size_t> all_ids;
  if (scenario.split == FactSplit::all) {
    all_ids.resize(kb.facts().size());
    std::iota(all_ids.begin(), all_ids.end(), std::size_t{0});
  }
  const auto& queries = scenario.split == FactSplit::all ? all_ids : pool;
  if (queries.empty()) throw UsageError("scenario: no facts in the requested split");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, queries.size() - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> rank(1, scenario.k);
  std::vector<TrainingItem> items;
  items.reserve(scenario.n_items);
  for (std::size_t n = 0; n < scenario.n_items; ++n) {
    const std::size_t gold = queries[pick(rng)];
    const bool present = coin(rng) < scenario.gold_present_rate;
    const std::size_t gold_pos = scenario.gold_rank == 0 ? rank(rng) - 1 : scenario.gold_rank - 1;
    const auto distractors =
        detail::pick_distractors(kb, gold, present ? scenario.k - 1 : scenario.k, scenario.distractor_level, rng);
    std::vector<std::size_t> ordered(distractors);
    std::shuffle(ordered.begin(), ordered.end(), rng);

    TrainingItem item;
    item.id = "kbqa-" + std::to_string(seed) + "-" + std::to_string(n);
    item.query = kb.query(gold);
    item.answer = kb.fact(gold).value;
    std::size_t next = 0;
    for (std::size_t pos = 0; pos < scenario.k; ++pos) {
      Document d;
      if (present && pos == gold_pos) {
        d = kb.document(gold);
        d.relevance = 1;
      } else {
        d = kb.document(ordered[next++]);
        d.relevance = 0;
      }
      item.docs.push_back(std::move(d));
    }
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace berag::harness
