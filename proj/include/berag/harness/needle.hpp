#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "berag/training.hpp"
#include "berag/vocab.hpp"

namespace berag::harness {

struct NeedleConfig {
  std::size_t m = 10;
  std::size_t doc_len = 16;
  std::size_t n_items = 100;
  std::size_t vocab_size = 64;
  std::size_t pattern_len = 2;
};

/// Haystack of M random-token documents, each opening with its 1-based index
/// followed by SEP. Even-numbered items are positive: the query pattern is
/// planted in one document and the answer is that document's index. Odd items
/// are negative: no document contains the pattern and the answer is "-1".
inline std::vector<TrainingItem> gen_needle(const NeedleConfig& config, std::uint64_t seed) {
  if (config.m < 2) throw UsageError("needle: M must be at least 2");
  if (config.pattern_len == 0) throw UsageError("needle: pattern_len must be positive");
  if (config.vocab_size <= vocab::kFirstContent + 1) throw UsageError("needle: vocabulary too small");
  const std::size_t header = vocab::number_tokens(config.m).size() + 1;
  if (config.doc_len < header + config.pattern_len)
    throw UsageError("needle: doc_len " + std::to_string(config.doc_len) + " too small to embed the needle");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Token> content(vocab::kFirstContent, static_cast<Token>(config.vocab_size - 1));
  std::uniform_int_distribution<std::size_t> which(0, config.m - 1);
  std::uniform_int_distribution<std::size_t> offset(header, config.doc_len - config.pattern_len);

  auto contains = [](const std::vector<Token>& hay, const std::vector<Token>& pat) {
    return std::search(hay.begin(), hay.end(), pat.begin(), pat.end()) != hay.end();
  };

  std::vector<TrainingItem> items;
  items.reserve(config.n_items);
  for (std::size_t n = 0; n < config.n_items; ++n) {
    const bool positive = n % 2 == 0;
    TrainingItem item;
    item.id = "needle-" + std::to_string(seed) + "-" + std::to_string(n);
    std::vector<Token> pattern(config.pattern_len);
    for (auto& t : pattern) t = content(rng);
    item.query.tokens = pattern;
    const std::size_t target = which(rng);
    for (std::size_t k = 0; k < config.m; ++k) {
      Document d;
      d.doc_id = k + 1;
      d.tokens = vocab::number_tokens(k + 1);
      d.tokens.push_back(vocab::kSep);
      do {
        d.tokens.resize(header);
        while (d.tokens.size() < config.doc_len) d.tokens.push_back(content(rng));
      } while (contains(d.tokens, pattern));
      const bool needle = positive && k == target;
      if (needle) std::copy(pattern.begin(), pattern.end(), d.tokens.begin() + static_cast<std::ptrdiff_t>(offset(rng)));
      d.relevance = needle ? 1 : 0;
      item.docs.push_back(std::move(d));
    }
    item.answer = positive ? vocab::number_tokens(target + 1) : vocab::negative_answer();
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace berag::harness
