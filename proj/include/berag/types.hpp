#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "berag/errors.hpp"

namespace berag {

using Token = std::uint32_t;
using DocId = std::uint64_t;

/// Reserved id of the empty passage.
inline constexpr DocId kNullDocId = 0;

struct Query {
  std::vector<Token> tokens;

  friend bool operator==(const Query&, const Query&) = default;
};

struct Document {
  DocId doc_id = 0;
  std::vector<Token> tokens;
  bool is_null = false;
  std::optional<int> relevance;

  /// The empty passage: reserved id, no tokens.
  static Document null_document(std::optional<int> relevance = std::nullopt) {
    return Document{kNullDocId, {}, true, relevance};
  }

  void validate() const {
    if (is_null && !tokens.empty()) throw UsageError("null document must have no tokens");
    if (is_null && doc_id != kNullDocId) throw UsageError("null document must use the reserved id 0");
    if (!is_null && doc_id == kNullDocId) throw UsageError("doc id 0 is reserved for the null document");
    if (relevance && *relevance != 0 && *relevance != 1) throw UsageError("relevance must be 0 or 1");
  }

  friend bool operator==(const Document&, const Document&) = default;
};

struct SummaryEmbedding {
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  friend bool operator==(const SummaryEmbedding&, const SummaryEmbedding&) = default;
};

/// Indices of `docs` sorted by ascending doc id. Every reduction over documents
/// runs in this order so results do not depend on list order.
inline std::vector<std::size_t> canonical_order(std::span<const Document> docs) {
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return docs[a].doc_id < docs[b].doc_id; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (docs[order[i]].doc_id == docs[order[i - 1]].doc_id)
      throw UsageError("duplicate doc id " + std::to_string(docs[order[i]].doc_id) + " in document list");
  }
  return order;
}

}  // namespace berag
