#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "berag/training.hpp"

namespace berag::harness {

inline nlohmann::json item_to_json(const TrainingItem& item) {
  nlohmann::json docs = nlohmann::json::array();
  for (const auto& d : item.docs) {
    nlohmann::json jd;
    jd["doc_id"] = d.doc_id;
    jd["tokens"] = d.tokens;
    jd["relevance"] = d.relevance ? nlohmann::json(*d.relevance) : nlohmann::json(nullptr);
    jd["is_null"] = d.is_null;
    docs.push_back(std::move(jd));
  }
  nlohmann::json j;
  j["id"] = item.id;
  j["query_tokens"] = item.query.tokens;
  j["answer_tokens"] = item.answer;
  j["docs"] = std::move(docs);
  return j;
}

inline TrainingItem item_from_json(const nlohmann::json& j) {
  try {
    TrainingItem item;
    item.id = j.at("id").get<std::string>();
    item.query.tokens = j.at("query_tokens").get<std::vector<Token>>();
    item.answer = j.at("answer_tokens").get<std::vector<Token>>();
    for (const auto& jd : j.at("docs")) {
      Document d;
      d.doc_id = jd.at("doc_id").get<DocId>();
      d.tokens = jd.at("tokens").get<std::vector<Token>>();
      d.is_null = jd.value("is_null", false);
      if (jd.contains("relevance") && !jd.at("relevance").is_null()) d.relevance = jd.at("relevance").get<int>();
      item.docs.push_back(std::move(d));
    }
    item.validate();
    return item;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("dataset item: ") + e.what());
  } catch (const UsageError& e) {
    throw SchemaError(std::string("dataset item: ") + e.what());
  }
}

inline std::string to_jsonl(const std::vector<TrainingItem>& items) {
  std::string out;
  for (const auto& item : items) {
    out += item_to_json(item).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<TrainingItem> from_jsonl(std::istream& in) {
  std::vector<TrainingItem> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      if (j.is_object() && j.contains("meta") && !j.contains("id")) continue;  // provenance header
      items.push_back(item_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const SchemaError& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return items;
}

inline std::vector<TrainingItem> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read dataset " + path);
  return from_jsonl(in);
}

/// FNV-1a 64-bit hash, rendered as 16 hex digits.
inline std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << h;
  return out.str();
}

}  // namespace berag::harness
