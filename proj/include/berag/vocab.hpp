#pragma once

#include <string>
#include <vector>

#include "berag/types.hpp"

// Reserved token ids shared by the backends and the synthetic tasks.
namespace berag::vocab {

inline constexpr Token kEos = 0;
/// Ends the value span inside a fact document; separates documents in concatenation.
inline constexpr Token kSep = 1;
inline constexpr Token kMinus = 2;
inline constexpr Token kDigit0 = 3;  // digits occupy kDigit0 .. kDigit0 + 9
inline constexpr Token kFirstContent = 13;

/// Decimal digits of `n` as tokens.
inline std::vector<Token> number_tokens(std::size_t n) {
  std::vector<Token> out;
  for (char c : std::to_string(n)) out.push_back(kDigit0 + static_cast<Token>(c - '0'));
  return out;
}

/// The deflection answer "-1".
inline std::vector<Token> negative_answer() { return {kMinus, kDigit0 + 1}; }

}  // namespace berag::vocab
