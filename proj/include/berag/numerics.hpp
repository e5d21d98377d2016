#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "berag/errors.hpp"

namespace berag {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// log(sum(exp(values))) with max-shift stabilization. -inf entries carry zero mass.
inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw UsageError("log_sum_exp: empty input");
  const double m = *std::max_element(values.begin(), values.end());
  if (std::isinf(m)) return m;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - m);
  return m + std::log(acc);
}

/// A normalized log-probability vector (natural log).
///
/// Invariants: log_sum_exp(values) is within 1e-9 of zero and every entry is
/// at most 1e-12. Entries may be -inf.
class LogDistribution {
 public:
  static constexpr double kNormTolerance = 1e-9;
  static constexpr double kEntrySlack = 1e-12;

  LogDistribution() = default;

  /// Validates the invariants; throws UsageError when they do not hold.
  explicit LogDistribution(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw UsageError("LogDistribution: empty");
    for (double v : values_) {
      if (std::isnan(v) || v > kEntrySlack)
        throw UsageError("LogDistribution: entry is not a log-probability");
    }
    const double z = log_sum_exp(values_);
    if (!(std::abs(z) <= kNormTolerance))
      throw UsageError("LogDistribution: not normalized (logsumexp = " + std::to_string(z) + ")");
  }

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& vector() const noexcept { return values_; }

  double prob(std::size_t i) const { return std::exp(values_.at(i)); }

  /// Index of the largest entry; ties go to the smallest index.
  std::size_t argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values_.size(); ++i)
      if (values_[i] > values_[best]) best = i;
    return best;
  }

  friend bool operator==(const LogDistribution&, const LogDistribution&) = default;

 private:
  std::vector<double> values_;
};

/// Softmax in log space: logits[i] - log_sum_exp(logits).
inline LogDistribution normalize_logits(std::span<const double> logits) {
  if (logits.empty()) throw UsageError("normalize_logits: empty input");
  const double m = *std::max_element(logits.begin(), logits.end());
  if (m == kNegInf) throw DegenerateDistributionError("normalize_logits: every logit is -inf");
  if (!std::isfinite(m)) throw NumericError("normalize_logits: non-finite logit");
  std::vector<double> shifted(logits.begin(), logits.end());
  double acc = 0.0;
  for (double& v : shifted) {
    v -= m;
    acc += std::exp(v);
  }
  const double log_z = std::log(acc);
  for (double& v : shifted) v -= log_z;
  return LogDistribution(std::move(shifted));
}

inline LogDistribution normalize_logits(const std::vector<double>& logits) {
  return normalize_logits(std::span<const double>(logits));
}

}  // namespace berag
