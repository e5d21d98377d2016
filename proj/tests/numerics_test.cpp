#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "berag/numerics.hpp"

using namespace berag;

TEST(LogSumExp, TwoEqualPoints) {
  const std::vector<double> v{0.0, 0.0};
  EXPECT_NEAR(log_sum_exp(v), std::log(2.0), 1e-15);
}

TEST(LogSumExp, ZeroMassIsAbsorbed) {
  const std::vector<double> v{kNegInf, 0.0};
  EXPECT_EQ(log_sum_exp(v), 0.0);
}

TEST(LogSumExp, HandCheckedSum) {
  const std::vector<double> v{std::log(0.18), std::log(0.08)};
  EXPECT_NEAR(log_sum_exp(v), std::log(0.26), 1e-15);
  EXPECT_NEAR(log_sum_exp(v), -1.347074, 1e-6);
}

TEST(LogSumExp, AllNegativeInfinity) {
  const std::vector<double> v{kNegInf, kNegInf};
  EXPECT_EQ(log_sum_exp(v), kNegInf);
}

TEST(LogSumExp, LargeValuesDoNotOverflow) {
  const std::vector<double> v{1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(v), 1000.0 + std::log(2.0), 1e-12);
}

TEST(LogSumExp, EmptyInputIsUsageError) {
  const std::vector<double> v;
  EXPECT_THROW(log_sum_exp(v), UsageError);
}

TEST(NormalizeLogits, Symmetric) {
  const auto d = normalize_logits(std::vector<double>{0.0, 0.0});
  EXPECT_NEAR(d[0], std::log(0.5), 1e-15);
  EXPECT_NEAR(d[1], std::log(0.5), 1e-15);
}

TEST(NormalizeLogits, RatioPreserved) {
  const auto d = normalize_logits(std::vector<double>{std::log(9.0), std::log(1.0)});
  EXPECT_NEAR(d[0], std::log(0.9), 1e-15);
  EXPECT_NEAR(d[1], std::log(0.1), 1e-15);
}

TEST(NormalizeLogits, MatchesDirectSoftmax) {
  const std::vector<double> v{1.0, 2.0, 3.0};
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  const auto d = normalize_logits(v);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(d[i], std::log(std::exp(v[i]) / z), 1e-14);
}

TEST(NormalizeLogits, AllNegativeInfinityIsDegenerate) {
  EXPECT_THROW(normalize_logits(std::vector<double>{kNegInf, kNegInf}), DegenerateDistributionError);
}

TEST(NormalizeLogits, KeepsHardZeros) {
  const auto d = normalize_logits(std::vector<double>{0.0, kNegInf});
  EXPECT_EQ(d[0], 0.0);
  EXPECT_EQ(d[1], kNegInf);
}

TEST(NormalizeLogits, RandomInputsSumToOneAndIgnoreShift) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z(0.0, 4.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + rng() % 20);
    for (auto& x : v) x = z(rng);
    const auto d = normalize_logits(v);
    double mass = 0.0;
    for (double x : d.values()) mass += std::exp(x);
    EXPECT_NEAR(mass, 1.0, 1e-12);
    const double c = z(rng);
    std::vector<double> shifted(v);
    for (auto& x : shifted) x += c;
    const auto e = normalize_logits(shifted);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(d[i], e[i], 1e-12);
  }
}

TEST(LogDistribution, RejectsUnnormalized) {
  EXPECT_THROW(LogDistribution(std::vector<double>{0.0, 0.0}), UsageError);
  EXPECT_THROW(LogDistribution(std::vector<double>{}), UsageError);
  EXPECT_THROW(LogDistribution(std::vector<double>{0.1}), UsageError);
  EXPECT_THROW(LogDistribution(std::vector<double>{std::nan("")}), UsageError);
}

TEST(LogDistribution, ArgmaxBreaksTiesByLowestIndex) {
  const LogDistribution d(std::vector<double>{std::log(0.25), std::log(0.375), std::log(0.375)});
  EXPECT_EQ(d.argmax(), 1u);
  EXPECT_NEAR(d.prob(0), 0.25, 1e-15);
}
