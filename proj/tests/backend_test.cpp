#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "berag/backend.hpp"
#include "berag/oracle_backend.hpp"
#include "berag/tiny_backend.hpp"

using namespace berag;

namespace {

// Query [20, 21]; the fact document shares the key and carries value [30, 31].
const Query kQuery{{20, 21}};
const Document kFact{7, {20, 21, 30, 31, vocab::kSep, 40, 41}, false, std::nullopt};
const Document kOther{8, {22, 23, 32, vocab::kSep, 42}, false, std::nullopt};

TinyConfig tiny16() {
  TinyConfig c;
  c.vocab_size = 16;
  c.dim = 16;
  c.seed = 42;
  return c;
}

}  // namespace

TEST(OracleBackend, GoldTokenGetsOneMinusEpsilon) {
  OracleConfig c;
  c.vocab_size = 64;
  c.epsilon = 0.05;
  const OracleBackend oracle(c);
  const std::vector<Token> history{30};
  const auto d = oracle.next_token_logdist(kQuery, kFact, history);
  EXPECT_NEAR(d.prob(31), 0.95, 1e-15);
  for (Token t = 0; t < 64; ++t) {
    if (t == 31) continue;
    EXPECT_NEAR(d.prob(t), 0.05 / 63.0, 1e-15);
  }
  const std::vector<Token> done{30, 31};
  EXPECT_NEAR(oracle.next_token_logdist(kQuery, kFact, done).prob(vocab::kEos), 0.95, 1e-15);
}

TEST(OracleBackend, IrrelevantDocumentIsUniform) {
  const OracleBackend oracle;
  const auto d = oracle.next_token_logdist(kQuery, kOther, {});
  for (double v : d.vector()) EXPECT_DOUBLE_EQ(v, std::log(1.0 / 64.0));
  const std::vector<Token> off_path{33};
  const auto off = oracle.next_token_logdist(kQuery, kFact, off_path);
  for (double v : off.vector()) EXPECT_DOUBLE_EQ(v, std::log(1.0 / 64.0));
}

TEST(OracleBackend, FeaturesAndValidation) {
  const OracleBackend oracle;
  const auto e = oracle.summary_embedding(kQuery, kFact);
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e.values[0], 1.0);
  EXPECT_EQ(e.values[2], 0.0);
  EXPECT_EQ(oracle.summary_embedding(kQuery, Document::null_document()).values[2], 1.0);
  const std::vector<Token> bad{64};
  EXPECT_THROW(oracle.next_token_logdist(kQuery, kFact, bad), UsageError);
  EXPECT_THROW(oracle.next_token_logdist(Query{{99}}, kFact, {}), UsageError);
  EXPECT_THROW(oracle.next_token_logdist(Query{}, kFact, {}), UsageError);
}

TEST(TinyBackend, SeededDistributionIsNormalized) {
  const TinyBackend tiny(tiny16());
  const Query q{{3, 4, 5}};
  const Document doc{1, {6, 7, 8, 9}, false, std::nullopt};
  for (std::size_t n = 0; n < 4; ++n) {
    const std::vector<Token> history(n, 10);
    const auto d = tiny.next_token_logdist(q, doc, history);
    ASSERT_EQ(d.size(), 16u);
    double mass = 0.0;
    for (double v : d.values()) mass += std::exp(v);
    EXPECT_NEAR(mass, 1.0, 1e-12);
  }
}

TEST(TinyBackend, SeededSnapshot) {
  const TinyBackend tiny(tiny16());
  const Query q{{3, 4, 5}};
  const Document doc{1, {6, 7, 8, 9}, false, std::nullopt};
  const auto d = tiny.next_token_logdist(q, doc, {});
  const auto e = tiny.summary_embedding(q, doc);
  ASSERT_EQ(e.size(), 16u);
  // Recorded from the seed-42 initialization.
  const std::vector<double> logdist_head{-3.1357986985630735, -2.8053070723283393, -3.0114736952960888, -2.5426387701957447};
  const std::vector<double> summary_head{0.14318247951195026, -0.22059436476564692, 0.20048728449551656, -0.2045209764318954};
  for (std::size_t i = 0; i < logdist_head.size(); ++i) EXPECT_NEAR(d[i], logdist_head[i], 1e-12) << i;
  for (std::size_t i = 0; i < summary_head.size(); ++i) EXPECT_NEAR(e.values[i], summary_head[i], 1e-12) << i;
}

TEST(TinyBackend, SummaryIsDeterministic) {
  const TinyBackend a(tiny16()), b(tiny16());
  const Query q{{3, 4}};
  const Document doc{2, {9, 10, 11}, false, std::nullopt};
  EXPECT_EQ(a.summary_embedding(q, doc), a.summary_embedding(q, doc));
  EXPECT_EQ(a.summary_embedding(q, doc), b.summary_embedding(q, doc));
  auto other = tiny16();
  other.seed = 43;
  EXPECT_NE(TinyBackend(other).summary_embedding(q, doc), a.summary_embedding(q, doc));
}

TEST(TinyBackend, TapeAndPlainFormsAgree) {
  const TinyBackend tiny(tiny16());
  const Query q{{3, 4}};
  const Document doc{2, {9, 10, 11}, false, std::nullopt};
  const std::vector<Token> history{12};
  ad::Tape tape;
  const auto v = tiny.next_token_logprobs(tape, q, doc, history);
  const auto d = tiny.next_token_logdist(q, doc, history);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(v.value()[i], d[i]);
}

TEST(PriorHead, ZeroHeadScoresZero) {
  const PriorHead head(4);
  EXPECT_EQ(head.prior_logit(SummaryEmbedding{{1.0, -2.0, 3.0, 0.5}}), 0.0);
  EXPECT_THROW(head.prior_logit(SummaryEmbedding{{1.0}}), UsageError);
}

TEST(PriorHead, IdentityProjection) {
  PriorHead head(3, Activation::identity);
  auto& w1 = head.parameters().get("prior.w1");
  for (std::size_t i = 0; i < 3; ++i) w1.at(i, i) = 1.0;
  head.parameters().get("prior.w2").value = {1.0, 0.0, 0.0};
  EXPECT_EQ(head.prior_logit(SummaryEmbedding{{0.37, 5.0, -2.0}}), 0.37);
}

TEST(PriorHead, MatchesDirectMatrixArithmetic) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const std::size_t d = 2 + seed % 5;
    PriorHead head = PriorHead::random(d, seed);
    std::mt19937_64 rng(seed * 31);
    std::normal_distribution<double> z(0.0, 1.0);
    for (double& b : head.parameters().get("prior.b1").value) b = z(rng);
    head.parameters().get("prior.b2").value[0] = z(rng);
    SummaryEmbedding e;
    for (std::size_t i = 0; i < d; ++i) e.values.push_back(z(rng));

    const auto& p = head.parameters();
    double expected = p.get("prior.b2").value[0];
    for (std::size_t r = 0; r < d; ++r) {
      double h = p.get("prior.b1").value[r];
      for (std::size_t c = 0; c < d; ++c) h += p.get("prior.w1").at(r, c) * e.values[c];
      expected += p.get("prior.w2").value[r] * std::tanh(h);
    }
    EXPECT_NEAR(head.prior_logit(e), expected, 1e-12);
  }
}

TEST(PriorDistribution, SmallCases) {
  const OracleBackend oracle;
  const PriorHead zero(3);
  const std::vector<Document> one{kFact};
  EXPECT_EQ(prior_distribution(zero, oracle, kQuery, one)[0], 0.0);
  const std::vector<Document> two{kFact, kOther};
  const auto eq = prior_distribution(zero, oracle, kQuery, two);
  EXPECT_NEAR(eq[0], std::log(0.5), 1e-15);
  EXPECT_NEAR(eq[1], std::log(0.5), 1e-15);
  const std::vector<double> logits{std::log(4.0), std::log(1.0)};
  const auto r = normalize_over_documents(logits, two);
  EXPECT_NEAR(r[0], std::log(0.8), 1e-15);
  EXPECT_NEAR(r[1], std::log(0.2), 1e-15);
  EXPECT_THROW(prior_distribution(zero, oracle, kQuery, std::vector<Document>{}), UsageError);
}

TEST(PriorDistribution, RejectsDuplicateIds) {
  const std::vector<Document> dup{kFact, kFact};
  EXPECT_THROW(normalize_over_documents(std::vector<double>{0.0, 0.0}, dup), UsageError);
}
