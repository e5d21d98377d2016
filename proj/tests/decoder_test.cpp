#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "berag/bundle.hpp"
#include "berag/decoder.hpp"
#include "support/table_backends.hpp"

using namespace berag;
using berag::testing::RandomTableBackend;
using berag::testing::StepTableBackend;

namespace {

LogDistribution from_probs(std::vector<double> p) {
  for (double& x : p) x = std::log(x);
  return LogDistribution(std::move(p));
}

std::vector<Document> plain_docs(std::size_t k, DocId first = 1) {
  std::vector<Document> docs;
  for (std::size_t i = 0; i < k; ++i) docs.push_back(Document{first + i, {1}, false, std::nullopt});
  return docs;
}

const Query kQuery{{1}};

// Tokens: a = 0, b = 1. Step 1: doc 1 gives P(a) = 0.9, doc 2 gives 0.1.
// Step 2: P(b) = 0.2 and 0.8.
StepTableBackend worked_example_backend() {
  return StepTableBackend(2, {{1, {{0.9, 0.1}, {0.8, 0.2}}}, {2, {{0.1, 0.9}, {0.2, 0.8}}}});
}

}  // namespace

TEST(InitState, UniformAndSingleton) {
  const auto docs = plain_docs(2);
  const EnsembleState s(docs, from_probs({0.5, 0.5}));
  EXPECT_EQ(s.posterior_probs(), (std::vector<double>{0.5, 0.5}));
  const auto one = plain_docs(1);
  EXPECT_EQ(EnsembleState(one, LogDistribution({0.0})).posterior_probs(), std::vector<double>{1.0});
}

TEST(InitState, ZeroPriorMassIsAbsorbing) {
  const auto docs = plain_docs(2);
  EnsembleState s(docs, LogDistribution({0.0, kNegInf}));
  const std::vector<LogDistribution> per_doc{from_probs({0.01, 0.99}), from_probs({0.99, 0.01})};
  for (int step = 0; step < 5; ++step) {
    s = update_posterior(std::move(s), 0, per_doc);
    EXPECT_EQ(s.posterior_probs(), (std::vector<double>{1.0, 0.0}));
  }
}

TEST(InitState, UsesHeadAndBackend) {
  const auto docs = plain_docs(3);
  const RandomTableBackend backend(32, 1);
  const auto s = init_state(kQuery, docs, PriorHead(2), backend);
  for (double p : s.posterior_probs()) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
}

TEST(StepMixture, Average) {
  const auto docs = plain_docs(2);
  const EnsembleState s(docs, from_probs({0.5, 0.5}));
  const std::vector<LogDistribution> per_doc{from_probs({0.9, 0.1}), from_probs({0.1, 0.9})};
  EXPECT_NEAR(step_mixture(s, per_doc).prob(0), 0.5, 1e-15);
}

TEST(StepMixture, WeightedSum) {
  const auto docs = plain_docs(2);
  const EnsembleState s(docs, from_probs({0.9, 0.1}));
  const std::vector<LogDistribution> per_doc{from_probs({0.8, 0.2}), from_probs({0.2, 0.8})};
  EXPECT_NEAR(step_mixture(s, per_doc).prob(1), 0.9 * 0.2 + 0.1 * 0.8, 1e-15);
}

TEST(StepMixture, DegeneratePosteriorReturnsThatDocument) {
  const auto docs = plain_docs(2);
  const EnsembleState s(docs, LogDistribution({0.0, kNegInf}));
  const std::vector<LogDistribution> per_doc{from_probs({0.3, 0.7}), from_probs({0.6, 0.4})};
  const auto m = step_mixture(s, per_doc);
  EXPECT_EQ(m[0], per_doc[0][0]);
  EXPECT_EQ(m[1], per_doc[0][1]);
}

TEST(StepMixture, SizeMismatchIsUsageError) {
  const auto docs = plain_docs(2);
  const EnsembleState s(docs, from_probs({0.5, 0.5}));
  const std::vector<LogDistribution> one{from_probs({0.5, 0.5})};
  EXPECT_THROW(step_mixture(s, one), UsageError);
  const std::vector<LogDistribution> ragged{from_probs({0.5, 0.5}), from_probs({0.2, 0.3, 0.5})};
  EXPECT_THROW(step_mixture(s, ragged), UsageError);
}

TEST(UpdatePosterior, TwoStepWorkedExample) {
  const auto docs = plain_docs(2);
  EnsembleState s(docs, from_probs({0.5, 0.5}));
  s = update_posterior(std::move(s), 0, std::vector<LogDistribution>{from_probs({0.9, 0.1}), from_probs({0.1, 0.9})});
  auto p = s.posterior_probs();
  EXPECT_NEAR(p[0], 0.9, 1e-15);
  EXPECT_NEAR(p[1], 0.1, 1e-15);
  s = update_posterior(std::move(s), 1, std::vector<LogDistribution>{from_probs({0.8, 0.2}), from_probs({0.2, 0.8})});
  p = s.posterior_probs();
  EXPECT_NEAR(p[0], 0.18 / 0.26, 1e-14);
  EXPECT_NEAR(p[1], 0.08 / 0.26, 1e-14);
  EXPECT_NEAR(p[0], 0.6923, 1e-4);
}

TEST(UpdatePosterior, IdenticalLikelihoodsLeavePosteriorUnchanged) {
  const auto docs = plain_docs(3);
  EnsembleState s(docs, from_probs({0.2, 0.5, 0.3}));
  const auto before = s.posterior_probs();
  const auto d = from_probs({0.25, 0.75});
  s = update_posterior(std::move(s), 1, std::vector<LogDistribution>{d, d, d});
  const auto after = s.posterior_probs();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(after[i], before[i], 1e-15);
}

TEST(PruneTopP, KeepsSmallestSetReachingThreshold) {
  const auto docs = plain_docs(10);
  const std::vector<double> probs{0.90, 0.06, 0.01, 0.01, 0.01, 0.01, 0, 0, 0, 0};
  std::vector<double> lp;
  for (double p : probs) lp.push_back(p > 0 ? std::log(p) : kNegInf);
  const auto s = prune_top_p(EnsembleState(docs, LogDistribution(lp)), 10);
  EXPECT_EQ(s.active_count(), 2u);
  EXPECT_TRUE(s.is_active(0));
  EXPECT_TRUE(s.is_active(1));
}

TEST(PruneTopP, AllMassOnOne) {
  const auto docs = plain_docs(10);
  std::vector<double> lp(10, kNegInf);
  lp[3] = 0.0;
  const auto s = prune_top_p(EnsembleState(docs, LogDistribution(lp)), 10);
  EXPECT_EQ(s.active_count(), 1u);
  EXPECT_TRUE(s.is_active(3));
}

TEST(PruneTopP, UniformKeepsAll) {
  const auto docs = plain_docs(10);
  const auto s = prune_top_p(EnsembleState(docs, LogDistribution(std::vector<double>(10, std::log(0.1)))), 10);
  EXPECT_EQ(s.active_count(), 10u);
}

TEST(PruneTopP, MatchesCumulativeSumOracle) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng() % 20;
    const auto docs = plain_docs(k);
    std::vector<double> logits(k);
    for (auto& x : logits) x = z(rng);
    const auto prior = normalize_logits(logits);
    const auto s = prune_top_p(EnsembleState(docs, prior), k);
    std::vector<double> p(k);
    for (std::size_t i = 0; i < k; ++i) p[i] = prior.prob(i);
    std::sort(p.begin(), p.end(), std::greater<>());
    double mass = 0.0;
    std::size_t keep = 0;
    while (keep < k && mass < 1.0 - 1.0 / (2.0 * static_cast<double>(k))) mass += p[keep++];
    EXPECT_EQ(s.active_count(), keep);
  }
}

TEST(BeragDecode, OracleWithoutNoiseEmitsGoldAnswer) {
  OracleConfig c;
  c.epsilon = 0.0;
  const auto bundle = make_oracle_bundle(c);
  const Query q{{20, 21}};
  const std::vector<Document> docs{Document{5, {22, 21, 40, vocab::kSep}, false, std::nullopt},
                                   Document{6, {20, 21, 30, 31, 32, vocab::kSep}, false, std::nullopt},
                                   Document{9, {20, 23, 41, vocab::kSep}, false, std::nullopt}};
  const auto r = berag_decode(q, docs, *bundle.backend, bundle.prior_head, DecodeConfig{});
  EXPECT_EQ(r.tokens, (std::vector<Token>{30, 31, 32}));
}

TEST(BeragDecode, SingleDocumentMatchesDirectDecoding) {
  const auto bundle = make_tiny_bundle(TinyConfig{});
  for (std::size_t n = 0; n < 20; ++n) {
    const std::vector<Document> docs{Document{n + 1, {13, static_cast<Token>(20 + n), 30, 31, 1}, false, std::nullopt}};
    const Query q{{13, static_cast<Token>(20 + n)}};
    const auto a = berag_decode(q, docs, *bundle.backend, bundle.prior_head, DecodeConfig{});
    const auto b = single_document_decode(q, docs[0], *bundle.backend, DecodeConfig{});
    EXPECT_EQ(a.tokens, b.tokens);
  }
}

TEST(BeragDecode, PermutationGivesSameTokensAndPermutedTrace) {
  const RandomTableBackend backend(12, 9, 1.5);
  const PriorHead head = PriorHead::random(2, 4);
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const auto docs = plain_docs(2 + trial % 7, 1 + trial);
    DecodeConfig dc;
    dc.eos = 11;
    dc.top_p_pruning = trial % 2 == 0;
    const auto base = berag_decode(kQuery, docs, backend, head, dc);
    std::vector<std::size_t> perm(docs.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Document> shuffled;
    for (std::size_t i : perm) shuffled.push_back(docs[i]);
    const auto other = berag_decode(kQuery, shuffled, backend, head, dc);
    ASSERT_EQ(base.tokens, other.tokens);
    ASSERT_EQ(base.trace.steps.size(), other.trace.steps.size());
    for (std::size_t j = 0; j < base.trace.steps.size(); ++j) {
      EXPECT_EQ(base.trace.steps[j].active, other.trace.steps[j].active);
      for (std::size_t i = 0; i < perm.size(); ++i)
        EXPECT_EQ(other.trace.steps[j].posterior[i], base.trace.steps[j].posterior[perm[i]]);
    }
  }
}

TEST(BeragDecode, DeflectionNeedsEmptyPassage) {
  const RandomTableBackend backend(12, 1);
  const auto docs = plain_docs(2);
  DecodeConfig dc;
  dc.deflection = true;
  const auto r = berag_decode(kQuery, docs, backend, PriorHead(2), dc);
  EXPECT_EQ(r.docs.size(), 3u);
  EXPECT_TRUE(r.docs.back().is_null);
  EXPECT_THROW(berag_decode_with_prior(kQuery, docs, backend, from_probs({0.5, 0.5}), dc), UsageError);
}

TEST(SequenceLikelihood, WorkedExample) {
  const auto backend = worked_example_backend();
  const auto docs = plain_docs(2);
  const std::vector<Token> answer{0, 1};
  const double ll = sequence_log_likelihood_with_prior(kQuery, answer, docs, backend, from_probs({0.5, 0.5}));
  EXPECT_NEAR(std::exp(ll), 0.5 * 0.9 * 0.2 + 0.5 * 0.1 * 0.8, 1e-15);
  EXPECT_NEAR(std::exp(ll), 0.5 * 0.26, 1e-15);
}

TEST(SequenceLikelihood, OneHotPriorEqualsSingleDocument) {
  const RandomTableBackend backend(10, 2);
  const auto docs = plain_docs(3);
  const std::vector<Token> answer{4, 7, 1};
  const double ll = sequence_log_likelihood_with_prior(kQuery, answer, docs, backend,
                                                       LogDistribution({kNegInf, 0.0, kNegInf}));
  double direct = 0.0;
  for (std::size_t j = 0; j < answer.size(); ++j)
    direct += std::log(backend.probabilities(docs[1].doc_id, std::span(answer).first(j))[answer[j]]);
  EXPECT_NEAR(ll, direct, 1e-12);
}

TEST(SequenceLikelihood, SingleTokenSingleDocument) {
  const StepTableBackend backend(3, {{1, {{0.2, 0.3, 0.5}}}});
  const auto docs = plain_docs(1);
  const std::vector<Token> answer{1};
  EXPECT_NEAR(sequence_log_likelihood_with_prior(kQuery, answer, docs, backend, LogDistribution({0.0})),
              std::log(0.3), 1e-15);
}

TEST(ConcatDecode, OutOfLength) {
  const RandomTableBackend backend(16, 1);
  std::vector<Document> docs;
  for (DocId i = 1; i <= 4; ++i) docs.push_back(Document{i, std::vector<Token>(50, 13), false, std::nullopt});
  DecodeConfig dc;
  dc.context_limit = 128;
  EXPECT_THROW(concat_decode(kQuery, docs, backend, dc), OutOfLengthError);
  dc.context_limit = 4096;
  EXPECT_NO_THROW(concat_decode(kQuery, docs, backend, dc));
}

TEST(ConcatDecode, SingleDocumentMatchesEnsemble) {
  const auto bundle = make_tiny_bundle(TinyConfig{});
  for (std::size_t n = 0; n < 20; ++n) {
    const std::vector<Document> docs{Document{n + 1, {13, static_cast<Token>(20 + n), 40, 41, 1, 50}, false, std::nullopt}};
    const Query q{{13, static_cast<Token>(20 + n)}};
    EXPECT_EQ(concat_decode(q, docs, *bundle.backend, DecodeConfig{}).tokens,
              berag_decode(q, docs, *bundle.backend, bundle.prior_head, DecodeConfig{}).tokens);
  }
}

TEST(CostCounters, PrefillPairs) {
  EXPECT_EQ(ensemble_prefill_pairs(4, 10, 2), 4u * 12u * 12u);
  EXPECT_EQ(concat_prefill_pairs(4, 10, 2), 42u * 42u);
  const RandomTableBackend backend(16, 1);
  std::vector<Document> docs;
  for (DocId i = 1; i <= 5; ++i) docs.push_back(Document{i, std::vector<Token>(10, 13), false, std::nullopt});
  DecodeConfig dc;
  dc.max_new_tokens = 1;
  EXPECT_EQ(berag_decode(kQuery, docs, backend, PriorHead(2), dc).trace.total.prefill_pairs,
            ensemble_prefill_pairs(5, 10, kQuery.tokens.size()));
  EXPECT_EQ(concat_decode(kQuery, docs, backend, dc).trace.total.prefill_pairs,
            concat_prefill_pairs(5, 10, kQuery.tokens.size()));
}
