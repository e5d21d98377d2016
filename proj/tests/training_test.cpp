#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "berag/bundle.hpp"
#include "berag/decoder.hpp"
#include "berag/harness/kbqa.hpp"
#include "berag/training.hpp"
#include "support/table_backends.hpp"

using namespace berag;
using berag::testing::RandomTableBackend;
using berag::testing::StepTableBackend;

namespace {

const Query kQuery{{1}};

std::vector<Document> plain_docs(std::size_t k, DocId first = 1) {
  std::vector<Document> docs;
  for (std::size_t i = 0; i < k; ++i) docs.push_back(Document{first + i, {1}, false, 0});
  return docs;
}

double loss_value(const Query& q, const std::vector<Token>& target, const std::vector<Document>& docs,
                  const ScorerBackend& backend, const PriorHead& head) {
  ad::Tape tape;
  return beft_loss(tape, q, target, docs, backend, head).scalar();
}

std::vector<TrainingItem> small_kbqa(std::size_t n, std::uint64_t seed) {
  static const harness::SyntheticKB kb(harness::KBConfig{});
  harness::ScenarioConfig sc;
  sc.k = 2;
  sc.n_items = n;
  return harness::gen_kbqa(kb, sc, seed);
}

TrainConfig quick_config() {
  TrainConfig tc;
  tc.k_train = 2;
  tc.epochs = 3;
  tc.batch_size = 16;
  tc.optimizer = Optimizer::adam;
  tc.backbone_lr = 0.01;
  tc.prior_head_lr = 0.01;
  tc.seed = 3;
  return tc;
}

}  // namespace

TEST(BeftLoss, WorkedExample) {
  const StepTableBackend backend(2, {{1, {{0.9, 0.1}, {0.8, 0.2}}}, {2, {{0.1, 0.9}, {0.2, 0.8}}}});
  const double loss = loss_value(kQuery, {0, 1}, plain_docs(2), backend, PriorHead(1));
  EXPECT_NEAR(loss, -std::log(0.13), 1e-14);
  EXPECT_NEAR(loss, 2.0402, 1e-4);
}

TEST(BeftLoss, SingleDocumentIsPlainNll) {
  const RandomTableBackend backend(10, 4);
  const auto docs = plain_docs(1);
  const std::vector<Token> target{3, 8, 0};
  double nll = 0.0;
  for (std::size_t j = 0; j < target.size(); ++j)
    nll -= std::log(backend.probabilities(1, std::span(target).first(j))[target[j]]);
  EXPECT_NEAR(loss_value(kQuery, target, docs, backend, PriorHead::random(2, 1)), nll, 1e-12);
}

TEST(BeftLoss, MatchesSequenceLikelihood) {
  const RandomTableBackend backend(10, 5);
  const PriorHead head = PriorHead::random(2, 8);
  const auto docs = plain_docs(4);
  const std::vector<Token> target{2, 5, 9, 1};
  const double ll = sequence_log_likelihood(kQuery, target, docs, backend, head);
  EXPECT_NEAR(loss_value(kQuery, target, docs, backend, head), -ll, 1e-12);
}

TEST(BeftLoss, PermutationInvariant) {
  const RandomTableBackend backend(10, 6);
  const PriorHead head = PriorHead::random(2, 2);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    auto docs = plain_docs(2 + trial % 6, 1 + trial);
    const std::vector<Token> target{static_cast<Token>(trial % 10), 4, 0};
    const double a = loss_value(kQuery, target, docs, backend, head);
    std::shuffle(docs.begin(), docs.end(), rng);
    EXPECT_NEAR(loss_value(kQuery, target, docs, backend, head), a, 1e-12);
  }
}

TEST(BeftLoss, BoundedByBestSingleDocumentPlusLogK) {
  // The mixture likelihood is at least (prior weight) x (that document's likelihood).
  const RandomTableBackend backend(10, 7);
  const PriorHead head(2);
  const auto docs = plain_docs(5);
  const std::vector<Token> target{1, 2, 3};
  double best = std::numeric_limits<double>::infinity();
  for (const auto& d : docs) best = std::min(best, loss_value(kQuery, target, {d}, backend, head));
  EXPECT_LE(loss_value(kQuery, target, docs, backend, head), best + std::log(5.0) + 1e-12);
}

TEST(PriorLoss, ZeroLogitsGiveLogTwo) {
  const RandomTableBackend backend(10, 1);
  std::vector<TrainingItem> items{{"a", kQuery, {1}, plain_docs(3)}};
  items[0].docs[1].relevance = 1;
  ad::Tape tape;
  EXPECT_NEAR(prior_loss(tape, items, backend, PriorHead(2)).scalar(), std::log(2.0), 1e-15);
}

TEST(PriorLoss, ConfidentCorrectLogitApproachesZero) {
  const RandomTableBackend backend(10, 1);
  std::vector<TrainingItem> items{{"a", kQuery, {1}, {Document{3, {1}, false, 1}}}};
  PriorHead head(2);
  head.parameters().get("prior.b2").value[0] = 40.0;
  ad::Tape tape;
  EXPECT_LT(prior_loss(tape, items, backend, head).scalar(), 1e-15);
}

TEST(PriorLoss, MatchesDirectScalarComputation) {
  const RandomTableBackend backend(10, 1);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    PriorHead head = PriorHead::random(2, seed, Activation::tanh, 2.0);
    head.parameters().get("prior.b2").value[0] = 0.1 * static_cast<double>(seed) - 0.5;
    std::vector<TrainingItem> items;
    std::mt19937_64 rng(seed);
    for (int i = 0; i < 3; ++i) {
      TrainingItem item{"i" + std::to_string(i), kQuery, {1}, plain_docs(4, 1 + 4 * i)};
      for (auto& d : item.docs) d.relevance = static_cast<int>(rng() % 2);
      items.push_back(item);
    }
    double expected = 0.0;
    std::size_t n = 0;
    for (const auto& item : items) {
      for (const auto& d : item.docs) {
        const double s = head.prior_logit(backend.summary_embedding(item.query, d));
        const double sig = 1.0 / (1.0 + std::exp(-s));
        expected -= *d.relevance == 1 ? std::log(sig) : std::log(1.0 - sig);
        ++n;
      }
    }
    ad::Tape tape;
    EXPECT_NEAR(prior_loss(tape, items, backend, head).scalar(), expected / static_cast<double>(n), 1e-12);
  }
}

TEST(PriorLoss, MissingLabelIsUsageError) {
  const RandomTableBackend backend(10, 1);
  std::vector<TrainingItem> items{{"a", kQuery, {1}, plain_docs(2)}};
  items[0].docs[0].relevance.reset();
  ad::Tape tape;
  EXPECT_THROW(prior_loss(tape, items, backend, PriorHead(2)), UsageError);
}

TEST(Augmentation, Rates) {
  const auto items = small_kbqa(10000, 5);
  EXPECT_EQ(augment_with_null(items, 0.0, 1), items);
  for (const auto& item : augment_with_null(items, 1.0, 1)) {
    ASSERT_FALSE(item.gold_index());
    EXPECT_EQ(std::count_if(item.docs.begin(), item.docs.end(), [](const Document& d) { return d.is_null; }), 1);
  }
  const auto half = augment_with_null(items, 0.5, 1);
  std::size_t replaced = 0;
  for (const auto& item : half) replaced += item.gold_index() ? 0 : 1;
  EXPECT_NEAR(static_cast<double>(replaced) / 10000.0, 0.5, 0.02);
  EXPECT_EQ(augment_with_null(items, 0.5, 1), half);
}

TEST(Augmentation, ItemWithoutGoldIsUsageError) {
  std::vector<TrainingItem> items{{"a", kQuery, {1}, plain_docs(2)}};
  EXPECT_THROW(augment_with_null(items, 0.5, 1), UsageError);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  auto bundle = make_tiny_bundle(TinyConfig{});
  const auto before = bundle;
  auto tc = quick_config();
  tc.epochs = 1;
  tc.optimizer = Optimizer::sgd;
  tc.backbone_lr = 0.0;
  tc.prior_head_lr = 0.0;
  train(small_kbqa(64, 1), tc, bundle);
  EXPECT_EQ(bundle.backend->parameters()->items()[0].value, before.backend->parameters()->items()[0].value);
  for (std::size_t i = 0; i < bundle.backend->parameters()->items().size(); ++i)
    EXPECT_EQ(bundle.backend->parameters()->items()[i].value, before.backend->parameters()->items()[i].value);
  for (std::size_t i = 0; i < bundle.prior_head.parameters().items().size(); ++i)
    EXPECT_EQ(bundle.prior_head.parameters().items()[i].value, before.prior_head.parameters().items()[i].value);
}

TEST(Train, LossDecreases) {
  auto bundle = make_tiny_bundle(TinyConfig{});
  const auto result = train(small_kbqa(500, 2), quick_config(), bundle);
  ASSERT_EQ(result.curve.size(), 3u);
  EXPECT_LT(result.curve.back().mean_loss, result.curve.front().mean_loss);
  for (std::size_t e = 1; e < result.curve.size(); ++e)
    EXPECT_LE(result.curve[e].mean_loss, result.curve[e - 1].mean_loss * 1.05);
}

TEST(Train, DeterministicAcrossThreadCounts) {
  const auto data = small_kbqa(96, 3);
  auto tc = quick_config();
  tc.epochs = 1;
  tc.include_prior_loss = true;
  auto a = make_tiny_bundle(TinyConfig{});
  auto b = make_tiny_bundle(TinyConfig{});
  const auto ra = train(data, tc, a);
  tc.threads = 3;
  const auto rb = train(data, tc, b);
  EXPECT_EQ(ra.curve.front().mean_loss, rb.curve.front().mean_loss);
  for (std::size_t i = 0; i < a.backend->parameters()->items().size(); ++i)
    EXPECT_EQ(a.backend->parameters()->items()[i].value, b.backend->parameters()->items()[i].value);
}

TEST(Train, RejectsMismatchedListLength) {
  auto bundle = make_tiny_bundle(TinyConfig{});
  auto tc = quick_config();
  tc.k_train = 3;
  EXPECT_THROW(train(small_kbqa(8, 1), tc, bundle), UsageError);
}

TEST(Train, PriorLossNeedsLabels) {
  auto bundle = make_tiny_bundle(TinyConfig{});
  auto data = small_kbqa(8, 1);
  data[3].docs[0].relevance.reset();
  auto tc = quick_config();
  tc.include_prior_loss = true;
  EXPECT_THROW(train(data, tc, bundle), UsageError);
}

TEST(Train, LossCurveCsv) {
  TrainResult r;
  r.curve.push_back({0, 1.5, 0.25});
  EXPECT_EQ(loss_curve_csv(r), "epoch,mean_loss,prior_loss\n0,1.5,0.25\n");
}
