// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include "conlleval_oracle.hpp"
#include "fixtures.hpp"
#include "slu/error.hpp"
#include "slu/metrics.hpp"
#include "slu/rng.hpp"

using namespace slu;
using namespace slu::eval;

using slu::testing::ChunkKey;
using slu::testing::oracle_chunks;

namespace {

using Labels = std::vector<std::string>;
Labels random_labels(Rng& rng, std::size_t n) {
  static const char* pool[] = {"O", "B-a", "I-a", "B-b", "I-b", "B-c", "I-c"};
  Labels out(n);
  for (auto& l : out) l = pool[rng.below(7)];
  return out;
}

data::Utterance gold_of(const Labels& labels, const std::string& domain = "d") {
  data::Utterance u;
  u.tokens.assign(labels.size(), "w");
  u.labels = labels;
  u.domain = domain;
  return u;
}

}  // namespace

TEST(ExtractChunks, Examples) {
  Labels a = {"O", "B-city", "I-city", "O"};
  EXPECT_EQ(extract_chunks(a), (std::vector<Chunk>{{"city", 1, 2, 0}}));
  Labels b = {"I-city", "O"};
  EXPECT_EQ(extract_chunks(b), (std::vector<Chunk>{{"city", 0, 0, 0}}));
  Labels c = {"B-a", "I-b", "I-b"};
  EXPECT_EQ(extract_chunks(c), (std::vector<Chunk>{{"a", 0, 0, 0}, {"b", 1, 2, 0}}));
  Labels d = {"B-a", "B-a", "I-a"};
  EXPECT_EQ(extract_chunks(d), (std::vector<Chunk>{{"a", 0, 0, 0}, {"a", 1, 2, 0}}));
  EXPECT_TRUE(extract_chunks(Labels{}).empty());
}

TEST(ExtractChunks, OrderedAndDisjoint) {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    auto labels = random_labels(rng, 1 + rng.below(15));
    auto chunks = extract_chunks(labels);
    for (std::size_t k = 0; k < chunks.size(); ++k) {
      EXPECT_LE(chunks[k].start, chunks[k].end);
      if (k > 0) EXPECT_LT(chunks[k - 1].end, chunks[k].start);
    }
  }
}

TEST(ChunkF1, HandComputedExamples) {
  std::vector<data::Utterance> gold = {gold_of({"B-x", "I-x", "O"})};
  std::vector<Labels> same = {{"B-x", "I-x", "O"}};
  Scores s = chunk_f1(gold, same);
  EXPECT_EQ(s.precision, 100.0);
  EXPECT_EQ(s.recall, 100.0);
  EXPECT_EQ(s.f1, 100.0);

  std::vector<Labels> cut = {{"B-x", "O", "O"}};
  s = chunk_f1(gold, cut);
  EXPECT_EQ(s.precision, 0.0);
  EXPECT_EQ(s.recall, 0.0);
  EXPECT_EQ(s.f1, 0.0);

  std::vector<data::Utterance> two = {gold_of({"B-x", "O", "B-y", "O"})};
  std::vector<Labels> half = {{"B-x", "B-z", "O", "O"}};
  s = chunk_f1(two, half);
  EXPECT_EQ(s.precision, 50.0);
  EXPECT_EQ(s.recall, 50.0);
  EXPECT_EQ(s.f1, 50.0);
}

TEST(ChunkF1, NoChunksAnywhereIsZero) {
  std::vector<data::Utterance> gold = {gold_of({"O", "O"})};
  std::vector<Labels> pred = {{"O", "O"}};
  EXPECT_EQ(chunk_f1(gold, pred).f1, 0.0);
  EXPECT_EQ(chunk_f1(gold, pred).token_accuracy, 100.0);
}

TEST(ChunkF1, LengthMismatchNamesUtterance) {
  std::vector<data::Utterance> gold = {gold_of({"O"}), gold_of({"O", "B-a"})};
  std::vector<Labels> pred = {{"O"}, {"O"}};
  try {
    chunk_f1(gold, pred);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("utterance 1"), std::string::npos) << e.what();
  }
  try {
    evaluate(gold, pred);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("utterance 1"), std::string::npos) << e.what();
  }
  pred.pop_back();
  EXPECT_THROW(chunk_f1(gold, pred), ContractError);
}

TEST(ChunkF1, MatchesBruteForceOracleOn1000Pairs) {
  Rng rng(2024);
  std::vector<data::Utterance> gold;
  std::vector<Labels> pred;
  std::set<ChunkKey> gold_set, pred_set;
  for (std::size_t i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.below(12);
    auto g = random_labels(rng, n);
    auto p = random_labels(rng, n);
    // Bias towards overlap so true positives occur often.
    for (std::size_t t = 0; t < n; ++t) {
      if (rng.bernoulli(0.6)) p[t] = g[t];
    }
    auto go = oracle_chunks(g, i), po = oracle_chunks(p, i);
    gold_set.insert(go.begin(), go.end());
    pred_set.insert(po.begin(), po.end());

    // Per pair: identical chunk sets and identical single-pair scores.
    std::set<ChunkKey> mine;
    for (const auto& c : extract_chunks(p, i)) mine.insert({c.utterance, c.start, c.end, c.type});
    ASSERT_EQ(mine, po);
    std::vector<data::Utterance> g1 = {gold_of(g)};
    std::vector<Labels> p1 = {p};
    Counts c = count_chunks(g1, p1);
    std::vector<ChunkKey> inter;
    auto go0 = oracle_chunks(g, 0), po0 = oracle_chunks(p, 0);
    std::set_intersection(go0.begin(), go0.end(), po0.begin(), po0.end(), std::back_inserter(inter));
    ASSERT_EQ(c.correct_chunks, inter.size());
    ASSERT_EQ(c.gold_chunks, go0.size());
    ASSERT_EQ(c.predicted_chunks, po0.size());

    gold.push_back(gold_of(g));
    pred.push_back(p);
  }
  std::vector<ChunkKey> inter;
  std::set_intersection(gold_set.begin(), gold_set.end(), pred_set.begin(), pred_set.end(), std::back_inserter(inter));
  const double p = 100.0 * inter.size() / pred_set.size();
  const double r = 100.0 * inter.size() / gold_set.size();
  const double f = 2 * p * r / (p + r);
  Scores s = chunk_f1(gold, pred);
  EXPECT_EQ(s.precision, std::round(p * 100) / 100);
  EXPECT_EQ(s.recall, std::round(r * 100) / 100);
  EXPECT_EQ(s.f1, std::round(f * 100) / 100);
}

TEST(ChunkF1, PermutationInvariant) {
  Rng rng(5);
  std::vector<data::Utterance> gold;
  std::vector<Labels> pred;
  for (int i = 0; i < 200; ++i) {
    auto g = random_labels(rng, 1 + rng.below(9));
    auto p = g;
    for (auto& l : p) {
      if (rng.bernoulli(0.3)) l = "B-a";
    }
    gold.push_back(gold_of(g));
    pred.push_back(p);
  }
  Scores before = chunk_f1(gold, pred);
  std::vector<std::size_t> order(gold.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<data::Utterance> g2;
  std::vector<Labels> p2;
  for (auto i : order) {
    g2.push_back(gold[i]);
    p2.push_back(pred[i]);
  }
  Scores after = chunk_f1(g2, p2);
  EXPECT_EQ(before.precision, after.precision);
  EXPECT_EQ(before.recall, after.recall);
  EXPECT_EQ(before.f1, after.f1);
}

TEST(Report, PerDomainAndMicroCombined) {
  std::vector<data::Utterance> gold = {gold_of({"B-a", "O"}, "x"), gold_of({"B-b", "B-b", "O", "B-c"}, "y")};
  std::vector<Labels> pred = {{"B-a", "O"}, {"B-b", "O", "O", "O"}};
  EvalReport r = evaluate(gold, pred);
  EXPECT_EQ(r.f1("x"), 100.0);
  EXPECT_EQ(r.scores("y").precision, 100.0);
  EXPECT_EQ(r.scores("y").recall, 33.33);
  EXPECT_EQ(r.f1("y"), 50.0);
  // Pooled: TP 2, pred 2, gold 4 -> P 100, R 50, F1 66.67 (macro would be 75).
  EXPECT_EQ(r.f1(), 66.67);
  const std::string text = format_report(r);
  EXPECT_NE(text.find("[x]\n"), std::string::npos);
  EXPECT_LT(text.find("[y]\n"), text.find("[combined]\n"));
  EXPECT_NE(text.find("f1 = 66.67\n"), std::string::npos);
  EXPECT_NE(text.find("aggregation = micro\n"), std::string::npos);
  EXPECT_EQ(text, format_report(evaluate(gold, pred)));
}
