// SPDX-License-Identifier: Apache-2.0

#include "slu/probe.hpp"

#include <gtest/gtest.h>

#include "slu/error.hpp"
#include "slu/synth.hpp"

using namespace slu;

namespace {

// Two grammars with no word or label in common.
struct Disjoint {
  std::vector<data::Utterance> train, test;
  data::Vocabulary vocab;
};

synth::GrammarSpec prefixed_grammar(const std::string& p) {
  synth::GrammarSpec g;
  g.domain = p;
  g.templates = {p + "go " + p + "to {" + p + "place}", p + "show " + p + "me {" + p + "thing} " + p + "now",
                 p + "find {" + p + "thing} " + p + "near {" + p + "place}", p + "what " + p + "about {" + p + "thing}"};
  for (const char* type : {"place", "thing"})
    for (int i = 0; i < 60; ++i) g.lexicons[p + type].push_back(p + type + std::to_string(i));
  return g;
}

Disjoint disjoint_pair(std::size_t N = 200) {
  Disjoint d;
  for (std::size_t i : {0u, 1u}) {
    Rng rng = Rng(5).fork(i);
    auto us = synth::generate(prefixed_grammar(i == 0 ? "a" : "b"), N + N / 4, rng);
    d.train.insert(d.train.end(), us.begin(), us.begin() + N);
    d.test.insert(d.test.end(), us.begin() + N, us.end());
  }
  d.vocab = data::build_vocab(d.train);
  return d;
}

model::SlotModel random_model(const data::Vocabulary& vocab) {
  model::ModelConfig cfg;
  cfg.embedding_dim = 64;
  cfg.hidden_dim = 64;
  cfg.mlp_hidden_dim = 16;
  cfg.vocab_size = vocab.words.size();
  cfg.num_slot_labels = vocab.labels.size();
  cfg.num_domains = vocab.domains.size();
  Rng init(3);
  return model::SlotModel(cfg, model::ModelKind::general, init);
}

}  // namespace

TEST(Probe, UntrainedEncoderLeaksDomainThroughWordIdentity) {
  auto d = disjoint_pair(1000);
  auto m = random_model(d.vocab);
  train::TrainConfig cfg;
  auto r = eval::probe_domain_accuracy(m.encoder(), d.train, d.test, d.vocab, cfg);
  EXPECT_GE(r.accuracy, 90.0);
  EXPECT_EQ(r.num_domains, 2u);
  EXPECT_DOUBLE_EQ(r.chance, 50.0);

  std::size_t total = 0, diagonal = 0;
  for (std::size_t g = 0; g < r.confusion.size(); ++g) {
    for (std::size_t p = 0; p < r.confusion[g].size(); ++p) total += r.confusion[g][p];
    diagonal += r.confusion[g][g];
  }
  EXPECT_EQ(total, d.test.size());
  EXPECT_DOUBLE_EQ(r.accuracy, 100.0 * diagonal / total);
}

TEST(Probe, DeterministicAndLeavesEncoderUntouched) {
  auto d = disjoint_pair();
  auto m = random_model(d.vocab);
  const auto before = m.params().at("encoder.embedding").value;
  train::TrainConfig cfg;
  cfg.seed = 9;
  auto a = eval::probe_domain_accuracy(m.encoder(), d.train, d.test, d.vocab, cfg, 2);
  auto b = eval::probe_domain_accuracy(m.encoder(), d.train, d.test, d.vocab, cfg, 2);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.confusion, b.confusion);
  EXPECT_EQ(m.params().at("encoder.embedding").value, before);
}

TEST(Probe, NeedsTwoDomains) {
  auto d = disjoint_pair();
  auto m = random_model(d.vocab);
  std::vector<data::Utterance> one(d.train.begin(), d.train.begin() + 50);
  EXPECT_THROW(eval::probe_domain_accuracy(m.encoder(), one, d.test, d.vocab, {}), ConfigError);
  EXPECT_THROW(eval::probe_domain_accuracy(m.encoder(), d.train, {}, d.vocab, {}), ConfigError);
}
