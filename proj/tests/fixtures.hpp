// SPDX-License-Identifier: Apache-2.0
//
// Small corpora and model helpers shared by the test binaries.

#pragma once

#include <string>
#include <vector>

#include "slu/data.hpp"
#include "slu/model.hpp"

namespace slu::testing {

/// Utterance from "tok/LABEL tok/LABEL ..."; bare tokens get "O".
inline data::Utterance utt(const std::string& text, const std::string& domain = "d0") {
  data::Utterance u;
  u.domain = domain;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find(' ', pos);
    if (end == std::string::npos) end = text.size();
    std::string item = text.substr(pos, end - pos);
    pos = end + 1;
    if (item.empty()) continue;
    const auto slash = item.find('/');
    u.tokens.push_back(item.substr(0, slash));
    u.labels.push_back(slash == std::string::npos ? "O" : item.substr(slash + 1));
  }
  return u;
}

/// Three domains, ragged lengths, a handful of slot types.
inline std::vector<data::Utterance> tiny_corpus() {
  return {
      utt("fly to boston/B-city", "air"),
      utt("book a flight from new/B-city york/I-city to denver/B-city", "air"),
      utt("cheap/B-price pizza/B-food near me", "food"),
      utt("find sushi/B-food", "food"),
      utt("play jazz/B-genre", "music"),
      utt("play some miles/B-artist davis/I-artist tonight/B-time", "music"),
  };
}

inline model::ModelConfig tiny_config(const data::Vocabulary& vocab, double lambda = 0.0) {
  model::ModelConfig cfg;
  cfg.embedding_dim = 6;
  cfg.hidden_dim = 8;
  cfg.mlp_hidden_dim = 7;
  cfg.dropout_rate = 0.0;
  cfg.vocab_size = vocab.words.size();
  cfg.num_slot_labels = vocab.labels.size();
  cfg.num_domains = vocab.domains.size();
  cfg.lambda_adv = lambda;
  return cfg;
}

inline data::Batch single_batch(const std::vector<data::Utterance>& us, const data::Vocabulary& vocab) {
  Rng rng(0);
  data::BatchOptions opts;
  opts.batch_size = us.size();
  return data::encode_and_batch(us, vocab, opts, rng).at(0);
}

/// Vocabulary of exactly 20 word ids (18 words + PAD + UNK).
inline std::vector<data::Utterance> vocab20_corpus() {
  return {
      utt("w0 w1/B-a w2/I-a w3", "x"),
      utt("w4 w5/B-b w6 w7/B-a w8", "y"),
      utt("w9/B-c w10", "x"),
      utt("w11 w12 w13/B-b w14/I-b w15 w16 w17", "y"),
  };
}

}  // namespace slu::testing
