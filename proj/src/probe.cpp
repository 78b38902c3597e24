// SPDX-License-Identifier: Apache-2.0

#include "slu/probe.hpp"

#include <set>

#include "slu/error.hpp"

namespace slu::eval {

namespace {

struct CachedBatch {
  data::Batch batch;
  ad::Tensor states;  // [B x T x 2H]
};

std::vector<CachedBatch> cache_states(const model::BiLstmEncoder& encoder, const std::vector<data::Utterance>& utts,
                                      const data::Vocabulary& vocab, std::size_t batch_size) {
  data::BatchOptions opts;
  opts.batch_size = batch_size;
  opts.with_labels = false;
  Rng unused(0);
  std::vector<CachedBatch> out;
  for (auto& b : data::encode_and_batch(utts, vocab, opts, unused)) {
    for (std::size_t r = 0; r < b.size; ++r) b.domains[r] = vocab.domain_id(utts[b.source[r]].domain);
    ad::Tape tape;
    ad::Tensor states = encoder.encode(tape, b, {}, false).value();
    out.push_back({std::move(b), std::move(states)});
  }
  return out;
}

}  // namespace

ProbeResult probe_domain_accuracy(const model::BiLstmEncoder& encoder, const std::vector<data::Utterance>& train,
                                  const std::vector<data::Utterance>& test, const data::Vocabulary& vocab,
                                  const train::TrainConfig& config, std::size_t epochs) {
  std::set<std::string> domains;
  for (const auto& u : train) domains.insert(u.domain);
  if (domains.size() < 2) throw ConfigError("domain probe needs at least 2 domains");
  if (test.empty()) throw ConfigError("domain probe: empty test set");

  const std::size_t width = encoder.output_dim();
  const std::size_t D = vocab.domains.size();
  Rng root(config.seed);
  Rng init = root.fork(1);
  model::ParameterSet params;
  auto& score_w = params.add("probe.score_w", model::glorot(width, 1, init));
  auto& score_b = params.add("probe.score_b", ad::Tensor({1}));
  auto& out_w = params.add("probe.w", model::glorot(width, D, init));
  auto& out_b = params.add("probe.b", ad::Tensor({D}));
  std::vector<ad::Parameter*> trainable = {&score_w, &score_b, &out_w, &out_b};

  auto log_probs = [&](ad::Tape& tape, const CachedBatch& cb, const model::ForwardContext& ctx) {
    const std::size_t B = cb.batch.size, T = cb.batch.max_len;
    ad::Var h = tape.constant(cb.states);
    if (ctx.mode == ad::Mode::train && config.dropout > 0.0) h = ad::dropout(h, config.dropout, ctx.mode, *ctx.rng);
    ad::Var scores = add(matmul(reshape(h, {B * T, width}), tape.parameter(score_w)), tape.parameter(score_b));
    ad::Var alpha = ad::masked_softmax(reshape(scores, {B, T}), cb.batch.mask);
    ad::Var pooled = ad::weighted_sum(alpha, h);
    return ad::log_softmax(add(matmul(pooled, tape.parameter(out_w)), tape.parameter(out_b)));
  };

  // Mixed-domain batches: corpora usually arrive grouped by domain.
  std::vector<data::Utterance> shuffled = train;
  Rng mix = root.fork(2);
  mix.shuffle(std::span<data::Utterance>(shuffled));
  const auto train_cache = cache_states(encoder, shuffled, vocab, config.batch_size);
  train::AdamState adam(trainable, config.adam());
  std::vector<std::size_t> order(train_cache.size());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle = root.fork(100 + epoch);
    Rng drop = root.fork(10000 + epoch);
    shuffle.shuffle(std::span<std::size_t>(order));
    for (std::size_t i : order) {
      const CachedBatch& cb = train_cache[i];
      params.zero_grad();
      ad::Tape tape;
      tape.backward(model::domain_loss(log_probs(tape, cb, {ad::Mode::train, &drop}), cb.batch));
      train::clip_gradients(trainable, config.clip_norm);
      adam.step(step++);
    }
  }

  ProbeResult result;
  result.confusion.assign(D, std::vector<std::size_t>(D, 0));
  std::size_t correct = 0, total = 0;
  for (const auto& cb : cache_states(encoder, test, vocab, 64)) {
    ad::Tape tape;
    const ad::Tensor lp = log_probs(tape, cb, {}).value();
    for (std::size_t r = 0; r < cb.batch.size; ++r) {
      std::size_t best = 0;
      for (std::size_t d = 1; d < D; ++d) {
        if (lp[r * D + d] > lp[r * D + best]) best = d;
      }
      correct += best == cb.batch.domains[r];
      ++result.confusion[cb.batch.domains[r]][best];
      ++total;
    }
  }
  result.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(total);
  result.num_domains = domains.size();
  result.chance = 100.0 / static_cast<double>(domains.size());
  return result;
}

}  // namespace slu::eval
