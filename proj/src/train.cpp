// SPDX-License-Identifier: Apache-2.0

#include "slu/train.hpp"

#include <chrono>
#include <json.hpp>
#include <set>

#include "slu/error.hpp"
#include "slu/metrics.hpp"

namespace slu::train {

namespace {

using model::ForwardContext;
using model::LossBundle;
using model::Mode;

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kSplitStream = 2;
constexpr std::uint64_t kBatchStream = 100;
constexpr std::uint64_t kDropoutStream = 10000;

struct Loop {
  std::function<LossBundle(ad::Tape&, const data::Batch&, const ForwardContext&)> loss;
  Predictor predict;
  std::vector<Parameter*> trainable;
  bool domain_loss = false;
};

struct LoopOutcome {
  double best_f1 = -1.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::vector<EpochRecord> log;
  std::vector<std::string> optimized;
};

double dev_f1(const Loop& loop, const std::vector<data::Utterance>& dev, const data::Vocabulary& vocab) {
  return eval::chunk_f1(dev, predict_labels(loop.predict, dev, vocab)).f1;
}

LoopOutcome run_loop(const Loop& loop, const std::vector<data::Utterance>& train, const std::vector<data::Utterance>& dev,
                     const data::Vocabulary& vocab, const TrainConfig& config, const Hooks& hooks) {
  const auto started = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count(); };
  auto emit = [&](LoopOutcome& out, EpochRecord r) {
    r.wall_clock = elapsed();
    if (hooks.on_epoch) hooks.on_epoch(r);
    out.log.push_back(std::move(r));
  };

  const Rng root(config.seed);
  AdamState adam(loop.trainable, config.adam());
  LoopOutcome out;
  for (const auto& [name, m] : adam.moments()) out.optimized.push_back(name);
  std::vector<Tensor> best;
  std::size_t since_best = 0;
  std::size_t global_batch = 0;

  data::BatchOptions batching;
  batching.batch_size = config.batch_size;
  batching.shuffle = true;
  batching.singleton_unk_prob = config.singleton_unk_prob;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng batch_rng = root.fork(kBatchStream + epoch);
    Rng dropout_rng = root.fork(kDropoutStream + epoch);
    const auto batches = data::encode_and_batch(train, vocab, batching, batch_rng);
    double sum_y = 0.0, sum_d = 0.0;
    std::size_t rows = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const data::Batch& batch = batches[b];
      for (Parameter* p : loop.trainable) p->zero_grad();
      ad::Tape tape;
      const LossBundle loss = loop.loss(tape, batch, {Mode::train, &dropout_rng});
      tape.backward(loss.total);
      check_finite(loop.trainable, global_batch);
      const ClipResult clip = clip_gradients(loop.trainable, config.clip_norm);
      adam.step(global_batch);
      ++global_batch;
      sum_y += loss.l_y * batch.size;
      sum_d += loss.l_d * batch.size;
      rows += batch.size;
      if (hooks.on_step) hooks.on_step({epoch, b, loss.l_y, loss.l_d, loss.total_value, clip.norm_before, clip.norm_after});
    }
    out.epochs_run = epoch;
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, loop.predict);

    EpochRecord tr;
    tr.epoch = epoch;
    tr.split = "train";
    tr.l_y = sum_y / rows;
    if (loop.domain_loss) tr.l_d = sum_d / rows;
    emit(out, tr);

    const double f1 = dev_f1(loop, dev, vocab);
    EpochRecord dv;
    dv.epoch = epoch;
    dv.split = "dev";
    dv.f1 = f1;
    emit(out, dv);

    // A tie refreshes the snapshot (lower training loss, same dev F1) but
    // does not reset patience.
    if (f1 >= out.best_f1) {
      since_best = f1 > out.best_f1 ? 0 : since_best + 1;
      out.best_f1 = f1;
      out.best_epoch = epoch;
      best.clear();
      for (Parameter* p : loop.trainable) best.push_back(p->value);
    } else {
      ++since_best;
    }
    if (since_best >= config.patience) break;
  }
  for (std::size_t i = 0; i < loop.trainable.size(); ++i) loop.trainable[i]->value = best[i];
  for (Parameter* p : loop.trainable) p->zero_grad();
  return out;
}

std::set<std::string> domains_of(const std::vector<data::Utterance>& utterances) {
  std::set<std::string> out;
  for (const auto& u : utterances) out.insert(u.domain);
  return out;
}

model::ModelConfig make_config(const Architecture& arch, const data::Vocabulary& vocab, const TrainConfig& config,
                               double lambda) {
  model::ModelConfig mc;
  mc.embedding_dim = arch.embedding_dim;
  mc.hidden_dim = arch.hidden_dim;
  mc.mlp_hidden_dim = arch.mlp_hidden_dim;
  mc.dropout_rate = config.dropout;
  mc.vocab_size = vocab.words.size();
  mc.num_slot_labels = vocab.labels.size();
  mc.num_domains = vocab.domains.size();
  mc.lambda_adv = lambda;
  return mc;
}

std::vector<Parameter*> all_parameters(model::ParameterSet& params) {
  std::vector<Parameter*> out;
  for (auto& [name, p] : params.all()) out.push_back(&p);
  return out;
}

TrainResult<model::SlotModel> train_slot_model(const std::vector<data::Utterance>& utterances,
                                               const data::Vocabulary& vocab, const Architecture& arch,
                                               const TrainConfig& config, model::ModelKind kind, const Hooks& hooks) {
  config.validate();
  if (utterances.empty()) throw ConfigError("no training utterances");
  const Rng root(config.seed);
  Rng split_rng = root.fork(kSplitStream);
  const data::Split split = data::split_dev(utterances, config.dev_fraction, split_rng);
  const auto train = data::gather(utterances, split.train);
  const auto dev = data::gather(utterances, split.dev);

  data::Vocabulary v = data::restrict_labels(vocab, utterances);
  for (const auto& u : utterances) {
    if (!v.domains.find(u.domain)) throw ConfigError("domain '" + u.domain + "' missing from the vocabulary");
  }
  const double lambda = kind == model::ModelKind::general_adv ? config.lambda_adv : 0.0;
  Rng init = root.fork(kInitStream);
  model::SlotModel m(make_config(arch, v, config, lambda), kind, init);

  Loop loop;
  loop.loss = [&m](ad::Tape& t, const data::Batch& b, const ForwardContext& ctx) { return m.loss(t, b, ctx); };
  loop.predict = [&m](const data::Batch& b) { return m.predict(b); };
  loop.trainable = all_parameters(m.params());
  loop.domain_loss = m.has_domain_classifier();
  LoopOutcome o = run_loop(loop, train, dev, v, config, hooks);
  return {std::move(m), std::move(v), o.best_f1, o.best_epoch, o.epochs_run, std::move(o.log), std::move(o.optimized),
          split.train, split.dev};
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be > 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("train: dropout must be in [0, 1)");
  if (!(lambda_adv >= 0.0)) throw ConfigError("train: lambda_adv must be >= 0");
  if (max_epochs == 0) throw ConfigError("train: max_epochs must be >= 1");
  if (patience == 0) throw ConfigError("train: patience must be >= 1");
  if (!(dev_fraction > 0.0 && dev_fraction < 0.5)) throw ConfigError("train: dev_fraction must be in (0, 0.5)");
  if (!(singleton_unk_prob >= 0.0 && singleton_unk_prob <= 1.0)) {
    throw ConfigError("train: singleton_unk_prob must be in [0, 1]");
  }
}

std::string to_json_line(const EpochRecord& r) {
  nlohmann::ordered_json j;
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  j["epoch"] = r.epoch;
  j["split"] = r.split;
  j["l_y"] = opt(r.l_y);
  j["l_d"] = opt(r.l_d);
  j["f1"] = opt(r.f1);
  j["probe_acc"] = opt(r.probe_acc);
  j["wall_clock"] = r.wall_clock;
  return j.dump();
}

TrainResult<model::SlotModel> train_specific(const std::vector<data::Utterance>& utterances,
                                             const data::Vocabulary& vocab, const Architecture& arch,
                                             const TrainConfig& config, const Hooks& hooks) {
  const auto domains = domains_of(utterances);
  if (domains.size() > 1) throw ConfigError("specific model: expected one domain, got " + std::to_string(domains.size()));
  return train_slot_model(utterances, vocab, arch, config, model::ModelKind::specific, hooks);
}

TrainResult<model::SlotModel> train_general(const std::vector<data::Utterance>& utterances,
                                            const data::Vocabulary& vocab, const Architecture& arch,
                                            const TrainConfig& config, const Hooks& hooks) {
  const bool adversarial = config.lambda_adv > 0.0;
  if (adversarial && domains_of(utterances).size() < 2) throw ConfigError("adversary requires >= 2 domains");
  return train_slot_model(utterances, vocab, arch, config,
                          adversarial ? model::ModelKind::general_adv : model::ModelKind::general, hooks);
}

TrainResult<model::JointModel> train_joint(const model::SlotModel& specific, const model::SlotModel& general,
                                           const std::vector<data::Utterance>& utterances,
                                           const data::Vocabulary& vocab, std::size_t mlp_hidden_dim,
                                           const TrainConfig& config, const Hooks& hooks) {
  config.validate();
  if (utterances.empty()) throw ConfigError("no training utterances");
  if (specific.config().vocab_size != general.config().vocab_size ||
      specific.config().vocab_size != vocab.words.size()) {
    throw ConfigError("joint model: encoder vocabularies do not match");
  }
  const Rng root(config.seed);
  Rng split_rng = root.fork(kSplitStream);
  const data::Split split = data::split_dev(utterances, config.dev_fraction, split_rng);
  const auto train = data::gather(utterances, split.train);
  const auto dev = data::gather(utterances, split.dev);
  data::Vocabulary v = data::restrict_labels(vocab, utterances);

  Rng init = root.fork(kInitStream);
  model::JointModel m(specific, general, mlp_hidden_dim, config.dropout, v.labels.size(), init);
  Loop loop;
  loop.loss = [&m](ad::Tape& t, const data::Batch& b, const ForwardContext& ctx) { return m.loss(t, b, ctx); };
  loop.predict = [&m](const data::Batch& b) { return m.predict(b); };
  for (const auto& name : m.head_parameter_names()) loop.trainable.push_back(&m.params().at(name));
  LoopOutcome o = run_loop(loop, train, dev, v, config, hooks);
  return {std::move(m), std::move(v), o.best_f1, o.best_epoch, o.epochs_run, std::move(o.log), std::move(o.optimized),
          split.train, split.dev};
}

std::vector<std::vector<std::string>> predict_labels(const Predictor& predict,
                                                     const std::vector<data::Utterance>& utterances,
                                                     const data::Vocabulary& vocab, std::size_t batch_size) {
  std::vector<std::vector<std::string>> out(utterances.size());
  if (utterances.empty()) return out;
  data::BatchOptions opts;
  opts.batch_size = batch_size;
  opts.with_labels = false;
  Rng unused(0);
  for (const auto& batch : data::encode_and_batch(utterances, vocab, opts, unused)) {
    const auto ids = predict(batch);
    for (std::size_t r = 0; r < batch.size; ++r) {
      auto& labels = out[batch.source[r]];
      for (std::size_t id : ids[r]) labels.push_back(vocab.labels.name(id));
    }
  }
  return out;
}

}  // namespace slu::train
