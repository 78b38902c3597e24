// SPDX-License-Identifier: Apache-2.0

#include "slu/model.hpp"

#include <cmath>

#include "slu/error.hpp"

namespace slu::model {

namespace {

std::vector<double> row_weights_per_token(const data::Batch& batch) {
  // Weight 1 / (len_b * B) on real tokens, 0 on padding.
  std::vector<double> w(batch.size * batch.max_len, 0.0);
  for (std::size_t b = 0; b < batch.size; ++b) {
    const double scale = 1.0 / (static_cast<double>(batch.lengths[b]) * static_cast<double>(batch.size));
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) w[batch.at(b, t)] = scale;
  }
  return w;
}

void check_batch(const data::Batch& batch, std::size_t vocab_size) {
  for (std::size_t b = 0; b < batch.size; ++b) {
    for (std::size_t t = 0; t < batch.max_len; ++t) {
      const std::size_t id = batch.words[batch.at(b, t)];
      if (batch.mask[batch.at(b, t)] && id >= vocab_size) {
        throw DataError("utterance " + std::to_string(batch.source.empty() ? b : batch.source[b]) + ": word id " +
                        std::to_string(id) + " out of range for vocabulary of " + std::to_string(vocab_size));
      }
    }
  }
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::specific: return "specific";
    case ModelKind::general: return "general";
    case ModelKind::general_adv: return "general-adv";
    case ModelKind::joint: return "joint";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "specific") return ModelKind::specific;
  if (name == "general") return ModelKind::general;
  if (name == "general-adv") return ModelKind::general_adv;
  if (name == "joint") return ModelKind::joint;
  throw ConfigError("unknown model kind '" + name + "' (expected specific, general, general-adv or joint)");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model config: ") + name + " must be >= 1");
  };
  positive(embedding_dim, "embedding_dim");
  positive(hidden_dim, "hidden_dim");
  positive(mlp_hidden_dim, "mlp_hidden_dim");
  positive(vocab_size, "vocab_size");
  positive(num_slot_labels, "num_slot_labels");
  positive(num_domains, "num_domains");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("model config: dropout_rate must be in [0, 1)");
  if (!(lambda_adv >= 0.0)) throw ConfigError("model config: lambda_adv must be >= 0");
}

Parameter& ParameterSet::add(const std::string& name, Tensor value) {
  auto [it, inserted] = params_.try_emplace(name, name, std::move(value));
  if (!inserted) throw ContractError("parameter '" + name + "' already exists");
  return it->second;
}

Parameter& ParameterSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second;
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second;
}

void ParameterSet::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t({fan_in, fan_out});
  for (double& v : t.data()) v = rng.uniform(-limit, limit);
  return t;
}

// ---------------------------------------------------------------------------
// Encoder

BiLstmEncoder::BiLstmEncoder(ParameterSet& params, std::string prefix, const ModelConfig& config, Rng& rng)
    : config_(config), prefix_(std::move(prefix)) {
  const std::size_t E = config.embedding_dim, H = config.hidden_dim;
  params.add(prefix_ + "embedding", glorot(config.vocab_size, E, rng));
  for (const char* dir : {"fwd.", "bwd."}) {
    params.add(prefix_ + dir + "wx", glorot(E, 4 * H, rng));
    params.add(prefix_ + dir + "wh", glorot(H, 4 * H, rng));
    Tensor bias({4 * H});
    for (std::size_t j = H; j < 2 * H; ++j) bias[j] = 1.0;  // forget gate
    params.add(prefix_ + dir + "b", std::move(bias));
  }
  *this = bind(params, prefix_, config);
}

BiLstmEncoder BiLstmEncoder::bind(ParameterSet& params, std::string prefix, const ModelConfig& config) {
  BiLstmEncoder enc;
  enc.config_ = config;
  enc.prefix_ = std::move(prefix);
  const std::size_t E = config.embedding_dim, H = config.hidden_dim;
  auto fetch = [&](const std::string& name, const ad::Shape& shape) {
    Parameter& p = params.at(enc.prefix_ + name);
    if (p.value.shape() != shape) {
      throw ConfigError("parameter '" + p.name + "' has shape " + ad::shape_string(p.value.shape()) + ", expected " +
                        ad::shape_string(shape));
    }
    return &p;
  };
  enc.embedding_ = fetch("embedding", {config.vocab_size, E});
  enc.forward_ = {fetch("fwd.wx", {E, 4 * H}), fetch("fwd.wh", {H, 4 * H}), fetch("fwd.b", {4 * H})};
  enc.backward_ = {fetch("bwd.wx", {E, 4 * H}), fetch("bwd.wh", {H, 4 * H}), fetch("bwd.b", {4 * H})};
  return enc;
}

std::vector<std::string> BiLstmEncoder::parameter_names() const {
  std::vector<std::string> names = {prefix_ + "embedding"};
  for (const char* dir : {"fwd.", "bwd."}) {
    for (const char* p : {"wx", "wh", "b"}) names.push_back(prefix_ + dir + p);
  }
  return names;
}

Var BiLstmEncoder::run_direction(Tape& tape, const Direction& dir, Var inputs, const data::Batch& batch, bool reverse,
                                 bool trainable) const {
  const std::size_t B = batch.size, T = batch.max_len, H = config_.hidden_dim;
  Var wh = tape.parameter(*dir.recurrent_weights, trainable);
  Var preact_x = add(matmul(inputs, tape.parameter(*dir.input_weights, trainable)), tape.parameter(*dir.bias, trainable));
  preact_x = reshape(preact_x, {B, T, 4 * H});

  Var h = tape.constant(Tensor({B, H}));
  Var c = tape.constant(Tensor({B, H}));
  std::vector<Var> states(T);
  std::vector<std::uint8_t> real(B);
  for (std::size_t k = 0; k < T; ++k) {
    const std::size_t t = reverse ? T - 1 - k : k;
    ad::LstmState next = ad::lstm_gates(add(time_step(preact_x, t), matmul(h, wh)), c);
    if (reverse) {
      // Rows whose utterance ends before t keep the zero initial state.
      for (std::size_t b = 0; b < B; ++b) real[b] = batch.mask[batch.at(b, t)];
      h = select_rows(real, next.h, h);
      c = select_rows(real, next.c, c);
    } else {
      h = next.h;
      c = next.c;
    }
    states[t] = h;
  }
  return stack_steps(states);
}

Var BiLstmEncoder::encode(Tape& tape, const data::Batch& batch, const ForwardContext& ctx, bool trainable) const {
  if (batch.size == 0 || batch.max_len == 0) throw DataError("encode: empty batch");
  check_batch(batch, config_.vocab_size);
  if (ctx.mode == Mode::train && !ctx.rng && config_.dropout_rate > 0.0) {
    throw ContractError("encode: train mode needs a dropout rng");
  }
  Var emb = ad::embedding(tape.parameter(*embedding_, trainable), batch.words);
  const bool drop = ctx.mode == Mode::train && config_.dropout_rate > 0.0;
  if (drop) emb = ad::dropout(emb, config_.dropout_rate, ctx.mode, *ctx.rng);
  Var fwd = run_direction(tape, forward_, emb, batch, false, trainable);
  Var bwd = run_direction(tape, backward_, emb, batch, true, trainable);
  Var parts[] = {fwd, bwd};
  Var states = ad::concat(parts);
  if (drop) states = ad::dropout(states, config_.dropout_rate, ctx.mode, *ctx.rng);
  return states;
}

// ---------------------------------------------------------------------------
// Heads

Mlp::Mlp(ParameterSet& params, std::string prefix, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  params.add(prefix + "w1", glorot(in, hidden, rng));
  params.add(prefix + "b1", Tensor({hidden}));
  params.add(prefix + "w2", glorot(hidden, out, rng));
  params.add(prefix + "b2", Tensor({out}));
  *this = bind(params, prefix);
}

Mlp Mlp::bind(ParameterSet& params, std::string prefix) {
  Mlp mlp;
  mlp.w1_ = &params.at(prefix + "w1");
  mlp.b1_ = &params.at(prefix + "b1");
  mlp.w2_ = &params.at(prefix + "w2");
  mlp.b2_ = &params.at(prefix + "b2");
  const auto& w1 = mlp.w1_->value;
  const auto& w2 = mlp.w2_->value;
  if (w1.rank() != 2 || w2.rank() != 2 || w1.dim(1) != w2.dim(0) || mlp.b1_->value.shape() != ad::Shape{w1.dim(1)} ||
      mlp.b2_->value.shape() != ad::Shape{w2.dim(1)}) {
    throw ConfigError("mlp '" + prefix + "': inconsistent parameter shapes");
  }
  return mlp;
}

std::size_t Mlp::in_dim() const { return w1_->value.dim(0); }
std::size_t Mlp::out_dim() const { return w2_->value.dim(1); }

Var Mlp::logits(Tape& tape, Var x, bool trainable) const {
  Var hidden = ad::tanh(add(matmul(x, tape.parameter(*w1_, trainable)), tape.parameter(*b1_, trainable)));
  return add(matmul(hidden, tape.parameter(*w2_, trainable)), tape.parameter(*b2_, trainable));
}

DomainClassifier::DomainClassifier(ParameterSet& params, std::string prefix, const ModelConfig& config, Rng& rng) {
  const std::size_t width = 2 * config.hidden_dim;
  params.add(prefix + "score_w", glorot(width, 1, rng));
  params.add(prefix + "score_b", Tensor({1}));
  Mlp(params, prefix + "head.", width, config.mlp_hidden_dim, config.num_domains, rng);
  *this = bind(params, prefix);
}

DomainClassifier DomainClassifier::bind(ParameterSet& params, std::string prefix) {
  DomainClassifier dc;
  dc.score_w_ = &params.at(prefix + "score_w");
  dc.score_b_ = &params.at(prefix + "score_b");
  dc.head_ = Mlp::bind(params, prefix + "head.");
  return dc;
}

Var DomainClassifier::attention(Tape& tape, Var states, const data::Batch& batch) const {
  const std::size_t B = batch.size, T = batch.max_len, D = states.shape().back();
  Var flat = reshape(states, {B * T, D});
  Var scores = add(matmul(flat, tape.parameter(*score_w_)), tape.parameter(*score_b_));
  return ad::masked_softmax(reshape(scores, {B, T}), batch.mask);
}

Var DomainClassifier::pool(Tape& tape, Var states, const data::Batch& batch) const {
  return ad::weighted_sum(attention(tape, states, batch), states);
}

Var DomainClassifier::log_probs(Tape& tape, Var states, const data::Batch& batch) const {
  return ad::log_softmax(head_.logits(tape, pool(tape, states, batch)));
}

Var slot_loss(Var log_probs, const data::Batch& batch) {
  return ad::weighted_nll(log_probs, batch.labels, row_weights_per_token(batch));
}

Var domain_loss(Var log_probs, const data::Batch& batch) {
  std::vector<double> w(batch.size, 1.0 / static_cast<double>(batch.size));
  return ad::weighted_nll(log_probs, batch.domains, w);
}

std::vector<std::vector<std::size_t>> decode(const Tensor& scores, const data::Batch& batch) {
  const std::size_t L = scores.dim(1);
  std::vector<std::vector<std::size_t>> out(batch.size);
  for (std::size_t b = 0; b < batch.size; ++b) {
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) {
      const double* row = scores.raw() + batch.at(b, t) * L;
      std::size_t best = 0;
      for (std::size_t l = 1; l < L; ++l) {
        if (row[l] > row[best]) best = l;
      }
      out[b].push_back(best);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// SlotModel

SlotModel::SlotModel(const ModelConfig& config, ModelKind kind, Rng& rng)
    : config_(config), kind_(kind), params_(std::make_unique<ParameterSet>()) {
  config_.validate();
  if (kind == ModelKind::joint) throw ConfigError("SlotModel cannot have kind 'joint'");
  BiLstmEncoder(*params_, "encoder.", config_, rng);
  Mlp(*params_, "slot.", 2 * config_.hidden_dim, config_.mlp_hidden_dim, config_.num_slot_labels, rng);
  if (has_domain_classifier()) DomainClassifier(*params_, "domain.", config_, rng);
  bind();
}

SlotModel::SlotModel(const ModelConfig& config, ModelKind kind, ParameterSet params)
    : config_(config), kind_(kind), params_(std::make_unique<ParameterSet>(std::move(params))) {
  config_.validate();
  if (kind == ModelKind::joint) throw ConfigError("SlotModel cannot have kind 'joint'");
  bind();
}

SlotModel::SlotModel(const SlotModel& other)
    : config_(other.config_), kind_(other.kind_), params_(std::make_unique<ParameterSet>(*other.params_)) {
  bind();
}

SlotModel& SlotModel::operator=(const SlotModel& other) {
  if (this != &other) {
    config_ = other.config_;
    kind_ = other.kind_;
    params_ = std::make_unique<ParameterSet>(*other.params_);
    bind();
  }
  return *this;
}

SlotModel::SlotModel(SlotModel&&) noexcept = default;
SlotModel& SlotModel::operator=(SlotModel&&) noexcept = default;
SlotModel::~SlotModel() = default;

void SlotModel::bind() {
  encoder_ = BiLstmEncoder::bind(*params_, "encoder.", config_);
  slot_head_ = Mlp::bind(*params_, "slot.");
  if (slot_head_.in_dim() != 2 * config_.hidden_dim || slot_head_.out_dim() != config_.num_slot_labels) {
    throw ConfigError("slot head shape does not match model config");
  }
  if (has_domain_classifier()) {
    domain_ = DomainClassifier::bind(*params_, "domain.");
  } else if (params_->contains("domain.score_w")) {
    throw ConfigError("model of kind '" + to_string(kind_) + "' must not carry domain classifier parameters");
  }
}

const DomainClassifier& SlotModel::domain_classifier() const {
  if (!has_domain_classifier()) throw ContractError("model has no domain classifier");
  return domain_;
}

Var SlotModel::encode(Tape& tape, const data::Batch& batch, const ForwardContext& ctx) const {
  return encoder_.encode(tape, batch, ctx);
}

Var SlotModel::slot_log_probs(Tape& tape, Var states) const {
  const auto& s = states.shape();
  return ad::log_softmax(slot_head_.logits(tape, reshape(states, {s[0] * s[1], s[2]})));
}

Var SlotModel::slot_label_dist(Tape& tape, Var states) const {
  const auto& s = states.shape();
  return ad::softmax(slot_head_.logits(tape, reshape(states, {s[0] * s[1], s[2]})));
}

LossBundle SlotModel::loss(Tape& tape, const data::Batch& batch, const ForwardContext& ctx,
                           const LossOptions& options) const {
  const double lambda = options.lambda_override >= 0.0 ? options.lambda_override : config_.lambda_adv;
  Var states = encode(tape, batch, ctx);
  Var l_y = slot_loss(slot_log_probs(tape, states), batch);
  LossBundle out;
  out.l_y = l_y.value().item();
  if (!has_domain_classifier()) {
    out.total = l_y;
    out.total_value = out.l_y;
    return out;
  }
  Var branch = options.reverse_gradient ? ad::grad_reverse(states) : states;
  Var l_d = domain_loss(domain_.log_probs(tape, branch, batch), batch);
  out.l_d = l_d.value().item();
  out.total = add(l_y, scale(l_d, lambda));
  out.total_value = out.total.value().item();
  return out;
}

std::vector<std::vector<std::size_t>> SlotModel::predict(const data::Batch& batch) const {
  Tape tape;
  Var states = encoder_.encode(tape, batch, {}, false);
  const auto& s = states.shape();
  Var logits = slot_head_.logits(tape, reshape(states, {s[0] * s[1], s[2]}), false);
  return decode(logits.value(), batch);
}

// ---------------------------------------------------------------------------
// JointModel

JointModel::JointModel(const SlotModel& specific, const SlotModel& general, std::size_t mlp_hidden_dim,
                       double dropout_rate, std::size_t num_slot_labels, Rng& rng)
    : params_(std::make_unique<ParameterSet>()),
      mlp_hidden_dim_(mlp_hidden_dim),
      dropout_rate_(dropout_rate),
      num_slot_labels_(num_slot_labels) {
  if (specific.config().vocab_size != general.config().vocab_size) {
    throw ConfigError("joint model: encoders were trained with different vocabularies");
  }
  for (const auto& [src, prefix] : {std::pair{&specific, kSpecificPrefix}, std::pair{&general, kGeneralPrefix}}) {
    for (const auto& name : src->encoder().parameter_names()) {
      params_->add(prefix + name, src->params().at(name).value);
    }
  }
  const std::size_t width = specific.encoder().output_dim() + general.encoder().output_dim();
  Mlp(*params_, kHeadPrefix, width, mlp_hidden_dim, num_slot_labels, rng);
  bind(specific.config(), general.config());
}

JointModel::JointModel(const ModelConfig& specific_config, const ModelConfig& general_config,
                       std::size_t mlp_hidden_dim, double dropout_rate, std::size_t num_slot_labels,
                       ParameterSet params)
    : params_(std::make_unique<ParameterSet>(std::move(params))),
      mlp_hidden_dim_(mlp_hidden_dim),
      dropout_rate_(dropout_rate),
      num_slot_labels_(num_slot_labels) {
  bind(specific_config, general_config);
}

JointModel::JointModel(JointModel&&) noexcept = default;
JointModel& JointModel::operator=(JointModel&&) noexcept = default;
JointModel::~JointModel() = default;

void JointModel::bind(const ModelConfig& specific_config, const ModelConfig& general_config) {
  if (!(dropout_rate_ >= 0.0 && dropout_rate_ < 1.0)) throw ConfigError("joint model: dropout_rate must be in [0, 1)");
  specific_ = BiLstmEncoder::bind(*params_, std::string(kSpecificPrefix) + "encoder.", specific_config);
  general_ = BiLstmEncoder::bind(*params_, std::string(kGeneralPrefix) + "encoder.", general_config);
  head_ = Mlp::bind(*params_, kHeadPrefix);
  if (head_.in_dim() != specific_.output_dim() + general_.output_dim()) {
    throw ConfigError("joint model: output MLP expects width " + std::to_string(head_.in_dim()) +
                      " but encoders produce " + std::to_string(specific_.output_dim()) + " + " +
                      std::to_string(general_.output_dim()));
  }
  if (head_.out_dim() != num_slot_labels_) throw ConfigError("joint model: output MLP label count mismatch");
}

std::vector<std::string> JointModel::head_parameter_names() const {
  return {std::string(kHeadPrefix) + "b1", std::string(kHeadPrefix) + "b2", std::string(kHeadPrefix) + "w1",
          std::string(kHeadPrefix) + "w2"};
}

std::vector<std::string> JointModel::encoder_parameter_names() const {
  auto names = specific_.parameter_names();
  for (auto& n : general_.parameter_names()) names.push_back(n);
  return names;
}

Var JointModel::head_input(Tape& tape, const data::Batch& batch, const ForwardContext& ctx) const {
  const ForwardContext frozen{Mode::eval, nullptr};
  Var parts[] = {specific_.encode(tape, batch, frozen, false), general_.encode(tape, batch, frozen, false)};
  Var states = ad::concat(parts);
  const auto& s = states.shape();
  Var flat = reshape(states, {s[0] * s[1], s[2]});
  if (ctx.mode == Mode::train && dropout_rate_ > 0.0) {
    if (!ctx.rng) throw ContractError("joint model: train mode needs a dropout rng");
    flat = ad::dropout(flat, dropout_rate_, ctx.mode, *ctx.rng);
  }
  return flat;
}

Var JointModel::log_probs(Tape& tape, const data::Batch& batch, const ForwardContext& ctx) const {
  return ad::log_softmax(head_.logits(tape, head_input(tape, batch, ctx)));
}

Var JointModel::slot_label_dist(Tape& tape, const data::Batch& batch, const ForwardContext& ctx) const {
  return ad::softmax(head_.logits(tape, head_input(tape, batch, ctx)));
}

LossBundle JointModel::loss(Tape& tape, const data::Batch& batch, const ForwardContext& ctx) const {
  Var l_y = slot_loss(log_probs(tape, batch, ctx), batch);
  LossBundle out;
  out.total = l_y;
  out.l_y = out.total_value = l_y.value().item();
  return out;
}

std::vector<std::vector<std::size_t>> JointModel::predict(const data::Batch& batch) const {
  Tape tape;
  return decode(log_probs(tape, batch, {}).value(), batch);
}

}  // namespace slu::model
