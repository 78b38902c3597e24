// SPDX-License-Identifier: Apache-2.0
//
// Bi-LSTM slot taggers.
//
//   SlotModel   embeddings + Bi-LSTM encoder, slot-label MLP, and (for
//               adversarial training) an attention domain classifier that
//               reads the encoder states through grad_reverse.
//   JointModel  two frozen encoders whose per-step states are concatenated
//               and fed to a trainable output MLP.

#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "slu/data.hpp"
#include "slu/ops.hpp"

namespace slu::model {

using ad::Mode;
using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;

enum class ModelKind { specific, general, general_adv, joint };

std::string to_string(ModelKind kind);
/// Throws ConfigError for anything outside {specific, general, general-adv, joint}.
ModelKind parse_model_kind(const std::string& name);

struct ModelConfig {
  std::size_t embedding_dim = 128;
  std::size_t hidden_dim = 128;  // per direction
  std::size_t mlp_hidden_dim = 128;
  double dropout_rate = 0.5;
  std::size_t vocab_size = 0;
  std::size_t num_slot_labels = 0;
  std::size_t num_domains = 0;
  double lambda_adv = 0.0;

  /// Throws ConfigError when a dimension is zero, the dropout rate is
  /// outside [0, 1) or lambda is negative.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Name-ordered parameter table. Addresses are stable for the lifetime of
/// the set, so tapes may hold pointers into it.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Tensor value);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::map<std::string, Parameter>& all() { return params_; }
  const std::map<std::string, Parameter>& all() const { return params_; }

  void zero_grad();
  std::size_t count() const;

 private:
  std::map<std::string, Parameter> params_;
};

/// Glorot-uniform matrix.
Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Dropout randomness and mode for one forward pass.
struct ForwardContext {
  Mode mode = Mode::eval;
  Rng* rng = nullptr;  // required in train mode
};

/// Embedding table plus forward and backward LSTMs. Parameters live in the
/// owning model's ParameterSet under `prefix`.
class BiLstmEncoder {
 public:
  BiLstmEncoder() = default;
  BiLstmEncoder(ParameterSet& params, std::string prefix, const ModelConfig& config, Rng& rng);
  /// Bind to parameters already present in `params` (checkpoint load).
  static BiLstmEncoder bind(ParameterSet& params, std::string prefix, const ModelConfig& config);

  /// States [B x T_max x 2H]: forward state at t concatenated with the
  /// backward state at t. The backward LSTM starts at each row's last real
  /// token; padded steps carry its zero initial state. Dropout is applied to
  /// the embeddings and to the output states in train mode. With
  /// trainable=false the parameters enter the tape as constants.
  Var encode(Tape& tape, const data::Batch& batch, const ForwardContext& ctx, bool trainable = true) const;

  std::size_t output_dim() const { return 2 * config_.hidden_dim; }
  const ModelConfig& config() const { return config_; }
  const std::string& prefix() const { return prefix_; }
  /// Names of every parameter owned by this encoder.
  std::vector<std::string> parameter_names() const;

 private:
  struct Direction {
    Parameter* input_weights = nullptr;
    Parameter* recurrent_weights = nullptr;
    Parameter* bias = nullptr;
  };

  Var run_direction(Tape& tape, const Direction& dir, Var inputs, const data::Batch& batch, bool reverse,
                    bool trainable) const;

  ModelConfig config_;
  std::string prefix_;
  Parameter* embedding_ = nullptr;
  Direction forward_;
  Direction backward_;
};

/// One tanh hidden layer then an affine map to `out` logits.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterSet& params, std::string prefix, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
  static Mlp bind(ParameterSet& params, std::string prefix);

  /// x [N x in] -> logits [N x out]
  Var logits(Tape& tape, Var x, bool trainable = true) const;
  std::size_t in_dim() const;
  std::size_t out_dim() const;

 private:
  Parameter* w1_ = nullptr;
  Parameter* b1_ = nullptr;
  Parameter* w2_ = nullptr;
  Parameter* b2_ = nullptr;
};

/// Attention pooling (single affine scorer) followed by an MLP over domains.
class DomainClassifier {
 public:
  DomainClassifier() = default;
  DomainClassifier(ParameterSet& params, std::string prefix, const ModelConfig& config, Rng& rng);
  static DomainClassifier bind(ParameterSet& params, std::string prefix);

  /// alpha [B x T_max]: softmax of the scores over real positions; padded
  /// positions get weight exactly 0.
  Var attention(Tape& tape, Var states, const data::Batch& batch) const;
  /// c [B x 2H] = sum_t alpha_t h_t
  Var pool(Tape& tape, Var states, const data::Batch& batch) const;
  /// log P(d | w) [B x D]
  Var log_probs(Tape& tape, Var states, const data::Batch& batch) const;

 private:
  Parameter* score_w_ = nullptr;
  Parameter* score_b_ = nullptr;
  Mlp head_;
};

struct LossBundle {
  Var total;  // l_y + lambda * l_d
  double l_y = 0.0;
  double l_d = 0.0;
  double total_value = 0.0;
};

struct LossOptions {
  /// Route the domain branch through grad_reverse. Disabled only to measure
  /// the unreversed gradient of l_d.
  bool reverse_gradient = true;
  /// Overrides config().lambda_adv when set to a value >= 0.
  double lambda_override = -1.0;
};

/// l_y: mean over utterances of the mean token NLL over real tokens.
Var slot_loss(Var log_probs, const data::Batch& batch);
/// l_d: mean over utterances of -log P(d*).
Var domain_loss(Var log_probs, const data::Batch& batch);

/// Per-step argmax over [B*T x L] scores, ties to the lowest label id.
/// Returns one label-id sequence per row, real tokens only.
std::vector<std::vector<std::size_t>> decode(const Tensor& scores, const data::Batch& batch);

class SlotModel {
 public:
  /// Fresh Glorot-initialized model. A domain classifier is created iff
  /// kind == general_adv.
  SlotModel(const ModelConfig& config, ModelKind kind, Rng& rng);
  /// Model bound to loaded parameters.
  SlotModel(const ModelConfig& config, ModelKind kind, ParameterSet params);

  SlotModel(const SlotModel& other);
  SlotModel& operator=(const SlotModel& other);
  SlotModel(SlotModel&&) noexcept;
  SlotModel& operator=(SlotModel&&) noexcept;
  ~SlotModel();

  const ModelConfig& config() const { return config_; }
  ModelKind kind() const { return kind_; }
  bool has_domain_classifier() const { return kind_ == ModelKind::general_adv; }

  ParameterSet& params() { return *params_; }
  const ParameterSet& params() const { return *params_; }
  const BiLstmEncoder& encoder() const { return encoder_; }

  Var encode(Tape& tape, const data::Batch& batch, const ForwardContext& ctx) const;
  /// log P(y_t | w) as [B*T_max x L]
  Var slot_log_probs(Tape& tape, Var states) const;
  /// P(y_t | w) as [B*T_max x L]
  Var slot_label_dist(Tape& tape, Var states) const;
  const DomainClassifier& domain_classifier() const;

  LossBundle loss(Tape& tape, const data::Batch& batch, const ForwardContext& ctx, const LossOptions& options = {}) const;

  /// Eval-mode predictions, real tokens only.
  std::vector<std::vector<std::size_t>> predict(const data::Batch& batch) const;

 private:
  void bind();

  ModelConfig config_;
  ModelKind kind_;
  std::unique_ptr<ParameterSet> params_;
  BiLstmEncoder encoder_;
  Mlp slot_head_;
  DomainClassifier domain_;
};

/// Two frozen encoders plus a trainable output MLP over [specific || general].
class JointModel {
 public:
  static constexpr const char* kSpecificPrefix = "specific.";
  static constexpr const char* kGeneralPrefix = "general.";
  static constexpr const char* kHeadPrefix = "joint.";

  /// Copies both encoders out of the given models and creates a fresh head.
  /// The head's input width must equal the sum of the encoder widths.
  JointModel(const SlotModel& specific, const SlotModel& general, std::size_t mlp_hidden_dim, double dropout_rate,
             std::size_t num_slot_labels, Rng& rng);
  /// Bind to loaded parameters. Throws ConfigError when widths disagree.
  JointModel(const ModelConfig& specific_config, const ModelConfig& general_config, std::size_t mlp_hidden_dim,
             double dropout_rate, std::size_t num_slot_labels, ParameterSet params);

  JointModel(const JointModel&) = delete;
  JointModel& operator=(const JointModel&) = delete;
  JointModel(JointModel&&) noexcept;
  JointModel& operator=(JointModel&&) noexcept;
  ~JointModel();

  ParameterSet& params() { return *params_; }
  const ParameterSet& params() const { return *params_; }
  const BiLstmEncoder& specific_encoder() const { return specific_; }
  const BiLstmEncoder& general_encoder() const { return general_; }
  std::vector<std::string> head_parameter_names() const;
  std::vector<std::string> encoder_parameter_names() const;

  std::size_t mlp_hidden_dim() const { return mlp_hidden_dim_; }
  double dropout_rate() const { return dropout_rate_; }
  std::size_t num_slot_labels() const { return num_slot_labels_; }

  /// log P(y_t | w) as [B*T_max x L]; encoders always run in eval mode.
  Var log_probs(Tape& tape, const data::Batch& batch, const ForwardContext& ctx) const;
  /// P(y_t | w) as [B*T_max x L]
  Var slot_label_dist(Tape& tape, const data::Batch& batch, const ForwardContext& ctx) const;
  LossBundle loss(Tape& tape, const data::Batch& batch, const ForwardContext& ctx) const;
  std::vector<std::vector<std::size_t>> predict(const data::Batch& batch) const;

 private:
  void bind(const ModelConfig& specific_config, const ModelConfig& general_config);
  /// Concatenated frozen encoder states, flattened to [B*T_max x 4H].
  Var head_input(Tape& tape, const data::Batch& batch, const ForwardContext& ctx) const;

  std::unique_ptr<ParameterSet> params_;
  BiLstmEncoder specific_;
  BiLstmEncoder general_;
  Mlp head_;
  std::size_t mlp_hidden_dim_;
  double dropout_rate_;
  std::size_t num_slot_labels_;
};

}  // namespace slu::model
