// SPDX-License-Identifier: Apache-2.0
//
// Training loops for the domain-specific, domain-general (optionally
// adversarial) and joint regimes.
//
// All three share one loop: per epoch, shuffle and batch the training split
// (rare words replaced by UNK at random), run forward/backward, check
// gradients are finite, clip to the global norm, take an Adam step; then
// score the dev split and keep the parameters of the best dev F1 epoch (the
// latest one on ties). Training stops after `patience` epochs without a
// strictly better dev F1 or at max_epochs.
//
// Randomness is drawn from fixed streams of Rng(seed): 1 model init, 2 dev
// split, 100+e batching of epoch e, 10000+e dropout of epoch e.

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "slu/data.hpp"
#include "slu/model.hpp"
#include "slu/optim.hpp"

namespace slu::train {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  double clip_norm = 5.0;
  double dropout = 0.5;
  double lambda_adv = 0.0;
  std::size_t max_epochs = 50;
  std::size_t patience = 3;
  double dev_fraction = 0.1;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double singleton_unk_prob = 0.5;

  /// Throws ConfigError on a non-positive learning rate, batch size, clip
  /// norm or epoch budget, patience 0, dev_fraction outside (0, 0.5),
  /// dropout outside [0, 1) or negative lambda.
  void validate() const;
  AdamConfig adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_eps}; }
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t batch = 0;  // index within the epoch
  double l_y = 0.0;
  double l_d = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;     // before clipping
  double clipped_norm = 0.0;  // after clipping
};

/// One line of the metrics log.
struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;  // "train", "dev" or "test"
  std::optional<double> l_y;
  std::optional<double> l_d;
  std::optional<double> f1;
  std::optional<double> probe_acc;
  double wall_clock = 0.0;  // seconds since training started
};

/// Compact JSON object, keys in fixed order, no trailing newline.
std::string to_json_line(const EpochRecord& r);

/// Eval-mode predictions (label ids per row) for a batch.
using Predictor = std::function<std::vector<std::vector<std::size_t>>(const data::Batch&)>;

struct Hooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
  // Called after each epoch's updates with the current (not the best) weights.
  std::function<void(std::size_t epoch, const Predictor&)> on_epoch_end;
};

template <class Model>
struct TrainResult {
  Model model;
  data::Vocabulary vocab;      // the vocabulary the model was trained with
  double best_dev_f1 = 0.0;
  std::size_t best_epoch = 0;  // 1-based
  std::size_t epochs_run = 0;
  std::vector<EpochRecord> log;
  std::vector<std::string> optimized;  // parameters with Adam state
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> dev_indices;
};

/// Model dimensions that do not come from the data.
struct Architecture {
  std::size_t embedding_dim = 128;
  std::size_t hidden_dim = 128;
  std::size_t mlp_hidden_dim = 128;
};

/// Dom-Spec. `utterances` must all come from one domain. The word table of
/// `vocab` is used as is; the label table is restricted to the labels of
/// `utterances`.
TrainResult<model::SlotModel> train_specific(const std::vector<data::Utterance>& utterances,
                                             const data::Vocabulary& vocab, const Architecture& arch,
                                             const TrainConfig& config, const Hooks& hooks = {});

/// Dom-Gen (lambda_adv == 0) or Dom-Gen-Adv (lambda_adv > 0) over the union
/// of all domains. Throws ConfigError when lambda_adv > 0 and fewer than two
/// domains are present.
TrainResult<model::SlotModel> train_general(const std::vector<data::Utterance>& utterances,
                                            const data::Vocabulary& vocab, const Architecture& arch,
                                            const TrainConfig& config, const Hooks& hooks = {});

/// Joint model for one domain: both encoders frozen, only the output MLP is
/// optimized. `vocab` must carry the target-domain label table. Throws
/// ConfigError when the encoders' vocabularies differ from each other or
/// from `vocab`.
TrainResult<model::JointModel> train_joint(const model::SlotModel& specific, const model::SlotModel& general,
                                           const std::vector<data::Utterance>& utterances,
                                           const data::Vocabulary& vocab, std::size_t mlp_hidden_dim,
                                           const TrainConfig& config, const Hooks& hooks = {});

/// Eval-mode predictions as label strings, in input order.
std::vector<std::vector<std::string>> predict_labels(const Predictor& predict,
                                                     const std::vector<data::Utterance>& utterances,
                                                     const data::Vocabulary& vocab, std::size_t batch_size = 64);

}  // namespace slu::train
