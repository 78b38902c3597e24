// SPDX-License-Identifier: Apache-2.0
//
// Domain probe: how much domain identity survives in frozen encoder states.

#pragma once

#include <vector>

#include "slu/data.hpp"
#include "slu/model.hpp"
#include "slu/train.hpp"

namespace slu::eval {

struct ProbeResult {
  double accuracy = 0.0;  // percent on `test`
  std::size_t num_domains = 0;
  double chance = 0.0;    // percent, 100 / num_domains
  /// confusion[gold][predicted], indexed by vocabulary domain id.
  std::vector<std::vector<std::size_t>> confusion;
};

/// Trains a fresh attention-pool + linear-softmax domain classifier on the
/// encoder's eval-mode states for `train` (the encoder itself is never
/// updated), then reports its accuracy on `test`. Uses the optimizer and
/// dropout settings of `config` with at most `epochs` passes. Throws
/// ConfigError when `train` covers fewer than two domains.
ProbeResult probe_domain_accuracy(const model::BiLstmEncoder& encoder, const std::vector<data::Utterance>& train,
                                  const std::vector<data::Utterance>& test, const data::Vocabulary& vocab,
                                  const train::TrainConfig& config, std::size_t epochs = 10);

}  // namespace slu::eval
