// SPDX-License-Identifier: Apache-2.0
//
// Gradient clipping and Adam.

#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "slu/tape.hpp"

namespace slu::train {

using ad::Parameter;
using ad::Tensor;

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// L2 norm over every gradient entry of every parameter.
double global_norm(std::span<Parameter* const> params);

struct ClipResult {
  double norm_before = 0.0;
  double norm_after = 0.0;
};

/// Rescale all gradients by clip_norm / g when the global norm g exceeds
/// clip_norm; otherwise leave them untouched.
ClipResult clip_gradients(std::span<Parameter* const> params, double clip_norm);

/// Throws TrainingAborted naming the batch and the first parameter whose
/// gradient holds a NaN or infinity.
void check_finite(std::span<Parameter* const> params, std::size_t batch_index);

/// Adam with bias correction. Moments exist only for the parameters handed
/// to the constructor; no other parameter is ever touched.
class AdamState {
 public:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  AdamState(std::vector<Parameter*> params, AdamConfig config);

  /// One update from the current gradients. Non-finite gradients abort.
  void step(std::size_t batch_index);

  std::size_t step_count() const { return steps_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  std::span<Parameter* const> parameters() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig config_;
  std::map<std::string, Moments> moments_;
  std::size_t steps_ = 0;
};

}  // namespace slu::train
