// SPDX-License-Identifier: Apache-2.0

#include "slu/optim.hpp"

#include <cmath>

#include "slu/error.hpp"

namespace slu::train {

double global_norm(std::span<Parameter* const> params) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    for (double g : p->grad.data()) sq += g * g;
  }
  return std::sqrt(sq);
}

ClipResult clip_gradients(std::span<Parameter* const> params, double clip_norm) {
  ClipResult r;
  r.norm_before = r.norm_after = global_norm(params);
  if (r.norm_before > clip_norm) {
    const double factor = clip_norm / r.norm_before;
    for (Parameter* p : params) {
      for (double& g : p->grad.data()) g *= factor;
    }
    r.norm_after = global_norm(params);
  }
  return r;
}

void check_finite(std::span<Parameter* const> params, std::size_t batch_index) {
  for (const Parameter* p : params) {
    if (!p->grad.all_finite()) {
      throw TrainingAborted("batch " + std::to_string(batch_index) + ": non-finite gradient in parameter '" + p->name +
                            "'");
    }
  }
}

AdamState::AdamState(std::vector<Parameter*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.learning_rate > 0.0)) throw ConfigError("adam: learning rate must be > 0");
  for (Parameter* p : params_) {
    moments_.emplace(p->name, Moments{Tensor(p->value.shape()), Tensor(p->value.shape())});
  }
}

void AdamState::step(std::size_t batch_index) {
  check_finite(params_, batch_index);
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (Parameter* p : params_) {
    Moments& mo = moments_.at(p->name);
    double* m = mo.m.raw();
    double* v = mo.v.raw();
    double* w = p->value.raw();
    const double* g = p->grad.raw();
    for (std::size_t i = 0, n = p->value.size(); i < n; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      w[i] -= config_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

}  // namespace slu::train
