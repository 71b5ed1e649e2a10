// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "dat/param.hpp"

namespace dat {

enum class OptimKind { Adam, AdamW };
enum class ScheduleKind { Constant, WarmupCosine };
const char* to_string(OptimKind k);
const char* to_string(ScheduleKind k);

struct OptimConfig {
  OptimKind kind = OptimKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Adam adds it to the gradient (L2); AdamW decays the weights directly.
  // Only rank >= 2 tensors are decayed.
  double weight_decay = 0.0;
  double clip_norm = 0.0;  // global-norm clip; 0 disables

  void validate() const;
};

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::Constant;
  double max_lr = 1e-3;
  double min_lr = 0.0;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 0;

  void validate() const;
};

// Constant: max_lr. WarmupCosine: max_lr * (s + 1) / warmup for s < warmup,
// then cosine from max_lr down to min_lr at s == total_steps.
double schedule_lr(const ScheduleConfig& sched, std::size_t step);

template <typename T>
class Optimizer {
 public:
  Optimizer(ParamList<T> params, OptimConfig cfg);

  // One update at learning rate lr. Returns the global gradient norm before
  // clipping. Throws NumericError (naming the tensor) on a non-finite
  // gradient, before touching any parameter. Missing gradients count as 0.
  double step(double lr);
  void zero_grad();

  std::size_t steps() const { return t_; }
  const OptimConfig& config() const { return cfg_; }
  const ParamList<T>& params() const { return params_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

 private:
  ParamList<T> params_;
  OptimConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace dat
