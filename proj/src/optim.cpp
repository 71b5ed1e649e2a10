// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include "dat/optim.hpp"

#include <cmath>

namespace dat {

const char* to_string(OptimKind k) { return k == OptimKind::Adam ? "adam" : "adamw"; }
const char* to_string(ScheduleKind k) { return k == ScheduleKind::Constant ? "constant" : "warmup_cosine"; }

void OptimConfig::validate() const {
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("optimizer betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("optimizer eps must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
  if (!(clip_norm >= 0)) throw ConfigError("clip_norm must be non-negative");
}

void ScheduleConfig::validate() const {
  if (!(max_lr >= 0) || !(min_lr >= 0)) throw ConfigError("learning rates must be non-negative");
  if (kind == ScheduleKind::WarmupCosine) {
    if (min_lr > max_lr) throw ConfigError("min_lr must not exceed max_lr");
    if (warmup_steps > total_steps) throw ConfigError("warmup_steps must not exceed total_steps");
    if (total_steps == 0) throw ConfigError("warmup_cosine needs total_steps > 0");
  }
}

double schedule_lr(const ScheduleConfig& s, std::size_t step) {
  if (s.kind == ScheduleKind::Constant) return s.max_lr;
  if (step > s.total_steps)
    throw ConfigError("schedule step " + std::to_string(step) + " is past total_steps " + std::to_string(s.total_steps));
  if (step < s.warmup_steps)
    return s.max_lr * static_cast<double>(step + 1) / static_cast<double>(s.warmup_steps);
  const std::size_t span = s.total_steps - s.warmup_steps;
  if (span == 0) return s.min_lr;
  const double progress = static_cast<double>(step - s.warmup_steps) / static_cast<double>(span);
  return s.min_lr + 0.5 * (s.max_lr - s.min_lr) * (1.0 + std::cos(M_PI * progress));
}

template <typename T>
Optimizer<T>::Optimizer(ParamList<T> params, OptimConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), T(0));
    v_.emplace_back(p.tensor.numel(), T(0));
  }
}

template <typename T>
void Optimizer<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
double Optimizer<T>::step(double lr) {
  double sq = 0.0;
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericError("non-finite gradient in " + p.name + " at step " + std::to_string(t_ + 1));
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  const double norm = std::sqrt(sq);
  const double clip = cfg_.clip_norm > 0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;

  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_)), c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& t = params_[k].tensor;
    auto w = t.mutable_data();
    const bool has_grad = t.has_grad();
    const auto g = has_grad ? t.grad() : std::span<const T>();
    const bool decay = cfg_.weight_decay > 0 && t.rank() >= 2;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      double gi = has_grad ? static_cast<double>(g[i]) * clip : 0.0;
      if (decay && cfg_.kind == OptimKind::Adam) gi += cfg_.weight_decay * static_cast<double>(w[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double wi = static_cast<double>(w[i]);
      if (decay && cfg_.kind == OptimKind::AdamW) wi -= lr * cfg_.weight_decay * wi;
      wi -= lr * (mi / c1) / (std::sqrt(vi / c2) + cfg_.eps);
      w[i] = static_cast<T>(wi);
    }
  }
  return norm;
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace dat
