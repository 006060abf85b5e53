/* Copyright 2026 The attnprune Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "attnprune/optim.hpp"

#include <cmath>

#include "attnprune/error.hpp"

namespace attnprune {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2 must lie in (0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train.eps must be positive");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  if (!(clip > 0.0)) throw ConfigError("train.clip must be positive");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (max_steps < 1) throw ConfigError("train.max_steps must be at least 1");
  if (eval_every < 1) throw ConfigError("train.eval_every must be at least 1");
  if (lm_context < 1) throw ConfigError("train.lm_context must be at least 1");
}

double learning_rate(const TrainConfig& cfg, std::uint64_t step) {
  if (cfg.warmup == 0) return cfg.lr;
  const double s = static_cast<double>(std::max<std::uint64_t>(step, 1));
  const double w = static_cast<double>(cfg.warmup);
  return cfg.lr * std::min(s / w, std::sqrt(w / s));
}

AdamStepInfo adam_step(std::vector<Tensor*> weights, const std::vector<Tensor>& grads,
                       OptimState& state, const TrainConfig& cfg,
                       const std::vector<std::string>& names) {
  if (weights.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(weights.size()) + " weights but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty()) {
    for (const Tensor* w : weights) {
      state.m.emplace_back(w->shape());
      state.v.emplace_back(w->shape());
    }
  }
  if (state.m.size() != weights.size()) throw ShapeError("adam_step: optimizer state size mismatch");

  double sq = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (grads[k].shape() != weights[k]->shape() || state.m[k].shape() != weights[k]->shape()) {
      throw ShapeError("adam_step: shape mismatch for weight " +
                       (k < names.size() ? names[k] : std::to_string(k)));
    }
    const auto g = grads[k].data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw NumericalError("non-finite gradient " + std::to_string(g[i]) + " in weight " +
                             (k < names.size() ? names[k] : std::to_string(k)) + " at index " +
                             std::to_string(i) + " (step " + std::to_string(state.step + 1) + ")");
      }
      sq += g[i] * g[i];
    }
  }

  AdamStepInfo info;
  info.grad_norm = std::sqrt(sq);
  double scale = 1.0;
  if (info.grad_norm > cfg.clip) {
    scale = cfg.clip / info.grad_norm;
    info.clipped = true;
  }
  state.step += 1;
  info.lr = learning_rate(cfg, state.step);
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < weights.size(); ++k) {
    auto w = weights[k]->data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    const auto g = grads[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * scale;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= info.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w[i]);
    }
  }
  return info;
}

}  // namespace attnprune
