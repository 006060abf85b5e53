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

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "attnprune/tensor.hpp"

namespace attnprune {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double weight_decay = 0.0;  // decoupled
  double clip = 1.0;          // global gradient norm
  std::size_t batch_size = 32;
  std::size_t max_steps = 1000;
  std::size_t max_epochs = 0;  // 0 = bounded by max_steps only
  std::size_t warmup = 0;      // 0 = constant learning rate
  std::uint64_t seed = 0;
  std::size_t eval_every = 100;
  std::size_t patience = 0;    // evaluations without improvement before stopping; 0 = never
  std::size_t eval_examples = 0;  // cap on validation examples per evaluation; 0 = all
  std::size_t lm_context = 64;    // LM segment length

  void validate() const;
};

struct OptimState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

// Linear warmup to cfg.lr, then decay proportional to 1/sqrt(step).
double learning_rate(const TrainConfig& cfg, std::uint64_t step);

struct AdamStepInfo {
  double lr = 0.0;
  double grad_norm = 0.0;  // before clipping
  bool clipped = false;
};

// One bias-corrected Adam update after global-norm clipping. `names` label
// diagnostics and may be empty. Throws NumericalError on a non-finite gradient
// before touching any weight.
AdamStepInfo adam_step(std::vector<Tensor*> weights, const std::vector<Tensor>& grads,
                       OptimState& state, const TrainConfig& cfg,
                       const std::vector<std::string>& names = {});

}  // namespace attnprune
