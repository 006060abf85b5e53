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
#include <span>
#include <vector>

#include "attnprune/data.hpp"
#include "attnprune/model.hpp"

namespace attnprune {

struct EvalMetrics {
  double loss = 0.0;        // mean token cross-entropy, nats
  double perplexity = 0.0;  // exp(loss)
  double token_accuracy = 0.0;
  double bleu = 0.0;        // pair tasks with BLEU enabled
  std::uint64_t examples = 0;
  std::uint64_t tokens = 0;
};

// Running token-level sums over logits rows; rows whose target equals
// `ignore_id` are skipped.
struct TokenTally {
  double nll = 0.0;
  std::uint64_t correct = 0;
  std::uint64_t count = 0;

  void add(const Tensor& logits, std::span<const int> targets, int ignore_id = kPadId);
  EvalMetrics metrics() const;  // throws DomainError when empty
};

// Corpus BLEU-4 in [0, 100] with a 1e-16 floor on each modified precision.
double bleu(const std::vector<std::vector<int>>& hypotheses,
            const std::vector<std::vector<int>>& references);

// Logits [B * len, V] for a batch of either architecture.
Var batch_logits(const BoundModel& model, const Batch& batch, const ForwardOptions& opts = {});

struct EvalOptions {
  std::size_t batch_size = 64;
  std::size_t lm_context = 64;
  std::size_t max_examples = 0;  // 0 = whole split
  bool with_bleu = false;
  const MaskSet* masks = nullptr;
};

// Teacher-forced loss, perplexity and accuracy over a split, pads excluded.
// BLEU compares greedy decodes (eos stripped) with targets (bos/eos stripped).
EvalMetrics evaluate(const Checkpoint& ckpt, const Dataset& data, const EvalOptions& opts = {});

EvalMetrics perplexity(const Checkpoint& ckpt, const Dataset& data, const MaskSet* masks = nullptr,
                       std::size_t lm_context = 64);
double token_accuracy(const Checkpoint& ckpt, const Dataset& data, const MaskSet* masks = nullptr);

}  // namespace attnprune
