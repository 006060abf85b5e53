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
#include <optional>
#include <string>
#include <vector>

#include "attnprune/data.hpp"
#include "attnprune/masks.hpp"
#include "attnprune/metrics.hpp"
#include "attnprune/model.hpp"
#include "attnprune/optim.hpp"
#include "attnprune/stats.hpp"

namespace attnprune {

struct TrainLogRow {
  std::uint64_t step = 0;
  std::string split;  // "train" or "valid"
  double loss = 0.0;
  double ppl_or_acc = 0.0;  // perplexity for LMs, token accuracy for pairs
  double bleu = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

// Columns step, split, loss, ppl_or_acc, bleu, lr, wall_ms.
std::string train_log_csv(const std::vector<TrainLogRow>& log);

struct TrainResult {
  Checkpoint best;  // by validation loss (LM) or validation BLEU (pairs)
  Checkpoint last;
  EvalMetrics best_valid;
  std::uint64_t best_step = 0;
  std::uint64_t steps = 0;
  bool diverged = false;
  std::string stop_reason;
  std::vector<TrainLogRow> log;
};

// Minimizes token cross-entropy on data.train, evaluating on data.valid every
// cfg.eval_every steps and at the end. A non-empty mask set is applied in every
// attention call. On a non-finite loss or gradient training stops and the
// best checkpoint so far is kept.
TrainResult train(const Checkpoint& init, const TaskData& data, const TrainConfig& cfg,
                  const MaskSet* masks = nullptr);

// Attention statistics of `ckpt` over a split (unmasked forward passes).
// examples_seen counts pairs, or LM segments of lm_context tokens.
AttentionStats collect_stats(const Checkpoint& ckpt, const Dataset& data,
                             std::size_t batch_size = 32, std::size_t lm_context = 64);

enum class RetrainMode { kFresh, kFinetune };
std::string_view to_string(RetrainMode m);
RetrainMode parse_retrain_mode(std::string_view s);

enum class MaskSource { kAp, kRandom, kOod };

struct ApBaseline {
  Checkpoint init;
  TrainResult trained;
  EvalMetrics test;
  AttentionStats stats;
  std::uint64_t stats_checkpoint_hash = 0;  // hash of the checkpoint the stats came from
};

struct ApCell {
  PruneSpec spec;
  RetrainMode mode = RetrainMode::kFresh;
  MaskSource source = MaskSource::kAp;
  MaskSet masks;
  SparsityReport sparsity;
  TrainResult trained;
  EvalMetrics test;
  double mac_fraction = 1.0;
  std::size_t mac_length = 0;
};

struct ApOptions {
  TrainConfig train;
  EvalOptions eval;  // masks field ignored
  std::size_t stats_batch = 32;
};

// Steps 1 and 2: train from init_params(config, init_seed), evaluate the best
// checkpoint on the test split and collect its statistics over the train split.
ApBaseline ap_baseline(const TransformerConfig& config, std::uint64_t init_seed,
                       const TaskData& data, const ApOptions& opts);

// Steps 3 and 4 for one prune spec. kRandom draws masks with `mask_seed`;
// kOod uses *ood (which must fit the model) instead of building masks.
ApCell ap_prune(const ApBaseline& base, const TaskData& data, const PruneSpec& spec,
                RetrainMode mode, const ApOptions& opts, MaskSource source = MaskSource::kAp,
                std::uint64_t mask_seed = 0, const MaskSet* ood = nullptr);

// Median source length (pairs) or context length (LM) of the test split.
std::size_t median_eval_length(const Dataset& data, std::size_t lm_context);

}  // namespace attnprune
