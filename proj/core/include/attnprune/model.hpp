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
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "attnprune/attention.hpp"
#include "attnprune/masks.hpp"
#include "attnprune/stats.hpp"
#include "attnprune/tokens.hpp"

namespace attnprune {

enum class Architecture { kLmOnly, kEncDec };

std::string_view to_string(Architecture a);
Architecture parse_architecture(std::string_view s);

struct TransformerConfig {
  std::size_t n_layers = 1;
  AttentionConfig attention;
  std::size_t d_ff = 0;
  std::size_t vocab_size = 0;
  std::size_t max_src_len = 2;
  std::size_t max_tgt_len = 2;
  bool tie_embeddings = false;
  Architecture arch = Architecture::kEncDec;

  void validate() const;
  bool operator==(const TransformerConfig& other) const;
};

// Stored attention shapes for every head of every kind the model has.
std::vector<HeadLayout> head_layout(const TransformerConfig& config);

// Ordered (name, shape) list of every learned weight.
std::vector<std::pair<std::string, Shape>> weight_layout(const TransformerConfig& config);

struct Checkpoint {
  TransformerConfig config;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> weights;

  const Tensor& weight(const std::string& name) const;
  Tensor& weight(const std::string& name);

  // CRC-32 over step, weight names and raw weight bytes.
  std::uint64_t content_hash() const;
};

// Matrices ~ U(-a, a) with a = sqrt(6 / (fan_in + fan_out)); embeddings ~
// N(0, 0.02); biases 0; layer-norm gains 1.
Checkpoint init_params(const TransformerConfig& config, std::uint64_t seed);

// Weights of a checkpoint bound as leaves on one tape.
class BoundModel {
 public:
  BoundModel(Tape& tape, const Checkpoint& ckpt, bool requires_grad);

  Var operator[](const std::string& name) const;
  const std::vector<std::pair<std::string, Var>>& vars() const { return vars_; }
  const TransformerConfig& config() const { return config_; }
  Tape& tape() const { return *tape_; }

 private:
  Tape* tape_;
  TransformerConfig config_;
  std::vector<std::pair<std::string, Var>> vars_;
  std::map<std::string, std::size_t> index_;
};

struct ForwardOptions {
  MaskSlicer* masks = nullptr;
  const AttentionObserver* observer = nullptr;
};

// Decoder-only LM over a right-padded batch. Returns logits [B * n, V].
Var lm_logits(const BoundModel& model, const TokenBatch& tokens, const ForwardOptions& opts = {});

// Encoder output [B, n, d].
Var encode(const BoundModel& model, const TokenBatch& src, const ForwardOptions& opts = {});

// Decoder logits [B * m, V] given encoder output and source lengths.
Var decode(const BoundModel& model, Var memory, std::span<const std::size_t> src_lengths,
           const TokenBatch& tgt_in, const ForwardOptions& opts = {});

Var seq2seq_logits(const BoundModel& model, const TokenBatch& src, const TokenBatch& tgt_in,
                   const ForwardOptions& opts = {});

// Single-sequence conveniences returning [n, V] / [m, V] logits.
Tensor lm_forward(const Checkpoint& ckpt, std::span<const int> tokens,
                  const MaskSet* masks = nullptr, const AttentionObserver* observer = nullptr);
Tensor seq2seq_forward(const Checkpoint& ckpt, std::span<const int> src,
                       std::span<const int> tgt_in, const MaskSet* masks = nullptr,
                       const AttentionObserver* observer = nullptr);

// Batched argmax decoding from bos; ties go to the smallest id. Each output
// ends at (and includes) eos when emitted, otherwise has max_len tokens.
std::vector<std::vector<int>> greedy_decode_batch(const Checkpoint& ckpt,
                                                  const std::vector<std::vector<int>>& srcs,
                                                  int bos_id, int eos_id, std::size_t max_len,
                                                  const MaskSet* masks = nullptr);

std::vector<int> greedy_decode(const Checkpoint& ckpt, std::span<const int> src, int bos_id,
                               int eos_id, std::size_t max_len, const MaskSet* masks = nullptr);

// Index of the largest entry; first index wins ties.
std::size_t argmax(std::span<const double> row);

}  // namespace attnprune
