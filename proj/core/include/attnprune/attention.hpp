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

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attnprune/autograd.hpp"

namespace attnprune {

enum class Activation { kSoftmax, kEntmax15 };
enum class AttentionKind { kSelfEncoder, kSelfDecoder, kCross };

inline constexpr AttentionKind kAllKinds[] = {AttentionKind::kSelfEncoder,
                                              AttentionKind::kSelfDecoder,
                                              AttentionKind::kCross};

std::string_view to_string(Activation a);
std::string_view to_string(AttentionKind k);
Activation parse_activation(std::string_view s);
AttentionKind parse_kind(std::string_view s);

inline constexpr double kDefaultNegFill = -1e9;

struct AttentionConfig {
  std::size_t d_model = 0;
  std::size_t n_heads = 1;
  std::size_t d_k = 0;
  std::size_t d_v = 0;
  Activation activation = Activation::kSoftmax;
  double neg_fill = kDefaultNegFill;

  // d_k = d_v = d_model / n_heads.
  static AttentionConfig make(std::size_t d_model, std::size_t n_heads,
                              Activation activation = Activation::kSoftmax);
  void validate() const;
};

// [n_query x n_key] additive mask with entries in {0, neg_fill}.
class AdditiveMask {
 public:
  AdditiveMask() = default;
  AdditiveMask(std::size_t rows, std::size_t cols, double neg_fill = kDefaultNegFill);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double neg_fill() const { return neg_fill_; }

  bool masked(std::size_t i, std::size_t j) const { return values_[i * cols_ + j] != 0.0; }
  void set_masked(std::size_t i, std::size_t j, bool masked = true);
  std::size_t masked_count() const;

  const Tensor& values() const { return values_; }

  // Entrywise minimum: a position masked by either operand stays masked.
  AdditiveMask combine(const AdditiveMask& other) const;

  // Throws MaskError when some row has no unmasked entry.
  void validate() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  double neg_fill_ = kDefaultNegFill;
  Tensor values_;
};

// Entry (i, j) masked iff j > i.
AdditiveMask build_causal_mask(std::size_t n, double neg_fill = kDefaultNegFill);

// ---- row normalizers -----------------------------------------------------

void softmax_row(std::span<const double> logits, std::span<double> out);

// p_i = [z_i/2 - tau]_+^2 with sum(p) = 1. tau is located by 60 bisection
// steps on [max(z)/2 - 1, max(z)/2] and then snapped to the closed form for
// the support the bisection found.
void entmax15_row(std::span<const double> logits, std::span<double> out);

// Vector-Jacobian product of entmax15 at output p for upstream g.
void entmax15_backward_row(std::span<const double> p, std::span<const double> upstream,
                           std::span<double> downstream);

// Row-wise over the last axis.
Tensor softmax_rows(const Tensor& logits);
Tensor entmax15_rows(const Tensor& logits);
Tensor entmax15_backward(const Tensor& p, const Tensor& upstream);

Var softmax_rows(Var logits);
Var entmax15_rows(Var logits);
Var normalize_rows(Var logits, Activation activation);

// ---- attention -------------------------------------------------------------

struct AttentionResult {
  Var output;
  Var weights;
};

// weights = activation((Q K^T + M) / sqrt(d_k)), output = weights V.
AttentionResult scaled_dot_product(Var q, Var k, Var v, const AdditiveMask* mask,
                                   Activation activation);

struct MultiHeadParams {
  Var w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
};

// One head's weight matrix for one batch element. `weights` covers the padded
// rows x cols window; only the top-left q_len x k_len block is real.
struct AttentionEvent {
  AttentionKind kind = AttentionKind::kSelfEncoder;
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t batch_index = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t q_len = 0;
  std::size_t k_len = 0;
  bool causal = false;
  std::span<const double> weights;
};

using AttentionObserver = std::function<void(const AttentionEvent&)>;

// Prune mask for one head at the given valid lengths; nullptr means none.
// A returned mask must be exactly q_len x k_len.
using HeadMaskFn =
    std::function<const AdditiveMask*(std::size_t head, std::size_t q_len, std::size_t k_len)>;

struct MultiHeadCall {
  Var x_q;   // [B, n, d]
  Var x_kv;  // [B, m, d]
  std::span<const std::size_t> q_lengths;   // per batch element; empty = n
  std::span<const std::size_t> kv_lengths;  // per batch element; empty = m
  bool causal = false;
  HeadMaskFn head_masks;
  AttentionKind kind = AttentionKind::kSelfEncoder;
  std::size_t layer = 0;
  const AttentionObserver* observer = nullptr;
};

// Batched multi-head attention with right padding. Causal, key-padding and
// per-head prune masks are merged by entrywise minimum.
Var multi_head(const MultiHeadCall& call, const MultiHeadParams& params,
               const AttentionConfig& config);

// Single-sequence form: x_q [n, d], x_kv [m, d]; head_masks empty or one per head.
Var multi_head(Var x_q, Var x_kv, std::span<const AdditiveMask> head_masks, bool causal,
               const MultiHeadParams& params, const AttentionConfig& config,
               const AttentionObserver* observer = nullptr);

}  // namespace attnprune
