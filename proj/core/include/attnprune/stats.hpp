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

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "attnprune/attention.hpp"

namespace attnprune {

struct HeadKey {
  AttentionKind kind = AttentionKind::kSelfEncoder;
  std::size_t layer = 0;
  std::size_t head = 0;

  auto operator<=>(const HeadKey&) const = default;
};

std::string to_string(const HeadKey& key);

// Stored matrix shape for one head: queries x keys at maximal lengths.
struct HeadLayout {
  HeadKey key;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

// Running per-entry sums of attention weights and visitation counts.
class AttentionStats {
 public:
  struct Head {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> sum;
    std::vector<std::uint64_t> count;

    bool operator==(const Head&) const = default;
  };

  AttentionStats() = default;
  explicit AttentionStats(std::span<const HeadLayout> layout);

  // Adds weights[i, j] for every valid query i and valid key j. With
  // `causal`, entries above the diagonal are not visits.
  void accumulate(const HeadKey& key, const Tensor& weights, std::span<const bool> query_valid,
                  std::span<const bool> key_valid, bool causal = false);
  void accumulate(const AttentionEvent& event);

  void add_examples(std::uint64_t n) { examples_seen_ += n; }
  std::uint64_t examples_seen() const { return examples_seen_; }

  const std::map<HeadKey, Head>& heads() const { return heads_; }
  const Head& head(const HeadKey& key) const;
  std::vector<HeadLayout> layout() const;

  bool operator==(const AttentionStats&) const = default;

 private:
  friend AttentionStats merge(const AttentionStats& a, const AttentionStats& b);
  friend AttentionStats stats_from_json(const std::string& text);

  Head& mutable_head(const HeadKey& key);

  std::map<HeadKey, Head> heads_;
  std::uint64_t examples_seen_ = 0;
};

// Elementwise sum of two shards with identical layouts.
AttentionStats merge(const AttentionStats& a, const AttentionStats& b);

// Mean attention per entry; entries never visited are flagged, not zeroed.
struct HeadAverage {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> mean;
  std::vector<std::uint8_t> visited;

  bool is_visited(std::size_t i, std::size_t j) const { return visited[i * cols + j] != 0; }
  double at(std::size_t i, std::size_t j) const { return mean[i * cols + j]; }
};

struct AverageAttention {
  std::map<HeadKey, HeadAverage> heads;
  std::uint64_t examples = 0;

  std::size_t num_layers(AttentionKind kind) const;
  std::size_t num_heads(AttentionKind kind, std::size_t layer) const;
};

AverageAttention average(const AttentionStats& stats);

std::string stats_to_json(const AttentionStats& stats);
AttentionStats stats_from_json(const std::string& text);
void save_stats(const AttentionStats& stats, const std::string& path);
AttentionStats load_stats(const std::string& path);

}  // namespace attnprune
