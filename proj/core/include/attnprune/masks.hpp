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
#include <tuple>
#include <vector>

#include "attnprune/attention.hpp"
#include "attnprune/stats.hpp"

namespace attnprune {

// p is a percentage in [0, 100].
struct PruneSpec {
  double p = 0.0;
  std::vector<AttentionKind> kinds;

  void validate() const;
};

struct LayerThreshold {
  AttentionKind kind = AttentionKind::kSelfEncoder;
  std::size_t layer = 0;
  double tau = 0.0;

  bool operator==(const LayerThreshold&) const = default;
};

// Boolean prune matrix for one head (true = pruned). `scores` holds the
// repair priority of each entry (mean attention for data-driven masks, a
// random draw for random masks) and is NaN where the entry was never visited.
struct HeadMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pruned;
  std::vector<std::uint8_t> rowkeep;
  std::vector<double> scores;

  bool is_pruned(std::size_t i, std::size_t j) const { return pruned[i * cols + j] != 0; }
  bool is_rowkeep(std::size_t i, std::size_t j) const { return rowkeep[i * cols + j] != 0; }
  bool is_visited(std::size_t i, std::size_t j) const;
  double score(std::size_t i, std::size_t j) const { return scores[i * cols + j]; }

  bool operator==(const HeadMask& other) const;
};

struct MaskMetadata {
  double p = 0.0;
  std::vector<AttentionKind> kinds;
  std::string source_dataset;
  std::uint64_t seed = 0;
  std::string baseline = "ap";  // "ap" or "random"
  std::vector<LayerThreshold> thresholds;
  double achieved_sparsity = 0.0;

  bool operator==(const MaskMetadata&) const = default;
};

struct MaskSet {
  MaskMetadata meta;
  std::map<HeadKey, HeadMask> heads;

  bool covers(AttentionKind kind) const;
  const HeadMask* find(const HeadKey& key) const;
  std::size_t pruned_count() const;

  bool operator==(const MaskSet&) const = default;
};

// Nearest-rank percentile of the visited mean-attention entries pooled over
// every head of (kind, layer): sorted ascending, index min(K-1, floor(p K / 100)).
double layer_threshold(const AverageAttention& avg, AttentionKind kind, std::size_t layer,
                       double p);

// Data-driven masks: an entry is pruned when it was never visited or its mean
// attention is strictly below its layer threshold; fully pruned visited rows
// get their largest entry back (row-keep). p = 0 yields no pruned entries.
MaskSet build_masks(const AverageAttention& avg, const PruneSpec& spec);

// Random baseline with the visitation structure of `shape_like`: per head,
// round(p/100 K) visited entries pruned uniformly without replacement, then
// row-keep restores a random entry of every emptied row.
MaskSet random_masks(const AverageAttention& shape_like, double p, std::uint64_t seed,
                     std::vector<AttentionKind> kinds = {});
MaskSet random_masks(const MaskSet& shape_like, double p, std::uint64_t seed);

// Top-left n x m window of a head's mask as an additive mask. Any window row
// left without an open entry (within the causal band when `causal`) gets its
// highest-priority entry cleared.
AdditiveMask slice_additive(const MaskSet& masks, const HeadKey& key, std::size_t n,
                            std::size_t m, double neg_fill = kDefaultNegFill,
                            bool causal = false);

struct SparsityReport {
  double overall = 0.0;
  std::map<AttentionKind, double> per_kind;
  std::map<std::pair<AttentionKind, std::size_t>, double> per_layer;
  std::uint64_t pruned_visited = 0;
  std::uint64_t visited = 0;
};

// Pruned visited entries over visited entries.
SparsityReport mask_sparsity(const MaskSet& masks);

// Throws IncompatibleError unless every head of every covered kind matches
// the model layout exactly.
void check_mask_compatibility(const MaskSet& masks, const std::vector<HeadLayout>& layout);

std::string masks_to_json(const MaskSet& masks);
MaskSet masks_from_json(const std::string& text);
void save_masks(const MaskSet& masks, const std::string& path);
MaskSet load_masks(const std::string& path);

// Per-run cache of sliced additive masks keyed by (head, n, m, causal).
class MaskSlicer {
 public:
  explicit MaskSlicer(const MaskSet* masks, double neg_fill = kDefaultNegFill)
      : masks_(masks), neg_fill_(neg_fill) {}

  // nullptr when the head is not covered or nothing in the window is masked.
  const AdditiveMask* get(const HeadKey& key, std::size_t n, std::size_t m, bool causal);

  bool active() const { return masks_ != nullptr && !masks_->heads.empty(); }

 private:
  const MaskSet* masks_;
  double neg_fill_;
  std::map<std::tuple<HeadKey, std::size_t, std::size_t, bool>, std::optional<AdditiveMask>>
      cache_;
};

}  // namespace attnprune
