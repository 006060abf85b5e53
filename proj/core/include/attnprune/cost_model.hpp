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
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace attnprune {

// Shapes for one attention layer. prune_fraction is a fraction in [0, 1],
// not a percentage.
struct CostParams {
  std::size_t batch = 1;
  std::size_t seq_len = 1;
  std::size_t d_model = 1;
  std::size_t heads = 1;
  std::size_t d_k = 1;
  double prune_fraction = 0.0;

  void validate() const;
};

// Analytical multiply-accumulate counts of one attention layer, by stage:
// Q/K/V projections, scores Q K^T, weights x V, and output projection.
struct AttentionMacs {
  double projections = 0.0;
  double scores = 0.0;
  double weighted_values = 0.0;
  double output = 0.0;

  double total() const { return projections + scores + weighted_values + output; }
};

AttentionMacs attention_macs(const CostParams& params);

// (4d + (2 - p) N) / (4d + 2N)
double mac_fraction(double d_model, double seq_len, double prune_fraction);

// Tally filled in by the attention kernels while a counting run is active.
struct MacCounter {
  std::uint64_t projections = 0;
  std::uint64_t scores = 0;
  std::uint64_t weighted_values = 0;
  std::uint64_t output = 0;

  std::uint64_t total() const { return projections + scores + weighted_values + output; }
};

// Counter of the enclosing count_macs_instrumented call on this thread.
MacCounter* active_mac_counter();

// Runs `forward` with counting enabled. Numerical results of the forward are
// unaffected; masked score entries are skipped in the weights x V tally.
MacCounter count_macs_instrumented(const std::function<void()>& forward);

// Counts one self-attention layer of `params` shape with random weights and,
// per head, round(p N^2) off-diagonal score entries masked at random positions.
// Needs p N^2 <= N^2 - N so every row keeps its diagonal.
MacCounter instrumented_attention_macs(const CostParams& params, std::uint64_t seed = 0);

struct CostRow {
  CostParams params;
  AttentionMacs analytical;
  double fraction = 1.0;
  std::optional<MacCounter> instrumented;
};

// Cost report document: per-row params, per-stage MACs, totals and fraction.
std::string cost_report_json(const std::vector<CostRow>& rows);

}  // namespace attnprune
