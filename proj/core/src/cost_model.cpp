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

#include "attnprune/cost_model.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "attnprune/attention.hpp"
#include "attnprune/autograd.hpp"
#include "attnprune/error.hpp"

namespace attnprune {

namespace {
thread_local MacCounter* g_counter = nullptr;
}  // namespace

void CostParams::validate() const {
  if (heads * d_k != d_model) {
    throw ConfigError("cost params: heads * d_k must equal d_model");
  }
  if (!(prune_fraction >= 0.0 && prune_fraction <= 1.0)) {
    throw ConfigError("cost params: prune fraction must lie in [0, 1]");
  }
}

AttentionMacs attention_macs(const CostParams& params) {
  params.validate();
  const double B = static_cast<double>(params.batch);
  const double N = static_cast<double>(params.seq_len);
  const double d = static_cast<double>(params.d_model);
  const double h = static_cast<double>(params.heads);
  const double dk = static_cast<double>(params.d_k);
  AttentionMacs macs;
  macs.projections = 3.0 * B * N * d * d;
  macs.scores = B * h * N * N * dk;
  macs.weighted_values = (1.0 - params.prune_fraction) * B * h * N * N * dk;
  macs.output = B * N * d * d;
  return macs;
}

double mac_fraction(double d_model, double seq_len, double prune_fraction) {
  if (d_model < 1 || seq_len < 1) throw ConfigError("mac_fraction needs d, N >= 1");
  if (!(prune_fraction >= 0.0 && prune_fraction <= 1.0)) {
    throw ConfigError("mac_fraction: prune fraction must lie in [0, 1]");
  }
  return (4.0 * d_model + (2.0 - prune_fraction) * seq_len) /
         (4.0 * d_model + 2.0 * seq_len);
}

MacCounter* active_mac_counter() { return g_counter; }

MacCounter count_macs_instrumented(const std::function<void()>& forward) {
  MacCounter counter;
  MacCounter* previous = g_counter;
  g_counter = &counter;
  try {
    forward();
  } catch (...) {
    g_counter = previous;
    throw;
  }
  g_counter = previous;
  return counter;
}

MacCounter instrumented_attention_macs(const CostParams& params, std::uint64_t seed) {
  params.validate();
  const std::size_t N = params.seq_len, d = params.d_model, H = params.heads;
  const auto target = static_cast<std::size_t>(std::llround(params.prune_fraction * double(N * N)));
  if (target > N * N - N) {
    throw DomainError("instrumented count needs p N^2 <= N^2 - N so no row is fully pruned");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.1);
  auto random = [&](Shape s) {
    Tensor t(s);
    for (double& x : t.data()) x = gauss(rng);
    return t;
  };

  // Off-diagonal positions shuffled once per head.
  std::vector<AdditiveMask> masks;
  std::vector<std::size_t> cells;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      if (i != j) cells.push_back(i * N + j);
    }
  }
  for (std::size_t h = 0; h < H; ++h) {
    std::shuffle(cells.begin(), cells.end(), rng);
    AdditiveMask m(N, N);
    for (std::size_t k = 0; k < target; ++k) m.set_masked(cells[k] / N, cells[k] % N);
    masks.push_back(std::move(m));
  }

  Tape tape;
  MultiHeadParams mp{tape.constant(random({d, d})), tape.constant(Tensor({d})),
                     tape.constant(random({d, d})), tape.constant(Tensor({d})),
                     tape.constant(random({d, d})), tape.constant(Tensor({d})),
                     tape.constant(random({d, d})), tape.constant(Tensor({d}))};
  AttentionConfig cfg = AttentionConfig::make(d, H, Activation::kSoftmax);
  const Var x = tape.constant(random({params.batch, N, d}));
  MultiHeadCall call;
  call.x_q = x;
  call.x_kv = x;
  if (target > 0) {
    call.head_masks = [&](std::size_t h, std::size_t, std::size_t) { return &masks[h]; };
  }
  return count_macs_instrumented([&] { multi_head(call, mp, cfg); });
}

std::string cost_report_json(const std::vector<CostRow>& rows) {
  nlohmann::ordered_json doc;
  doc["units"] = {{"macs", "multiply-accumulate operations"},
                  {"prune_fraction", "fraction in [0,1]"}};
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const CostRow& row : rows) {
    nlohmann::ordered_json r;
    r["params"] = {{"batch", row.params.batch},         {"seq_len", row.params.seq_len},
                   {"d_model", row.params.d_model},     {"heads", row.params.heads},
                   {"d_k", row.params.d_k},             {"prune_fraction", row.params.prune_fraction}};
    r["macs"] = {{"projections", row.analytical.projections},
                 {"scores", row.analytical.scores},
                 {"weighted_values", row.analytical.weighted_values},
                 {"output", row.analytical.output},
                 {"total", row.analytical.total()}};
    r["fraction"] = row.fraction;
    if (row.instrumented) {
      const MacCounter& c = *row.instrumented;
      r["instrumented"] = {{"projections", c.projections},
                           {"scores", c.scores},
                           {"weighted_values", c.weighted_values},
                           {"output", c.output},
                           {"total", c.total()}};
    }
    list.push_back(std::move(r));
  }
  doc["rows"] = std::move(list);
  return doc.dump(2) + "\n";
}

}  // namespace attnprune
