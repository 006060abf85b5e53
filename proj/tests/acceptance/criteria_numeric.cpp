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

// Criteria 1-4: property suites that need no training.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "acceptance.hpp"
#include "attnprune/attention.hpp"
#include "attnprune/cost_model.hpp"
#include "attnprune/masks.hpp"
#include "attnprune/metrics.hpp"
#include "attnprune/train.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace attnprune::acceptance {

using testing::directional_check;
using testing::random_tensor;
using testing::weighted_sum;

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

namespace {

// Worst relative error over a set of named checks.
struct Worst {
  double err = 0.0;
  std::string name;
  void add(const std::string& n, double e) {
    if (!(e <= err)) {
      err = e;
      name = n;
    }
  }
};

// Random [rows, cols] logits whose entmax15 support boundary is at least
// `gap` away from every coordinate, so the map is smooth there.
Tensor smooth_entmax_input(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double gap) {
  for (;;) {
    Tensor z = random_tensor({rows, cols}, rng);
    bool ok = true;
    for (std::size_t r = 0; r < rows && ok; ++r) {
      std::span<const double> row(z.data().data() + r * cols, cols);
      std::vector<double> p(cols);
      entmax15_row(row, p);
      const std::size_t top = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
      const double tau = row[top] / 2 - std::sqrt(p[top]);
      for (double x : row) ok &= std::abs(x / 2 - tau) >= gap;
    }
    if (ok) return z;
  }
}

// Tiny LM with a p = 50 mask on its self-attention.
struct MaskedLm {
  Checkpoint ckpt;
  MaskSet masks;
  Batch batch;
};

MaskedLm make_masked_lm() {
  TransformerConfig c;
  c.arch = Architecture::kLmOnly;
  c.n_layers = 1;
  c.attention = AttentionConfig::make(8, 2);
  c.d_ff = 16;
  c.vocab_size = 12;
  c.max_tgt_len = 8;
  MaskedLm lm;
  lm.ckpt = init_params(c, 11);
  // Larger weights than the init so every path carries signal.
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& [name, t] : lm.ckpt.weights) {
    for (double& v : t.data()) v += u(rng);
  }
  Dataset d;
  d.kind = DatasetKind::kLmStream;
  std::uniform_int_distribution<int> tok(kNumReserved, 11);
  for (int i = 0; i < 120; ++i) d.stream.push_back(tok(rng));
  const AttentionStats stats = collect_stats(lm.ckpt, d, 4, 8);
  lm.masks = build_masks(average(stats), {50, {AttentionKind::kSelfDecoder}});
  // Two rows of different lengths so padding is exercised too.
  d.stream.resize(8 + 6);
  lm.batch = make_batches(d, 2, 8, 0, 0, false).front();
  return lm;
}

double lm_loss(const Checkpoint& ck, const MaskedLm& lm, Tape& tape, bool grad,
               std::vector<std::pair<std::string, Var>>* vars = nullptr) {
  const BoundModel model(tape, ck, grad);
  MaskSlicer slicer(&lm.masks);
  ForwardOptions opts;
  opts.masks = &slicer;
  const Var loss = cross_entropy(batch_logits(model, lm.batch, opts), lm.batch.targets, kPadId);
  if (vars) *vars = model.vars();
  if (grad) tape.backward(loss);
  return loss.value()[0];
}

// Directional derivative of the masked LM loss along random directions, one
// weight tensor at a time.
double masked_lm_gradient_error() {
  const MaskedLm lm = make_masked_lm();
  Tape tape;
  std::vector<std::pair<std::string, Var>> vars;
  lm_loss(lm.ckpt, lm, tape, true, &vars);
  double worst = 0.0;
  std::mt19937_64 rng(13);
  const double eps = 1e-5;
  for (std::size_t w = 0; w < vars.size(); ++w) {
    const Tensor g = tape.grad(vars[w].second);
    for (int dir = 0; dir < 2; ++dir) {
      const Tensor v = random_tensor(g.shape(), rng, -1, 1);
      double analytic = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) analytic += g[i] * v[i];
      Checkpoint up = lm.ckpt, down = lm.ckpt;
      for (std::size_t i = 0; i < g.size(); ++i) {
        up.weights[w].second[i] += eps * v[i];
        down.weights[w].second[i] -= eps * v[i];
      }
      Tape t1, t2;
      const double numeric = (lm_loss(up, lm, t1, false) - lm_loss(down, lm, t2, false)) / (2 * eps);
      // The key bias has an exactly zero gradient (softmax is shift invariant
      // along a row), so the relative error gets an absolute floor.
      worst = std::max(worst, std::abs(analytic - numeric) / std::max(1e-6, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace

Outcome gradient_suite() {
  const double cpu0 = thread_cpu_seconds();
  std::mt19937_64 rng(1);
  Worst worst;
  auto coord = [&](const std::string& name, const ScalarFn& f, const Tensor& x) {
    worst.add(name, finite_diff_check(f, x));
  };
  auto along = [&](const std::string& name, const ScalarFn& f, const Tensor& x) {
    for (std::uint64_t s = 0; s < 3; ++s) worst.add(name, directional_check(f, x, 100 + s));
  };
  auto away_from = [&](Shape shape, double kink) {
    Tensor t = random_tensor(std::move(shape), rng);
    for (double& v : t.data()) {
      if (std::abs(v - kink) < 1e-3) v = kink + 0.5;
    }
    return t;
  };

  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng);
  const Tensor c = random_tensor({3, 4}, rng), bt = random_tensor({5, 4}, rng);
  coord("matmul.a", [&](Var x) { return weighted_sum(matmul(x, x.tape->constant(b))); }, a);
  coord("matmul.b", [&](Var x) { return weighted_sum(matmul(x.tape->constant(a), x)); }, b);
  coord("matmul.batched", [&](Var x) { return weighted_sum(matmul(x, x.tape->constant(b))); },
        random_tensor({2, 3, 4}, rng));
  coord("matmul_nt", [&](Var x) { return weighted_sum(matmul_nt(x, x.tape->constant(bt))); }, a);
  coord("matmul_nt.b", [&](Var x) { return weighted_sum(matmul_nt(x.tape->constant(a), x)); }, bt);
  coord("add", [&](Var x) { return weighted_sum(add(x, x.tape->constant(c))); }, a);
  coord("add.broadcast", [&](Var x) { return weighted_sum(add(x.tape->constant(a), x)); },
        random_tensor({4}, rng));
  coord("sub", [&](Var x) { return weighted_sum(sub(x.tape->constant(c), x)); }, a);
  coord("mul", [&](Var x) { return weighted_sum(mul(x, x.tape->constant(c))); }, a);
  coord("mul.self", [&](Var x) { return weighted_sum(mul(x, x)); }, a);
  coord("scale", [&](Var x) { return weighted_sum(scale(x, -1.7)); }, a);
  coord("relu", [&](Var x) { return weighted_sum(relu(x)); }, away_from({3, 4}, 0.0));
  coord("exp", [&](Var x) { return weighted_sum(exp(x)); }, a);
  coord("log", [&](Var x) { return weighted_sum(log(x)); }, random_tensor({3, 4}, rng, 0.2, 2));
  coord("sqrt", [&](Var x) { return weighted_sum(sqrt(x)); }, random_tensor({3, 4}, rng, 0.2, 2));
  coord("max_scalar", [&](Var x) { return weighted_sum(max_scalar(x, 0.3)); }, away_from({3, 4}, 0.3));
  coord("add_constant", [&](Var x) { return weighted_sum(add_constant(x, c)); }, a);
  for (ReduceOp op : {ReduceOp::kSum, ReduceOp::kMean, ReduceOp::kMax}) {
    for (std::size_t axis : {0, 1}) {
      coord("reduce", [&](Var x) { return weighted_sum(reduce(op, x, axis)); }, a);
    }
  }
  coord("sum_all", [&](Var x) { return sum_all(x); }, a);
  coord("reshape", [&](Var x) { return weighted_sum(reshape(x, {2, 6})); }, a);
  coord("swap_middle_axes", [&](Var x) { return weighted_sum(swap_middle_axes(x)); },
        random_tensor({2, 3, 2, 2}, rng));
  const std::vector<int> ids = {2, 0, 2, 1, 2};
  coord("embedding", [&](Var x) { return weighted_sum(embedding_lookup(x, ids)); }, a);
  const Tensor gain = random_tensor({4}, rng), bias = random_tensor({4}, rng);
  along("layer_norm.x", [&](Var x) {
    return weighted_sum(layer_norm(x, x.tape->constant(gain), x.tape->constant(bias)));
  }, a);
  coord("layer_norm.gain", [&](Var g) {
    return weighted_sum(layer_norm(g.tape->constant(a), g, g.tape->constant(bias)));
  }, gain);
  coord("layer_norm.bias", [&](Var bb) {
    return weighted_sum(layer_norm(bb.tape->constant(a), bb.tape->constant(gain), bb));
  }, bias);
  const std::vector<int> targets = {3, 0, 1};
  along("cross_entropy", [&](Var x) { return cross_entropy(x, targets); }, a);
  along("cross_entropy.ignore", [&](Var x) { return cross_entropy(x, targets, 0); }, a);
  along("softmax_rows", [&](Var x) { return weighted_sum(softmax_rows(x)); }, random_tensor({4, 8}, rng));
  along("entmax15_rows", [&](Var x) { return weighted_sum(entmax15_rows(x)); },
        smooth_entmax_input(rng, 4, 8, 1e-3));
  for (int trial = 0; trial < 5; ++trial) {
    along("entmax15_row", [&](Var x) { return weighted_sum(entmax15_rows(x)); },
          smooth_entmax_input(rng, 1, 8, 1e-3));
  }

  AdditiveMask mask(3, 5);
  mask.set_masked(0, 2);
  mask.set_masked(1, 0);
  mask.set_masked(2, 4);
  const Tensor q = random_tensor({3, 4}, rng), k = random_tensor({5, 4}, rng), v = random_tensor({5, 4}, rng);
  for (Activation act : {Activation::kSoftmax, Activation::kEntmax15}) {
    const std::string tag = act == Activation::kSoftmax ? ".softmax" : ".entmax15";
    along("sdp.q" + tag, [&](Var x) {
      return weighted_sum(scaled_dot_product(x, x.tape->constant(k), x.tape->constant(v), &mask, act).output);
    }, q);
    along("sdp.k" + tag, [&](Var x) {
      return weighted_sum(scaled_dot_product(x.tape->constant(q), x, x.tape->constant(v), &mask, act).output);
    }, k);
    along("sdp.v" + tag, [&](Var x) {
      return weighted_sum(scaled_dot_product(x.tape->constant(q), x.tape->constant(k), x, &mask, act).output);
    }, v);
  }
  std::vector<Tensor> w;
  for (int i = 0; i < 4; ++i) {
    w.push_back(random_tensor({8, 8}, rng, -0.7, 0.7));
    w.push_back(random_tensor({8}, rng, -0.3, 0.3));
  }
  const AttentionConfig cfg = AttentionConfig::make(8, 2);
  along("multi_head", [&](Var x) {
    Tape& t = *x.tape;
    const MultiHeadParams p{t.constant(w[0]), t.constant(w[1]), t.constant(w[2]), t.constant(w[3]),
                            t.constant(w[4]), t.constant(w[5]), t.constant(w[6]), t.constant(w[7])};
    return weighted_sum(multi_head(x, x, {}, true, p, cfg));
  }, random_tensor({5, 8}, rng));
  const Tensor in = random_tensor({5, 8}, rng);
  along("multi_head.wq", [&](Var x) {
    Tape& t = *x.tape;
    const MultiHeadParams p{x, t.constant(w[1]), t.constant(w[2]), t.constant(w[3]),
                            t.constant(w[4]), t.constant(w[5]), t.constant(w[6]), t.constant(w[7])};
    return weighted_sum(multi_head(t.constant(in), t.constant(in), {}, false, p, cfg));
  }, w[0]);

  worst.add("masked_lm_loss", masked_lm_gradient_error());
  const double cpu = thread_cpu_seconds() - cpu0;
  return {worst.err < 1e-4 && cpu < 120.0,
          "max rel err " + fmt(worst.err, 3) + " (" + worst.name + "), cpu " + fmt(cpu, 3) + "s"};
}

Outcome normalization_suite() {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0, 4);
  double worst_sum = 0.0, worst_oracle = 0.0;
  for (int r = 0; r < 10000; ++r) {
    std::vector<double> z(1 + r % 32);
    for (double& x : z) x = g(rng);
    std::vector<double> s(z.size()), e(z.size());
    softmax_row(z, s);
    entmax15_row(z, e);
    double ss = 0, se = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (s[i] < 0 || e[i] < 0) worst_sum = 1.0;
      ss += s[i];
      se += e[i];
    }
    worst_sum = std::max({worst_sum, std::abs(ss - 1), std::abs(se - 1)});
    const auto ref = testing::entmax_bisect_oracle(z);
    for (std::size_t i = 0; i < z.size(); ++i) worst_oracle = std::max(worst_oracle, std::abs(e[i] - ref[i]));
  }

  double worst_masked = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 7, m = 2 + (trial / 7) % 9;
    AdditiveMask mask(n, m);
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t keep = rng() % m;
      for (std::size_t j = 0; j < m; ++j) {
        if (j != keep && coin(rng)) mask.set_masked(i, j);
      }
    }
    for (Activation act : {Activation::kSoftmax, Activation::kEntmax15}) {
      Tape t;
      const auto r = scaled_dot_product(t.constant(random_tensor({n, 4}, rng, -3, 3)),
                                        t.constant(random_tensor({m, 4}, rng, -3, 3)),
                                        t.constant(random_tensor({m, 4}, rng)), &mask, act);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          if (mask.masked(i, j)) worst_masked = std::max(worst_masked, r.weights.value().at({i, j}));
        }
      }
    }
  }

  std::vector<double> two(2), one(2);
  entmax15_row(std::vector<double>{2, 0}, two);
  entmax15_row(std::vector<double>{1, 0}, one);
  const bool two_ok = std::abs(two[0] - 1) <= 1e-6 && std::abs(two[1]) <= 1e-6;
  // Literal constants as stated; the closed form (4 +- sqrt 7) / 8 is also shown.
  const bool one_ok = std::abs(one[0] - 0.830735) <= 1e-6 && std::abs(one[1] - 0.169265) <= 1e-6;
  const double closed = std::max(std::abs(one[0] - (4 + std::sqrt(7.0)) / 8),
                                 std::abs(one[1] - (4 - std::sqrt(7.0)) / 8));
  const bool pass = worst_sum <= 1e-9 && worst_masked < 1e-8 && worst_oracle <= 1e-8 && two_ok && one_ok;
  std::ostringstream d;
  d << "row-sum err " << fmt(worst_sum, 3) << ", masked weight max " << fmt(worst_masked, 3)
    << ", oracle err " << fmt(worst_oracle, 3) << ", [2,0]->[" << fmt(two[0], 9) << ","
    << fmt(two[1], 9) << "], [1,0]->[" << fmt(one[0], 9) << "," << fmt(one[1], 9)
    << "] vs stated [0.830735,0.169265] (off by " << fmt(std::abs(one[0] - 0.830735), 3)
    << "; closed-form err " << fmt(closed, 3) << ")";
  return {pass, d.str()};
}

namespace {

HeadAverage dense_head(std::size_t rows, std::size_t cols, std::vector<double> mean) {
  HeadAverage h;
  h.rows = rows;
  h.cols = cols;
  h.mean = std::move(mean);
  h.visited.assign(h.mean.size(), 1);
  return h;
}

std::vector<std::uint8_t> candidates(const MaskSet& m) {
  std::vector<std::uint8_t> out;
  for (const auto& [key, h] : m.heads) {
    for (std::size_t e = 0; e < h.pruned.size(); ++e) {
      // Unvisited entries are pruned regardless of p; only visited ones compete.
      if (h.is_visited(e / h.cols, e % h.cols)) out.push_back(h.pruned[e] || h.rowkeep[e]);
    }
  }
  return out;
}

}  // namespace

Outcome mask_suite() {
  std::vector<std::string> problems;

  AverageAttention worked;
  worked.heads.emplace(HeadKey{AttentionKind::kSelfEncoder, 0, 0}, dense_head(2, 2, {0.5, 0.3, 0.05, 0.15}));
  worked.examples = 1;
  const MaskSet wm = build_masks(worked, {50, {AttentionKind::kSelfEncoder}});
  const HeadMask& wh = wm.heads.begin()->second;
  const bool worked_ok = wm.meta.thresholds.size() == 1 && wm.meta.thresholds[0].tau == 0.3 &&
                         wh.pruned == std::vector<std::uint8_t>{0, 0, 1, 0} &&
                         wh.rowkeep == std::vector<std::uint8_t>{0, 0, 0, 1} &&
                         mask_sparsity(wm).overall == 0.25;
  if (!worked_ok) problems.push_back("worked example differs");

  // Averages of the acceptance models at initialization, over their train
  // splits, for the (p, kinds) cells the trend criteria sweep.
  using Kinds = std::vector<AttentionKind>;
  const Kinds se = {AttentionKind::kSelfEncoder}, sd = {AttentionKind::kSelfDecoder},
              cross = {AttentionKind::kCross};
  const Kinds self = {AttentionKind::kSelfEncoder, AttentionKind::kSelfDecoder};
  const Kinds all = {AttentionKind::kSelfEncoder, AttentionKind::kSelfDecoder, AttentionKind::kCross};
  struct Grid {
    std::string name;
    std::string config;
    std::vector<double> ps;
    std::vector<Kinds> kind_sets;
  };
  const std::vector<Grid> grids = {
      {"copy", copy_config(), {0, 50, 80}, {self, all}},
      {"toy-translation", toy_config(), {80}, {se, cross, all}},
      {"char-lm", lm_config(), {0, 20, 50, 80, 90}, {sd}},
  };
  double lo = 1e9, hi = -1e9;
  std::string lo_at, hi_at;
  bool nested = true, deterministic = true;
  for (const Grid& grid : grids) {
    const ExperimentConfig cfg = parse_experiment_config(grid.config, ATTNPRUNE_TEST_DATA);
    const TaskData data = make_task_data(cfg);
    const TransformerConfig model = resolve_model(cfg, data);
    const AttentionStats stats = collect_stats(init_params(model, 0), data.train, 32, cfg.train.lm_context);
    const AverageAttention avg = average(stats);
    const AverageAttention avg2 = average(stats_from_json(stats_to_json(stats)));
    for (const Kinds& kinds : grid.kind_sets) {
      for (double p : grid.ps) {
        const MaskSet m = build_masks(avg, {p, kinds});
        const double s = 100.0 * mask_sparsity(m).overall;
        const std::string at = grid.name + " " + kinds_label(kinds) + " p=" + fmt(p);
        if (s - p < lo) {
          lo = s - p;
          lo_at = at;
        }
        if (s - p > hi) {
          hi = s - p;
          hi_at = at;
        }
        if (masks_to_json(m) != masks_to_json(build_masks(avg2, {p, kinds}))) deterministic = false;
      }
      std::vector<std::uint8_t> prev;
      for (int p = 0; p <= 100; p += 5) {
        const auto cand = candidates(build_masks(avg, {static_cast<double>(p), kinds}));
        for (std::size_t e = 0; e < prev.size(); ++e) nested &= !prev[e] || cand[e];
        prev = cand;
      }
    }
  }
  if (lo < -5 || hi > 1) problems.push_back("sparsity outside band");
  if (!nested) problems.push_back("candidate sets not nested");
  if (!deterministic) problems.push_back("masks not byte-deterministic");
  std::ostringstream d;
  d << "worked example " << (worked_ok ? "exact" : "WRONG") << ", achieved-p in [" << fmt(lo, 3)
    << " (" << lo_at << "), " << fmt(hi, 3) << " (" << hi_at << ")], nested "
    << (nested ? "yes" : "no") << ", deterministic " << (deterministic ? "yes" : "no");
  return {problems.empty(), d.str()};
}

Outcome cost_suite() {
  const double headline = mac_fraction(32, 64, 0.5);
  std::size_t grid = 0, mismatched = 0;
  bool ratio_ok = true;
  for (std::size_t B : {1, 2}) {
    for (std::size_t d : {16, 32, 64}) {
      for (std::size_t h : {1, 2, 4}) {
        for (std::size_t N : {8, 16, 32}) {
          for (double p : {0.0, 0.25, 0.5, 0.75}) {
            CostParams c;
            c.batch = B;
            c.seq_len = N;
            c.d_model = d;
            c.heads = h;
            c.d_k = d / h;
            c.prune_fraction = p;
            const AttentionMacs an = attention_macs(c);
            const MacCounter in = instrumented_attention_macs(c, grid);
            ++grid;
            if (an.projections != static_cast<double>(in.projections) ||
                an.scores != static_cast<double>(in.scores) ||
                an.weighted_values != static_cast<double>(in.weighted_values) ||
                an.output != static_cast<double>(in.output)) {
              ++mismatched;
            }
            CostParams c0 = c;
            c0.prune_fraction = 0;
            const double ratio = an.total() / attention_macs(c0).total();
            if (h * (d / h) == d) ratio_ok &= std::abs(ratio - mac_fraction(d, N, p)) <= 1e-15;
          }
        }
      }
    }
  }
  bool monotone = true;
  for (double d : {8.0, 32.0, 128.0}) {
    for (double N : {4.0, 64.0, 1024.0}) {
      for (int k = 1; k <= 20; ++k) monotone &= mac_fraction(d, N, k / 20.0) < mac_fraction(d, N, (k - 1) / 20.0);
    }
    for (double p : {0.1, 0.5, 1.0}) {
      double prev = 2;
      for (double N = 1; N <= 1 << 16; N *= 2) {
        const double f = mac_fraction(d, N, p);
        monotone &= f < prev;
        prev = f;
      }
    }
  }
  const bool pass = headline == 0.875 && mismatched == 0 && ratio_ok && monotone;
  return {pass, "mac_fraction(32,64,0.5)=" + fmt(headline, 17) + ", instrumented mismatches " +
                    std::to_string(mismatched) + "/" + std::to_string(grid) + ", ratio matches " +
                    (ratio_ok ? "yes" : "no") + ", monotone " + (monotone ? "yes" : "no")};
}

}  // namespace attnprune::acceptance
