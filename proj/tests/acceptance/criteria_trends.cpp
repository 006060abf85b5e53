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

// Criteria 5-10: desk-scale training runs. Baselines are trained once per
// (config, seed) and shared between criteria.
#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "acceptance.hpp"
#include "attnprune/masks.hpp"

namespace attnprune::acceptance {

namespace {

constexpr std::uint64_t kSeeds[] = {0, 1, 2};

const std::vector<AttentionKind> kSelfKinds = {AttentionKind::kSelfEncoder, AttentionKind::kSelfDecoder};
const std::vector<AttentionKind> kAllKinds = {AttentionKind::kSelfEncoder, AttentionKind::kSelfDecoder,
                                              AttentionKind::kCross};

std::string pct(double fraction) { return fmt(100.0 * fraction, 4) + "%"; }

// Fraction of visited average-attention entries below `eps`.
double near_zero_fraction(const AttentionStats& stats, double eps) {
  std::size_t small = 0, total = 0;
  for (const auto& [key, h] : average(stats).heads) {
    for (std::size_t e = 0; e < h.mean.size(); ++e) {
      if (!h.visited[e]) continue;
      ++total;
      small += h.mean[e] < eps;
    }
  }
  return total ? static_cast<double>(small) / static_cast<double>(total) : 0.0;
}

}  // namespace

std::string copy_config(const std::string& activation) {
  return R"({"task": "copy",
    "data": {"count": 3000, "len_min": 3, "len_max": 10, "alphabet": 10, "seed": 0},
    "model": {"n_layers": 2, "d_model": 64, "n_heads": 4, "d_ff": 128},
    "activation": ")" + activation + R"(",
    "train": {"lr": 0.002, "batch_size": 32, "max_steps": 1500, "warmup": 50,
              "eval_every": 250, "eval_examples": 200}})";
}

std::string toy_config() {
  return R"({"task": "toy-translation",
    "data": {"count": 3000, "seed": 0},
    "model": {"n_layers": 2, "d_model": 64, "n_heads": 4, "d_ff": 128},
    "train": {"lr": 0.002, "batch_size": 32, "max_steps": 1500, "warmup": 50,
              "eval_every": 250, "eval_examples": 200}})";
}

std::string lm_config() {
  return R"({"task": "char-lm",
    "data": {"corpus": "licenses.txt", "max_chars": 60000},
    "model": {"n_layers": 2, "d_model": 64, "n_heads": 4, "d_ff": 128},
    "train": {"lr": 0.003, "batch_size": 16, "max_steps": 2800, "warmup": 400,
              "eval_every": 400, "lm_context": 64}})";
}

const Workbench::Run& Workbench::baseline(const std::string& config_json, std::uint64_t seed) {
  auto& slot = runs_[{config_json, seed}];
  if (slot) return *slot;
  auto run = std::make_unique<Run>();
  run->config = parse_experiment_config(config_json, ATTNPRUNE_TEST_DATA);
  auto& data = data_[config_json];
  if (!data) data = std::make_shared<const TaskData>(make_task_data(run->config));
  run->data = data;
  run->model = resolve_model(run->config, *data);
  run->opts = ap_options(run->config, seed);
  const double cpu0 = thread_cpu_seconds();
  run->base = ap_baseline(run->model, seed, *data, run->opts);
  run->cpu_seconds = thread_cpu_seconds() - cpu0;
  log_ << "    baseline " << run->config.task.name << " seed " << seed << ": loss "
       << fmt(run->base.test.loss) << ", acc " << pct(run->base.test.token_accuracy) << ", bleu "
       << fmt(run->base.test.bleu) << ", " << fmt(run->cpu_seconds, 3) << " cpu-s" << std::endl;
  slot = std::move(run);
  return *slot;
}

ApCell Workbench::prune(const Run& run, double p, std::vector<AttentionKind> kinds, MaskSource source,
                        std::uint64_t mask_seed) {
  const double cpu0 = thread_cpu_seconds();
  ApCell cell = ap_prune(run.base, *run.data, PruneSpec{p, std::move(kinds)}, RetrainMode::kFresh,
                         run.opts, source, mask_seed);
  log_ << "    " << run.config.task.name << " p=" << fmt(p) << " " << kinds_label(cell.spec.kinds)
       << (source == MaskSource::kRandom ? " random" : "") << ": loss " << fmt(cell.test.loss)
       << ", acc " << pct(cell.test.token_accuracy) << ", bleu " << fmt(cell.test.bleu)
       << ", sparsity " << fmt(cell.sparsity.overall) << ", " << fmt(thread_cpu_seconds() - cpu0, 3)
       << " cpu-s" << std::endl;
  return cell;
}

Outcome copy_trend(Workbench& wb) {
  std::vector<double> base, p50, p80, cpu;
  for (std::uint64_t seed : kSeeds) {
    const auto& run = wb.baseline(copy_config(), seed);
    base.push_back(run.base.test.token_accuracy);
    cpu.push_back(run.cpu_seconds);
    p50.push_back(wb.prune(run, 50, kSelfKinds).test.token_accuracy);
    p80.push_back(wb.prune(run, 80, kSelfKinds).test.token_accuracy);
  }
  const double worst_cpu = *std::max_element(cpu.begin(), cpu.end());
  const double min_base = *std::min_element(base.begin(), base.end());
  const bool pass = min_base >= 0.99 && worst_cpu <= 600 && median(p50) >= 0.95 && median(p80) >= 0.90;
  return {pass, "baseline min " + pct(min_base) + " in <= " + fmt(worst_cpu, 3) + " cpu-s, p=50 median " +
                    pct(median(p50)) + ", p=80 median " + pct(median(p80))};
}

Outcome cross_vs_self(Workbench& wb) {
  std::vector<double> cross, self;
  for (std::uint64_t seed : kSeeds) {
    const auto& run = wb.baseline(toy_config(), seed);
    cross.push_back(wb.prune(run, 80, {AttentionKind::kCross}).test.bleu);
    self.push_back(wb.prune(run, 80, {AttentionKind::kSelfEncoder}).test.bleu);
  }
  const double gap = median(self) - median(cross);
  return {gap >= 5, "median BLEU cross-only " + fmt(median(cross)) + ", self-encoder-only " +
                        fmt(median(self)) + ", gap " + fmt(gap, 3) + " (need >= 5)"};
}

Outcome ap_vs_random(Workbench& wb) {
  std::vector<double> ap, random;
  for (std::uint64_t seed : kSeeds) {
    const auto& run = wb.baseline(toy_config(), seed);
    ap.push_back(wb.prune(run, 80, kAllKinds).test.token_accuracy);
    random.push_back(wb.prune(run, 80, kAllKinds, MaskSource::kRandom, run.config.prune.mask_seed + seed)
                         .test.token_accuracy);
  }
  const double gap = 100.0 * (median(ap) - median(random));
  return {gap >= 2, "median acc AP " + pct(median(ap)) + ", random " + pct(median(random)) + ", gap " +
                        fmt(gap, 3) + " points (need >= 2)"};
}

Outcome lm_trend(Workbench& wb) {
  const std::vector<double> ps = {0, 20, 50, 80, 90};
  std::vector<std::vector<double>> ppl(ps.size());
  double cpu = 0.0;
  for (std::uint64_t seed : kSeeds) {
    const auto& run = wb.baseline(lm_config(), seed);
    cpu += run.cpu_seconds;
    ppl[0].push_back(run.base.test.perplexity);
    for (std::size_t i = 1; i < ps.size(); ++i) {
      const double cpu0 = thread_cpu_seconds();
      ppl[i].push_back(wb.prune(run, ps[i], {AttentionKind::kSelfDecoder}).test.perplexity);
      cpu += thread_cpu_seconds() - cpu0;
    }
  }
  std::vector<double> med;
  for (const auto& v : ppl) med.push_back(median(v));
  bool monotone = true;
  for (std::size_t i = 1; i < med.size(); ++i) monotone &= med[i] >= med[i - 1] * (1 - 0.02);
  const double rel80 = med[3] / med[0] - 1;
  std::ostringstream d;
  d << "median ppl";
  for (std::size_t i = 0; i < ps.size(); ++i) d << " p" << ps[i] << "=" << fmt(med[i]);
  d << ", p80 " << (rel80 >= 0 ? "+" : "") << pct(rel80) << ", monotone " << (monotone ? "yes" : "no") << ", " << fmt(cpu / 60, 3)
    << " cpu-min";
  return {rel80 <= 0.15 && monotone && cpu < 3600, d.str()};
}

Outcome zero_prune_noop(Workbench& wb) {
  const auto& run = wb.baseline(copy_config(), 0);
  const ApCell cell = wb.prune(run, 0, kAllKinds);
  const EvalMetrics& a = run.base.test;
  const EvalMetrics& b = cell.test;
  const double diff = std::max({std::abs(a.loss - b.loss), std::abs(a.token_accuracy - b.token_accuracy),
                                std::abs(a.bleu - b.bleu), std::abs(a.perplexity - b.perplexity)});
  bool empty = cell.sparsity.pruned_visited == 0;
  for (const auto& [key, h] : cell.masks.heads) {
    empty &= std::none_of(h.pruned.begin(), h.pruned.end(), [](auto v) { return v != 0; });
    empty &= std::none_of(h.rowkeep.begin(), h.rowkeep.end(), [](auto v) { return v != 0; });
  }
  return {diff <= 1e-9 && empty, "max metric diff " + fmt(diff, 3) + ", mask empty " + (empty ? "yes" : "no")};
}

Outcome entmax_interaction(Workbench& wb) {
  std::vector<double> p50;
  bool sparser = true;
  std::ostringstream fr;
  for (std::uint64_t seed : kSeeds) {
    const auto& ent = wb.baseline(copy_config("entmax15"), seed);
    const auto& soft = wb.baseline(copy_config(), seed);
    p50.push_back(wb.prune(ent, 50, kSelfKinds).test.token_accuracy);
    const double fe = near_zero_fraction(ent.base.stats, 1e-6);
    const double fs = near_zero_fraction(soft.base.stats, 1e-6);
    sparser &= fe > fs;
    fr << " seed" << seed << " " << pct(fe) << " vs " << pct(fs);
  }
  return {median(p50) >= 0.95 && sparser,
          "entmax p=50 median " + pct(median(p50)) + ", near-zero entries entmax vs softmax:" + fr.str()};
}

}  // namespace attnprune::acceptance
