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

// attnprune: command-line driver for the attention-pruning workflow.
//
//   attnprune train   --config cfg.json --out run/
//   attnprune collect --config cfg.json --checkpoint run/checkpoint.json
//   attnprune mask    --stats run/stats.json --p 50 --kinds self_encoder,self_decoder
//   attnprune retrain --config cfg.json --masks run/masks.json
//   attnprune sweep   --config cfg.json --jobs 2
//   attnprune cost    --d 32 --N 64 --p 0,0.5 --instrumented
//   attnprune inspect --stats run/stats.json --layer-average
//
// Exit codes: 0 success, 1 experiment failure, 2 usage or configuration error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "attnprune/checkpoint.hpp"
#include "attnprune/cost_model.hpp"
#include "attnprune/error.hpp"
#include "attnprune/experiment.hpp"
#include "attnprune/masks.hpp"
#include "attnprune/stats.hpp"
#include "attnprune/train.hpp"

namespace fs = std::filesystem;
using namespace attnprune;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("failed writing " + path.string());
}

ExperimentConfig load_config(const Globals& g) {
  if (g.config.empty()) throw ConfigError("--config is required for this command");
  if (!fs::exists(g.config)) throw ConfigError("config file not found: " + g.config);
  ExperimentConfig cfg = load_experiment_config(g.config);
  if (g.seed) cfg.seeds = {*g.seed};
  if (!g.out.empty()) cfg.output_dir = g.out;
  return cfg;
}

fs::path out_dir(const Globals& g, const ExperimentConfig* cfg) {
  fs::path dir = !g.out.empty() ? fs::path(g.out) : (cfg ? fs::path(cfg->output_dir) : fs::path("."));
  fs::create_directories(dir);
  return dir;
}

std::string num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

std::string run_metrics_json(const TrainResult& r, const EvalMetrics& test,
                             const std::string& extra_key = {}, const std::string& extra = {}) {
  nlohmann::ordered_json j;
  if (!extra_key.empty()) j[extra_key] = extra;
  j["test"] = nlohmann::ordered_json::parse(metrics_json(test));
  j["best_valid"] = nlohmann::ordered_json::parse(metrics_json(r.best_valid));
  j["best_step"] = r.best_step;
  j["steps"] = r.steps;
  j["diverged"] = r.diverged;
  j["stop_reason"] = r.stop_reason;
  j["checkpoint_hash"] = hex_hash(r.best.content_hash());
  return j.dump(2) + "\n";
}

void print_metrics(const char* label, const EvalMetrics& m, bool lm) {
  std::cout << label << ": loss " << num(m.loss);
  if (lm) {
    std::cout << "  perplexity " << num(m.perplexity);
  } else {
    std::cout << "  token_accuracy " << num(m.token_accuracy) << "  bleu " << num(m.bleu);
  }
  std::cout << "\n";
}

int cmd_train(const Globals& g) {
  const ExperimentConfig cfg = load_config(g);
  const fs::path dir = out_dir(g, &cfg);
  const TaskData data = make_task_data(cfg);
  const TransformerConfig model = resolve_model(cfg, data);
  const std::uint64_t seed = cfg.seeds.front();
  const ApOptions opts = ap_options(cfg, seed);
  const TrainResult r = train(init_params(model, seed), data, opts.train);
  const EvalMetrics test = evaluate(r.best, data.test, opts.eval);
  save_checkpoint(r.best, (dir / "checkpoint.json").string());
  write_file(dir / "train_log.csv", train_log_csv(r.log));
  write_file(dir / "metrics.json", run_metrics_json(r, test));
  print_metrics("test", test, model.arch == Architecture::kLmOnly);
  if (r.diverged) {
    std::cerr << "training diverged: " << r.stop_reason << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

Checkpoint load_matching_checkpoint(const std::string& path, const TransformerConfig& model) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!(ckpt.config == model)) {
    throw IncompatibleError("checkpoint " + path + " (" + std::string(to_string(ckpt.config.arch)) +
                            ") does not match the configured model");
  }
  return ckpt;
}

int cmd_collect(const Globals& g, const std::string& checkpoint) {
  const ExperimentConfig cfg = load_config(g);
  const fs::path dir = out_dir(g, &cfg);
  const TaskData data = make_task_data(cfg);
  const TransformerConfig model = resolve_model(cfg, data);
  const std::string path = checkpoint.empty() ? (dir / "checkpoint.json").string() : checkpoint;
  const Checkpoint ckpt = load_matching_checkpoint(path, model);
  const AttentionStats stats =
      collect_stats(ckpt, data.train, cfg.eval_batch, cfg.train.lm_context);
  save_stats(stats, (dir / "stats.json").string());
  std::cout << "examples_seen " << stats.examples_seen() << "\n";
  return kExitOk;
}

void print_sparsity(const MaskSet& masks) {
  const SparsityReport rep = mask_sparsity(masks);
  std::cout << "kind            layer  sparsity\n";
  for (const auto& [key, v] : rep.per_layer) {
    std::printf("%-15s %5zu  %.4f\n", std::string(to_string(key.first)).c_str(), key.second, v);
  }
  for (const auto& [k, v] : rep.per_kind) {
    std::printf("%-15s   all  %.4f\n", std::string(to_string(k)).c_str(), v);
  }
  std::printf("overall                %.4f\n", rep.overall);
}

int cmd_mask(const Globals& g, const std::string& stats_path, double p,
             const std::vector<std::string>& kind_names, std::optional<std::uint64_t> random_seed,
             const std::string& ood) {
  const fs::path dir = out_dir(g, nullptr);
  const AttentionStats stats = load_stats(stats_path);
  MaskSet masks;
  if (!ood.empty()) {
    masks = load_masks(ood);
    check_mask_compatibility(masks, stats.layout());
  } else {
    PruneSpec spec;
    spec.p = p;
    for (const auto& k : kind_names) spec.kinds.push_back(parse_kind(k));
    if (spec.kinds.empty()) {
      for (const auto& [key, h] : stats.heads()) {
        if (spec.kinds.empty() || spec.kinds.back() != key.kind) spec.kinds.push_back(key.kind);
      }
    }
    const AverageAttention avg = average(stats);
    masks = random_seed ? random_masks(avg, p, *random_seed, spec.kinds) : build_masks(avg, spec);
  }
  masks.meta.source_dataset = fs::path(stats_path).filename().string();
  save_masks(masks, (dir / "masks.json").string());
  print_sparsity(masks);
  return kExitOk;
}

int cmd_retrain(const Globals& g, const std::string& masks_path, const std::string& checkpoint) {
  const ExperimentConfig cfg = load_config(g);
  const fs::path dir = out_dir(g, &cfg);
  const TaskData data = make_task_data(cfg);
  const TransformerConfig model = resolve_model(cfg, data);
  const MaskSet masks = load_masks(masks_path);
  check_mask_compatibility(masks, head_layout(model));
  const std::uint64_t seed = cfg.seeds.front();
  const ApOptions opts = ap_options(cfg, seed);
  Checkpoint start;
  if (cfg.prune.retrain_mode == RetrainMode::kFresh) {
    start = init_params(model, seed);
  } else {
    start = load_matching_checkpoint(
        checkpoint.empty() ? (dir / "checkpoint.json").string() : checkpoint, model);
  }
  const TrainResult r = train(start, data, opts.train, &masks);
  EvalOptions eval = opts.eval;
  eval.masks = &masks;
  const EvalMetrics test = evaluate(r.best, data.test, eval);
  save_checkpoint(r.best, (dir / "pruned_checkpoint.json").string());
  write_file(dir / "pruned_log.csv", train_log_csv(r.log));
  write_file(dir / "pruned_metrics.json",
             run_metrics_json(r, test, "retrain_mode", std::string(to_string(cfg.prune.retrain_mode))));
  print_metrics("pruned test", test, model.arch == Architecture::kLmOnly);
  if (r.diverged) {
    std::cerr << "training diverged: " << r.stop_reason << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_sweep(const Globals& g) {
  const ExperimentConfig cfg = load_config(g);
  const fs::path dir = out_dir(g, &cfg);
  const SweepReport report =
      run_sweep(cfg, g.jobs, [](const std::string& msg) { std::cerr << msg << "\n"; });
  write_file(dir / "report.json", sweep_report_json(report));
  write_file(dir / "report.csv", sweep_report_csv(report));
  write_file(dir / "report_timing.json", sweep_timing_json(report));
  std::cout << sweep_report_csv(report);
  if (!report.all_ok()) {
    for (const auto& c : report.cells) {
      if (!c.ok) std::cerr << "seed " << c.seed << " p " << c.p << " failed: " << c.error << "\n";
    }
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_cost(const Globals& g, const std::vector<std::size_t>& ds, const std::vector<std::size_t>& ns,
             const std::vector<double>& ps, std::size_t batch, std::size_t heads, bool instrumented,
             const std::string& json_path) {
  std::vector<CostRow> rows;
  for (std::size_t d : ds) {
    for (std::size_t n : ns) {
      for (double p : ps) {
        CostRow row;
        row.params = CostParams{batch, n, d, heads, heads ? d / heads : 0, p};
        row.params.validate();
        row.analytical = attention_macs(row.params);
        row.fraction = mac_fraction(double(d), double(n), p);
        if (instrumented) row.instrumented = instrumented_attention_macs(row.params, g.seed.value_or(0));
        rows.push_back(row);
      }
    }
  }
  std::printf("%6s %6s %6s %10s %16s%s\n", "d", "N", "p", "fraction", "analytical",
              instrumented ? "     instrumented" : "");
  for (const auto& r : rows) {
    std::printf("%6zu %6zu %6.3f %10.6f %16.0f", r.params.d_model, r.params.seq_len,
                r.params.prune_fraction, r.fraction, r.analytical.total());
    if (r.instrumented) std::printf(" %16llu", static_cast<unsigned long long>(r.instrumented->total()));
    std::printf("\n");
  }
  std::string path = json_path;
  if (path.empty() && !g.out.empty()) path = (out_dir(g, nullptr) / "cost.json").string();
  if (!path.empty()) write_file(path, cost_report_json(rows));
  return kExitOk;
}

void write_matrix(const fs::path& path, std::size_t rows, std::size_t cols,
                  const std::function<double(std::size_t, std::size_t)>& at) {
  std::ostringstream out;
  out.precision(10);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out << (j ? "," : "") << at(i, j);
    out << "\n";
  }
  write_file(path, out.str());
}

std::string head_file(const HeadKey& k) {
  return std::string(to_string(k.kind)) + "_l" + std::to_string(k.layer) + "_h" +
         std::to_string(k.head) + ".csv";
}

std::string layer_file(AttentionKind kind, std::size_t layer) {
  return std::string(to_string(kind)) + "_l" + std::to_string(layer) + "_avg.csv";
}

// Unvisited mean-attention entries are written as 0.
int cmd_inspect(const Globals& g, const std::string& stats_path, const std::string& masks_path,
                bool layer_average) {
  if (stats_path.empty() == masks_path.empty()) {
    throw ConfigError("inspect needs exactly one of --stats or --masks");
  }
  const fs::path dir = out_dir(g, nullptr);
  // (kind, layer) -> head matrices as dense row-major values.
  std::map<std::pair<AttentionKind, std::size_t>, std::vector<std::pair<HeadKey, std::vector<double>>>> groups;
  std::map<std::pair<AttentionKind, std::size_t>, std::pair<std::size_t, std::size_t>> dims;
  if (!stats_path.empty()) {
    const AverageAttention avg = average(load_stats(stats_path));
    for (const auto& [key, h] : avg.heads) {
      std::vector<double> v(h.rows * h.cols, 0.0);
      for (std::size_t i = 0; i < h.rows; ++i) {
        for (std::size_t j = 0; j < h.cols; ++j) v[i * h.cols + j] = h.is_visited(i, j) ? h.at(i, j) : 0.0;
      }
      groups[{key.kind, key.layer}].emplace_back(key, std::move(v));
      dims[{key.kind, key.layer}] = {h.rows, h.cols};
    }
  } else {
    const MaskSet masks = load_masks(masks_path);
    for (const auto& [key, h] : masks.heads) {
      std::vector<double> v(h.rows * h.cols);
      for (std::size_t i = 0; i < h.rows * h.cols; ++i) v[i] = h.pruned[i] ? 1.0 : 0.0;
      groups[{key.kind, key.layer}].emplace_back(key, std::move(v));
      dims[{key.kind, key.layer}] = {h.rows, h.cols};
    }
  }
  for (const auto& [group, heads] : groups) {
    const auto [rows, cols] = dims[group];
    for (const auto& [key, v] : heads) {
      write_matrix(dir / head_file(key), rows, cols, [&](std::size_t i, std::size_t j) { return v[i * cols + j]; });
      std::cout << (dir / head_file(key)).string() << " " << rows << "x" << cols << "\n";
    }
    if (layer_average) {
      const fs::path path = dir / layer_file(group.first, group.second);
      write_matrix(path, rows, cols, [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (const auto& [key, v] : heads) s += v[i * cols + j];
        return s / static_cast<double>(heads.size());
      });
      std::cout << path.string() << " " << rows << "x" << cols << "\n";
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attnprune: attention-pattern pruning experiments"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config, "experiment config (JSON)");
  app.add_option("--out", g.out, "output directory (overrides the config)");
  auto* seed_opt = app.add_option("--seed", seed_value, "use this single seed");
  app.add_option("--jobs", g.jobs, "parallel workers for sweep")->check(CLI::PositiveNumber);
  app.fallthrough();

  auto* train_cmd = app.add_subcommand("train", "train the baseline model");
  auto* collect_cmd = app.add_subcommand("collect", "collect attention statistics over the train split");
  std::string checkpoint;
  collect_cmd->add_option("--checkpoint", checkpoint, "checkpoint (default OUT/checkpoint.json)");

  auto* mask_cmd = app.add_subcommand("mask", "build a prune mask from statistics");
  std::string stats_path, ood_path;
  double p = 0.0;
  std::vector<std::string> kinds;
  std::uint64_t random_seed = 0;
  mask_cmd->add_option("--stats", stats_path, "statistics file")->required();
  mask_cmd->add_option("--p", p, "percentage of entries to prune")->check(CLI::Range(0.0, 100.0));
  mask_cmd->add_option("--kinds", kinds, "attention kinds to prune")->delimiter(',');
  auto* random_opt = mask_cmd->add_option("--random", random_seed, "random baseline with this seed");
  auto* ood_opt = mask_cmd->add_option("--ood", ood_path, "reuse an existing mask file");
  random_opt->excludes(ood_opt);

  auto* retrain_cmd = app.add_subcommand("retrain", "train under a prune mask");
  std::string masks_path;
  retrain_cmd->add_option("--masks", masks_path, "mask file")->required();
  retrain_cmd->add_option("--checkpoint", checkpoint, "trained checkpoint for finetune mode");

  auto* sweep_cmd = app.add_subcommand("sweep", "run every (seed, p, kinds) cell of a config");

  auto* cost_cmd = app.add_subcommand("cost", "analytical attention MAC table");
  std::vector<std::size_t> ds{32}, ns{64};
  std::vector<double> ps{0.0, 0.5};
  std::size_t batch = 1, heads = 1;
  bool instrumented = false;
  std::string json_path;
  cost_cmd->add_option("--d", ds, "model widths")->delimiter(',');
  cost_cmd->add_option("--N", ns, "sequence lengths")->delimiter(',');
  cost_cmd->add_option("--p", ps, "pruned fractions in [0,1]")->delimiter(',')->check(CLI::Range(0.0, 1.0));
  cost_cmd->add_option("--batch", batch, "batch size");
  cost_cmd->add_option("--heads", heads, "attention heads");
  cost_cmd->add_flag("--instrumented", instrumented, "also count MACs of a real forward");
  cost_cmd->add_option("--json", json_path, "write the table as JSON");

  auto* inspect_cmd = app.add_subcommand("inspect", "write attention or mask matrices as CSV");
  std::string inspect_stats, inspect_masks;
  bool layer_average = false;
  inspect_cmd->add_option("--stats", inspect_stats, "statistics file");
  inspect_cmd->add_option("--masks", inspect_masks, "mask file");
  inspect_cmd->add_flag("--layer-average", layer_average, "also write per-layer head averages");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (train_cmd->parsed()) return cmd_train(g);
    if (collect_cmd->parsed()) return cmd_collect(g, checkpoint);
    if (mask_cmd->parsed()) {
      return cmd_mask(g, stats_path, p, kinds,
                      random_opt->count() ? std::optional<std::uint64_t>(random_seed) : std::nullopt,
                      ood_path);
    }
    if (retrain_cmd->parsed()) return cmd_retrain(g, masks_path, checkpoint);
    if (sweep_cmd->parsed()) return cmd_sweep(g);
    if (cost_cmd->parsed()) return cmd_cost(g, ds, ns, ps, batch, heads, instrumented, json_path);
    if (inspect_cmd->parsed()) return cmd_inspect(g, inspect_stats, inspect_masks, layer_average);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
