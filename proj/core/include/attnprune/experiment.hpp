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
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "attnprune/data.hpp"
#include "attnprune/model.hpp"
#include "attnprune/optim.hpp"
#include "attnprune/train.hpp"

namespace attnprune {

struct TaskSpec {
  std::string name = "copy";  // copy | reverse | toy-translation | char-lm
  std::size_t count = 2000;
  std::size_t len_min = 3;
  std::size_t len_max = 10;
  std::size_t alphabet = 10;
  std::uint64_t seed = 0;
  std::string corpus;  // char-lm; relative paths resolve against the config file
  std::size_t max_chars = 0;
};

struct PruneSection {
  std::vector<double> p = {0.0};
  std::vector<std::vector<AttentionKind>> kind_sets;
  RetrainMode retrain_mode = RetrainMode::kFresh;
  std::string baseline = "none";  // none | random | ood:PATH
  std::uint64_t mask_seed = 0;

  MaskSource source() const;
};

struct ExperimentConfig {
  TaskSpec task;
  TransformerConfig model;  // vocab_size and max lengths of 0 are derived from the data
  TrainConfig train;
  PruneSection prune;
  std::vector<std::uint64_t> seeds = {0};
  std::string output_dir = "out";
  std::string metric;   // empty = task default
  std::string base_dir;  // directory of the config file
  std::size_t eval_batch = 64;
};

// Parses and validates a JSON document. Errors are ConfigError naming the
// offending field path, e.g. "config.train.lr".
ExperimentConfig parse_experiment_config(const std::string& text, const std::string& base_dir = ".");
// Reads a file; ATTNPRUNE_OUTPUT_DIR, when set, overrides output_dir.
ExperimentConfig load_experiment_config(const std::string& path);
std::string experiment_config_json(const ExperimentConfig& cfg);

TaskData make_task_data(const ExperimentConfig& cfg);
// Fills data-derived model fields (vocab size, maximum lengths, activation).
TransformerConfig resolve_model(const ExperimentConfig& cfg, const TaskData& data);
ApOptions ap_options(const ExperimentConfig& cfg, std::uint64_t seed);

// Task default: token_accuracy for copy/reverse, bleu for toy-translation,
// perplexity for char-lm.
std::string primary_metric(const ExperimentConfig& cfg);
double metric_value(const EvalMetrics& m, const std::string& metric);

struct SweepCell {
  std::uint64_t seed = 0;
  double p = 0.0;
  std::vector<AttentionKind> kinds;
  bool ok = false;
  std::string error;
  EvalMetrics baseline;
  EvalMetrics pruned;
  double sparsity = 0.0;
  std::map<AttentionKind, double> sparsity_per_kind;
  std::vector<LayerThreshold> thresholds;
  double mac_fraction = 1.0;
  std::size_t mac_length = 0;
  std::string baseline_hash;
  std::string stats_hash;
  double wall_ms = 0.0;
};

struct SweepReport {
  ExperimentConfig config;
  std::string metric;
  std::vector<SweepCell> cells;  // seed-major, then kind set, then p
  std::vector<std::pair<std::uint64_t, double>> baseline_wall_ms;

  bool all_ok() const;
};

using ProgressFn = std::function<void(const std::string&)>;

// Runs steps 1-4 for every (seed, kind set, p). Seeds run on up to `jobs`
// threads; a failing cell is recorded and the rest continue.
SweepReport run_sweep(const ExperimentConfig& cfg, std::size_t jobs = 1,
                      const ProgressFn& progress = {});

// Report document without wall times; byte-stable for a fixed config.
std::string sweep_report_json(const SweepReport& report);
// Columns seed, p, kinds, metric_baseline, metric_pruned, sparsity,
// mac_fraction, then every other per-cell number of the JSON report.
std::string sweep_report_csv(const SweepReport& report);
std::string sweep_timing_json(const SweepReport& report);

std::string metrics_json(const EvalMetrics& m);
std::string kinds_label(const std::vector<AttentionKind>& kinds);
std::string hex_hash(std::uint64_t h);

}  // namespace attnprune
