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

// Shared plumbing for the acceptance harness.
#pragma once

#include <ctime>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "attnprune/experiment.hpp"

namespace attnprune::acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// CPU seconds consumed by the calling thread.
inline double thread_cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

double median(std::vector<double> v);
std::string fmt(double v, int digits = 4);

Outcome gradient_suite();
Outcome normalization_suite();
Outcome mask_suite();
Outcome cost_suite();

// Trained baselines are shared between criteria, keyed by (config, seed).
class Workbench {
 public:
  struct Run {
    ExperimentConfig config;
    std::shared_ptr<const TaskData> data;
    TransformerConfig model;
    ApOptions opts;
    ApBaseline base;
    double cpu_seconds = 0.0;
  };

  explicit Workbench(std::ostream& log) : log_(log) {}

  const Run& baseline(const std::string& config_json, std::uint64_t seed);
  ApCell prune(const Run& run, double p, std::vector<AttentionKind> kinds,
               MaskSource source = MaskSource::kAp, std::uint64_t mask_seed = 0);
  std::ostream& log() { return log_; }

 private:
  std::ostream& log_;
  std::map<std::string, std::shared_ptr<const TaskData>> data_;
  std::map<std::pair<std::string, std::uint64_t>, std::unique_ptr<Run>> runs_;
};

std::string copy_config(const std::string& activation = "softmax");
std::string toy_config();
std::string lm_config();

Outcome copy_trend(Workbench& wb);
Outcome cross_vs_self(Workbench& wb);
Outcome ap_vs_random(Workbench& wb);
Outcome lm_trend(Workbench& wb);
Outcome zero_prune_noop(Workbench& wb);
Outcome entmax_interaction(Workbench& wb);

}  // namespace attnprune::acceptance
