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

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "attnprune/error.hpp"
#include "attnprune/experiment.hpp"

using namespace attnprune;
using nlohmann::json;

namespace {

const char* kTiny = R"({
  "task": "copy",
  "data": {"count": 120, "len_min": 3, "len_max": 5, "alphabet": 5},
  "model": {"n_layers": 1, "d_model": 16, "n_heads": 2, "d_ff": 32},
  "train": {"lr": 0.003, "batch_size": 16, "max_steps": 12, "eval_every": 6},
  "prune": {"p": [0, 50], "kinds": ["self_encoder", "cross"]},
  "seeds": [0, 1]
})";

std::string message_of(const std::string& text) {
  try {
    parse_experiment_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

void collect_numbers(const json& j, std::vector<double>& out) {
  if (j.is_number()) {
    out.push_back(j.get<double>());
  } else if (j.is_structured()) {
    for (const auto& v : j) collect_numbers(v, out);
  }
}

}  // namespace

TEST_CASE("config parsing and defaults") {
  const ExperimentConfig c = parse_experiment_config(kTiny);
  CHECK(c.task.name == "copy");
  CHECK(c.task.count == 120);
  CHECK(c.model.attention.d_model == 16);
  CHECK(c.train.max_steps == 12);
  CHECK(c.prune.p == std::vector<double>{0, 50});
  REQUIRE(c.prune.kind_sets.size() == 1);
  CHECK(c.prune.kind_sets[0].size() == 2);
  CHECK(c.seeds == std::vector<std::uint64_t>{0, 1});
  CHECK(primary_metric(c) == "token_accuracy");
  CHECK(c.prune.source() == MaskSource::kAp);

  const ExperimentConfig lm = parse_experiment_config(R"({"task": "char-lm", "data": {"corpus": "x.txt"}})", "/tmp");
  REQUIRE(lm.prune.kind_sets.size() == 1);
  CHECK(lm.prune.kind_sets[0] == std::vector<AttentionKind>{AttentionKind::kSelfDecoder});
  CHECK(primary_metric(lm) == "perplexity");
  CHECK(lm.model.arch == Architecture::kLmOnly);
  const ExperimentConfig toy = parse_experiment_config(R"({"task": "toy-translation", "prune": {"kinds": [["cross"], ["self_encoder"]]}})");
  CHECK(toy.prune.kind_sets.size() == 2);
  CHECK(primary_metric(toy) == "bleu");
}

TEST_CASE("config errors name the offending field") {
  CHECK(message_of(R"({"task": "copy", "train": {"lr": -1}})").find("config.train.lr") != std::string::npos);
  CHECK(message_of(R"({"task": "copy", "train": {"learning_rate": 1}})").find("config.train.learning_rate") != std::string::npos);
  CHECK(message_of(R"({"task": "nope"})").find("config.task") != std::string::npos);
  CHECK(message_of(R"({"task": "copy", "prune": {"p": [120]}})").find("config.prune.p") != std::string::npos);
  CHECK(message_of(R"({"task": "copy", "model": {"d_model": 10, "n_heads": 3}})").find("config.model.n_heads") != std::string::npos);
  CHECK(message_of(R"({"task": "char-lm"})").find("config.data.corpus") != std::string::npos);
  CHECK(message_of("{not json").find("JSON") != std::string::npos);
  CHECK(message_of(R"({"task": "copy", "prune": {"baseline": "maybe"}})").find("config.prune.baseline") != std::string::npos);
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("config json round trip") {
  const ExperimentConfig c = parse_experiment_config(kTiny);
  const ExperimentConfig back = parse_experiment_config(experiment_config_json(c));
  CHECK(experiment_config_json(back) == experiment_config_json(c));
}

TEST_CASE("model resolution from data") {
  const ExperimentConfig c = parse_experiment_config(kTiny);
  const TaskData data = make_task_data(c);
  const TransformerConfig m = resolve_model(c, data);
  CHECK(m.vocab_size == data.vocab.size());
  CHECK(m.max_src_len >= 5);
  CHECK(m.max_tgt_len >= 6);
  CHECK_NOTHROW(m.validate());
  const ApOptions o = ap_options(c, 7);
  CHECK(o.train.seed == 7);
}

TEST_CASE("metric values") {
  EvalMetrics m;
  m.perplexity = 3;
  m.token_accuracy = 0.5;
  m.bleu = 40;
  CHECK(metric_value(m, "perplexity") == 3);
  CHECK(metric_value(m, "token_accuracy") == 0.5);
  CHECK(metric_value(m, "bleu") == 40);
  CHECK_THROWS(metric_value(m, "f1"));
  CHECK(kinds_label({AttentionKind::kSelfEncoder, AttentionKind::kCross}) == "self_encoder+cross");
  CHECK(hex_hash(255) == "00000000000000ff");
}

TEST_CASE("sweep reports are deterministic and loss free") {
  const ExperimentConfig c = parse_experiment_config(kTiny);
  std::vector<std::string> lines;
  const SweepReport a = run_sweep(c, 2, [&](const std::string& s) { lines.push_back(s); });
  const SweepReport b = run_sweep(c, 1);
  CHECK(a.all_ok());
  CHECK(a.cells.size() == 4);
  CHECK_FALSE(lines.empty());
  CHECK(sweep_report_json(a) == sweep_report_json(b));
  CHECK(sweep_report_csv(a) == sweep_report_csv(b));
  CHECK(a.cells[0].seed == 0);
  CHECK(a.cells[0].p == 0);
  CHECK(std::abs(a.cells[0].pruned.loss - a.cells[0].baseline.loss) < 1e-9);

  // Every per-cell number of the JSON report appears in the CSV.
  const json doc = json::parse(sweep_report_json(a));
  const std::string csv = sweep_report_csv(a);
  std::set<double> csv_numbers;
  std::stringstream rows(csv);
  std::string line;
  std::getline(rows, line);
  while (std::getline(rows, line)) {
    std::string field;
    for (char ch : line + ",") {
      if (ch == ',' || ch == ';' || ch == '=') {
        char* end = nullptr;
        const double v = std::strtod(field.c_str(), &end);
        if (!field.empty() && end && *end == '\0') csv_numbers.insert(v);
        field.clear();
      } else {
        field += ch;
      }
    }
  }
  std::vector<double> json_numbers;
  for (const auto& cell : doc.at("cells")) collect_numbers(cell, json_numbers);
  REQUIRE_FALSE(json_numbers.empty());
  for (double v : json_numbers) {
    INFO("missing " << v);
    CHECK(csv_numbers.count(v) == 1);
  }
  const json timing = json::parse(sweep_timing_json(a));
  CHECK(timing.is_object());
  CHECK(sweep_report_json(a).find("wall_ms") == std::string::npos);
}

TEST_CASE("a missing OOD mask file is rejected before training") {
  ExperimentConfig c = parse_experiment_config(kTiny);
  c.prune.baseline = "ood:/nonexistent/masks.json";
  CHECK_THROWS_AS(run_sweep(c, 1), ConfigError);
}

TEST_CASE("failing cells are recorded and the sweep continues") {
  ExperimentConfig c = parse_experiment_config(R"({
    "task": "char-lm",
    "data": {"corpus": "licenses.txt", "max_chars": 3000},
    "model": {"n_layers": 1, "d_model": 16, "n_heads": 2, "d_ff": 32},
    "train": {"max_steps": 4, "eval_every": 2, "lm_context": 16},
    "prune": {"p": [50]}
  })", ATTNPRUNE_TEST_DATA);
  // A decoder-only model has no cross attention to prune.
  c.prune.kind_sets = {{AttentionKind::kCross}, {AttentionKind::kSelfDecoder}};
  const SweepReport r = run_sweep(c, 1);
  REQUIRE(r.cells.size() == 2);
  CHECK_FALSE(r.all_ok());
  CHECK_FALSE(r.cells[0].ok);
  CHECK_FALSE(r.cells[0].error.empty());
  CHECK(r.cells[1].ok);
  CHECK(sweep_report_csv(r).find("failed") != std::string::npos);
}
