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

#include "attnprune/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "attnprune/error.hpp"

namespace attnprune {

namespace {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

// Typed, path-aware access to one JSON object; unknown keys are rejected.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!j_.contains(key)) return fallback;
    return convert<T>(key);
  }

  template <typename T>
  T require(const std::string& key) {
    used_.insert(key);
    if (!j_.contains(key)) throw ConfigError(path_ + "." + key + ": required field is missing");
    return convert<T>(key);
  }

  Section child(const std::string& key) {
    used_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  std::string path(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw ConfigError(path_ + "." + k + ": unknown field");
    }
  }

 private:
  template <typename T>
  T convert(const std::string& key) const {
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
          throw ConfigError(path_ + "." + key + ": expected a non-negative integer");
        }
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

std::vector<AttentionKind> parse_kinds(const json& arr, const std::string& path) {
  if (!arr.is_array()) throw ConfigError(path + ": expected a list of attention kinds");
  std::vector<AttentionKind> kinds;
  for (const auto& k : arr) {
    if (!k.is_string()) throw ConfigError(path + ": attention kinds are strings");
    try {
      kinds.push_back(parse_kind(k.get<std::string>()));
    } catch (const Error& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  std::sort(kinds.begin(), kinds.end());
  kinds.erase(std::unique(kinds.begin(), kinds.end()), kinds.end());
  return kinds;
}

std::string num(double x) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ojson metrics_object(const EvalMetrics& m) {
  ojson j;
  j["loss"] = m.loss;
  j["perplexity"] = m.perplexity;
  j["token_accuracy"] = m.token_accuracy;
  j["bleu"] = m.bleu;
  return j;
}

}  // namespace

MaskSource PruneSection::source() const {
  if (baseline == "none") return MaskSource::kAp;
  if (baseline == "random") return MaskSource::kRandom;
  return MaskSource::kOod;
}

ExperimentConfig parse_experiment_config(const std::string& text, const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  cfg.base_dir = base_dir;
  Section root(doc, "config");

  cfg.task.name = root.require<std::string>("task");
  const std::set<std::string> tasks = {"copy", "reverse", "toy-translation", "char-lm"};
  if (!tasks.count(cfg.task.name)) {
    throw ConfigError("config.task: unknown task '" + cfg.task.name +
                      "' (expected copy, reverse, toy-translation or char-lm)");
  }
  {
    Section d = root.child("data");
    auto& t = cfg.task;
    t.count = d.get("count", t.count);
    t.len_min = d.get("len_min", t.len_min);
    t.len_max = d.get("len_max", t.len_max);
    t.alphabet = d.get("alphabet", t.alphabet);
    t.seed = d.get("seed", t.seed);
    t.corpus = d.get("corpus", t.corpus);
    t.max_chars = d.get("max_chars", t.max_chars);
    d.finish();
    if (t.name == "char-lm" && t.corpus.empty()) {
      throw ConfigError("config.data.corpus: required for the char-lm task");
    }
    if (t.name != "char-lm" && t.name != "toy-translation") {
      if (t.len_min < 1 || t.len_max < t.len_min) {
        throw ConfigError("config.data.len_min: need 1 <= len_min <= len_max");
      }
      if (t.alphabet < 2) throw ConfigError("config.data.alphabet: must be at least 2");
    }
    if (t.name != "char-lm" && t.count < 10) throw ConfigError("config.data.count: must be at least 10");
  }

  const std::string activation = root.get<std::string>("activation", "softmax");
  Activation act;
  try {
    act = parse_activation(activation);
  } catch (const Error& e) {
    throw ConfigError(std::string("config.activation: ") + e.what());
  }
  {
    Section m = root.child("model");
    auto& c = cfg.model;
    c.arch = cfg.task.name == "char-lm" ? Architecture::kLmOnly : Architecture::kEncDec;
    c.n_layers = m.get("n_layers", std::size_t{2});
    const auto d = m.get("d_model", std::size_t{64});
    const auto h = m.get("n_heads", std::size_t{4});
    if (h == 0 || d % h != 0) throw ConfigError("config.model.n_heads: must divide d_model");
    c.attention = AttentionConfig::make(d, h, act);
    c.d_ff = m.get("d_ff", 4 * d);
    c.vocab_size = m.get("vocab_size", std::size_t{0});
    c.max_src_len = m.get("max_src_len", std::size_t{0});
    c.max_tgt_len = m.get("max_tgt_len", std::size_t{0});
    c.tie_embeddings = m.get("tie_embeddings", false);
    c.attention.neg_fill = m.get("neg_fill", kDefaultNegFill);
    m.finish();
    if (c.n_layers < 1) throw ConfigError("config.model.n_layers: must be at least 1");
    if (c.d_ff < 1) throw ConfigError("config.model.d_ff: must be at least 1");
  }
  {
    Section s = root.child("train");
    auto& t = cfg.train;
    t.lr = s.get("lr", t.lr);
    t.beta1 = s.get("beta1", t.beta1);
    t.beta2 = s.get("beta2", t.beta2);
    t.eps = s.get("eps", t.eps);
    t.weight_decay = s.get("weight_decay", t.weight_decay);
    t.clip = s.get("clip", t.clip);
    t.batch_size = s.get("batch_size", t.batch_size);
    t.max_steps = s.get("max_steps", t.max_steps);
    t.max_epochs = s.get("max_epochs", t.max_epochs);
    t.warmup = s.get("warmup", t.warmup);
    t.eval_every = s.get("eval_every", t.eval_every);
    t.patience = s.get("patience", t.patience);
    t.eval_examples = s.get("eval_examples", t.eval_examples);
    t.lm_context = s.get("lm_context", t.lm_context);
    cfg.eval_batch = s.get("eval_batch", cfg.eval_batch);
    s.finish();
    try {
      t.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("config.") + e.what());
    }
  }
  {
    Section s = root.child("prune");
    auto& pr = cfg.prune;
    if (s.has("p")) {
      pr.p = s.require<std::vector<double>>("p");
      if (pr.p.empty()) throw ConfigError("config.prune.p: at least one value needed");
    } else {
      s.get("p", 0);
    }
    for (double p : pr.p) {
      if (!(p >= 0.0 && p <= 100.0)) {
        throw ConfigError("config.prune.p: value " + num(p) + " outside [0, 100]");
      }
    }
    if (s.has("kinds")) {
      const json& k = s.raw("kinds");
      if (k.is_array() && !k.empty() && k[0].is_array()) {
        for (std::size_t i = 0; i < k.size(); ++i) {
          pr.kind_sets.push_back(parse_kinds(k[i], s.path("kinds") + "[" + std::to_string(i) + "]"));
        }
      } else {
        pr.kind_sets.push_back(parse_kinds(k, s.path("kinds")));
      }
    } else {
      s.get("kinds", 0);
    }
    if (pr.kind_sets.empty()) {
      if (cfg.model.arch == Architecture::kLmOnly) {
        pr.kind_sets = {{AttentionKind::kSelfDecoder}};
      } else {
        pr.kind_sets = {{AttentionKind::kSelfEncoder, AttentionKind::kSelfDecoder}};
      }
    }
    for (const auto& ks : pr.kind_sets) {
      if (ks.empty()) throw ConfigError("config.prune.kinds: empty kind set");
      for (AttentionKind k : ks) {
        if (cfg.model.arch == Architecture::kLmOnly && k != AttentionKind::kSelfDecoder) {
          throw ConfigError("config.prune.kinds: the LM model only has self_decoder attention");
        }
      }
    }
    try {
      pr.retrain_mode = parse_retrain_mode(s.get<std::string>("retrain_mode", "fresh"));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("config.prune.retrain_mode: ") + e.what());
    }
    pr.baseline = s.get<std::string>("baseline", "none");
    if (pr.baseline != "none" && pr.baseline != "random" &&
        (pr.baseline.rfind("ood:", 0) != 0 || pr.baseline.size() <= 4)) {
      throw ConfigError("config.prune.baseline: expected none, random or ood:PATH");
    }
    pr.mask_seed = s.get("mask_seed", pr.mask_seed);
    s.finish();
  }
  cfg.seeds = root.get("seeds", cfg.seeds);
  if (cfg.seeds.empty()) throw ConfigError("config.seeds: at least one seed needed");
  cfg.output_dir = root.get("output_dir", cfg.output_dir);
  cfg.metric = root.get<std::string>("metric", "");
  if (!cfg.metric.empty() && cfg.metric != "token_accuracy" && cfg.metric != "bleu" &&
      cfg.metric != "perplexity" && cfg.metric != "loss") {
    throw ConfigError("config.metric: expected token_accuracy, bleu, perplexity or loss");
  }
  root.finish();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  auto base = std::filesystem::path(path).parent_path().string();
  auto cfg = parse_experiment_config(buf.str(), base.empty() ? "." : base);
  if (const char* out = std::getenv("ATTNPRUNE_OUTPUT_DIR"); out && *out) cfg.output_dir = out;
  return cfg;
}

std::string experiment_config_json(const ExperimentConfig& cfg) {
  ojson j;
  j["task"] = cfg.task.name;
  j["data"] = {{"count", cfg.task.count}, {"len_min", cfg.task.len_min},
               {"len_max", cfg.task.len_max}, {"alphabet", cfg.task.alphabet},
               {"seed", cfg.task.seed}, {"corpus", cfg.task.corpus},
               {"max_chars", cfg.task.max_chars}};
  const auto& c = cfg.model;
  j["model"] = {{"n_layers", c.n_layers}, {"d_model", c.attention.d_model},
                {"n_heads", c.attention.n_heads}, {"d_ff", c.d_ff},
                {"vocab_size", c.vocab_size}, {"max_src_len", c.max_src_len},
                {"max_tgt_len", c.max_tgt_len}, {"tie_embeddings", c.tie_embeddings},
                {"neg_fill", c.attention.neg_fill}};
  const auto& t = cfg.train;
  j["train"] = {{"lr", t.lr}, {"beta1", t.beta1}, {"beta2", t.beta2}, {"eps", t.eps},
                {"weight_decay", t.weight_decay}, {"clip", t.clip},
                {"batch_size", t.batch_size}, {"max_steps", t.max_steps},
                {"max_epochs", t.max_epochs}, {"warmup", t.warmup},
                {"eval_every", t.eval_every}, {"patience", t.patience},
                {"eval_examples", t.eval_examples}, {"lm_context", t.lm_context},
                {"eval_batch", cfg.eval_batch}};
  ojson kinds = ojson::array();
  for (const auto& ks : cfg.prune.kind_sets) {
    ojson a = ojson::array();
    for (auto k : ks) a.push_back(std::string(to_string(k)));
    kinds.push_back(a);
  }
  j["prune"] = {{"p", cfg.prune.p}, {"kinds", kinds},
                {"retrain_mode", std::string(to_string(cfg.prune.retrain_mode))},
                {"baseline", cfg.prune.baseline}, {"mask_seed", cfg.prune.mask_seed}};
  j["activation"] = std::string(to_string(cfg.model.attention.activation));
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  j["metric"] = cfg.metric;
  return j.dump(2);
}

TaskData make_task_data(const ExperimentConfig& cfg) {
  const auto& t = cfg.task;
  if (t.name == "copy") return gen_copy(t.count, t.len_min, t.len_max, t.alphabet, t.seed);
  if (t.name == "reverse") return gen_reverse(t.count, t.len_min, t.len_max, t.alphabet, t.seed);
  if (t.name == "toy-translation") return gen_toy_translation(t.count, t.seed);
  std::filesystem::path corpus(t.corpus);
  if (corpus.is_relative()) corpus = std::filesystem::path(cfg.base_dir) / corpus;
  return char_lm_ingest(corpus.string(), t.max_chars);
}

TransformerConfig resolve_model(const ExperimentConfig& cfg, const TaskData& data) {
  TransformerConfig c = cfg.model;
  if (c.vocab_size == 0) c.vocab_size = data.vocab.size();
  if (c.vocab_size < data.vocab.size()) {
    throw ConfigError("config.model.vocab_size: smaller than the task vocabulary (" +
                      std::to_string(data.vocab.size()) + ")");
  }
  if (c.arch == Architecture::kLmOnly) {
    if (c.max_tgt_len == 0) c.max_tgt_len = cfg.train.lm_context;
    if (c.max_src_len == 0) c.max_src_len = 2;
  } else {
    std::size_t src = 0, tgt = 0;
    for (const Dataset* d : {&data.train, &data.valid, &data.test}) {
      for (const auto& p : d->pairs) {
        src = std::max(src, p.src.size());
        tgt = std::max(tgt, p.tgt.size() - 1);
      }
    }
    if (c.max_src_len == 0) c.max_src_len = std::max<std::size_t>(src, 2);
    if (c.max_tgt_len == 0) c.max_tgt_len = std::max<std::size_t>(tgt, 2);
  }
  c.validate();
  return c;
}

ApOptions ap_options(const ExperimentConfig& cfg, std::uint64_t seed) {
  ApOptions o;
  o.train = cfg.train;
  o.train.seed = seed;
  o.eval.batch_size = cfg.eval_batch;
  o.eval.lm_context = cfg.train.lm_context;
  o.eval.with_bleu = cfg.model.arch == Architecture::kEncDec;
  o.stats_batch = cfg.eval_batch;
  return o;
}

std::string primary_metric(const ExperimentConfig& cfg) {
  if (!cfg.metric.empty()) return cfg.metric;
  if (cfg.task.name == "char-lm") return "perplexity";
  if (cfg.task.name == "toy-translation") return "bleu";
  return "token_accuracy";
}

double metric_value(const EvalMetrics& m, const std::string& metric) {
  if (metric == "token_accuracy") return m.token_accuracy;
  if (metric == "bleu") return m.bleu;
  if (metric == "perplexity") return m.perplexity;
  if (metric == "loss") return m.loss;
  throw ConfigError("unknown metric '" + metric + "'");
}

bool SweepReport::all_ok() const {
  return std::all_of(cells.begin(), cells.end(), [](const SweepCell& c) { return c.ok; });
}

std::string kinds_label(const std::vector<AttentionKind>& kinds) {
  std::string s;
  for (auto k : kinds) s += (s.empty() ? "" : "+") + std::string(to_string(k));
  return s;
}

std::string hex_hash(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

SweepReport run_sweep(const ExperimentConfig& cfg, std::size_t jobs, const ProgressFn& progress) {
  SweepReport report;
  report.config = cfg;
  report.metric = primary_metric(cfg);
  const TaskData data = make_task_data(cfg);
  const TransformerConfig model = resolve_model(cfg, data);

  std::optional<MaskSet> ood;
  if (cfg.prune.source() == MaskSource::kOod) {
    std::filesystem::path p(cfg.prune.baseline.substr(4));
    if (p.is_relative()) p = std::filesystem::path(cfg.base_dir) / p;
    // Checked before any training so a bad path costs nothing.
    if (!std::filesystem::exists(p)) {
      throw ConfigError("config.prune.baseline: OOD mask file " + p.string() + " does not exist");
    }
    ood = load_masks(p.string());
    check_mask_compatibility(*ood, head_layout(model));
  }

  const std::size_t per_seed = cfg.prune.kind_sets.size() * cfg.prune.p.size();
  report.cells.resize(cfg.seeds.size() * per_seed);
  report.baseline_wall_ms.resize(cfg.seeds.size());
  std::mutex log_mu;
  auto say = [&](const std::string& msg) {
    if (!progress) return;
    std::lock_guard<std::mutex> lock(log_mu);
    progress(msg);
  };

  auto run_seed = [&](std::size_t si) {
    const std::uint64_t seed = cfg.seeds[si];
    const ApOptions opts = ap_options(cfg, seed);
    auto clock = std::chrono::steady_clock::now();
    auto since = [](auto t) {
      return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t).count();
    };
    std::optional<ApBaseline> base;
    std::string base_error;
    try {
      say("seed " + std::to_string(seed) + ": training baseline");
      base = ap_baseline(model, seed, data, opts);
    } catch (const Error& e) {
      base_error = std::string("baseline failed: ") + e.what();
    }
    report.baseline_wall_ms[si] = {seed, since(clock)};
    std::size_t idx = si * per_seed;
    for (const auto& kinds : cfg.prune.kind_sets) {
      for (double p : cfg.prune.p) {
        SweepCell& cell = report.cells[idx++];
        cell.seed = seed;
        cell.p = p;
        cell.kinds = kinds;
        if (!base) {
          cell.error = base_error;
          continue;
        }
        cell.baseline = base->test;
        cell.baseline_hash = hex_hash(base->trained.best.content_hash());
        cell.stats_hash = hex_hash(base->stats_checkpoint_hash);
        const auto t0 = std::chrono::steady_clock::now();
        try {
          say("seed " + std::to_string(seed) + ": p=" + num(p) + " kinds=" + kinds_label(kinds));
          const ApCell r = ap_prune(*base, data, PruneSpec{p, kinds}, cfg.prune.retrain_mode, opts,
                                    cfg.prune.source(), cfg.prune.mask_seed + seed,
                                    ood ? &*ood : nullptr);
          cell.pruned = r.test;
          cell.sparsity = r.sparsity.overall;
          cell.sparsity_per_kind = r.sparsity.per_kind;
          cell.thresholds = r.masks.meta.thresholds;
          cell.mac_fraction = r.mac_fraction;
          cell.mac_length = r.mac_length;
          cell.ok = true;
        } catch (const Error& e) {
          cell.error = e.what();
        }
        cell.wall_ms = since(t0);
      }
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, cfg.seeds.size()));
  if (workers == 1) {
    for (std::size_t si = 0; si < cfg.seeds.size(); ++si) run_seed(si);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t si; (si = next++) < cfg.seeds.size();) run_seed(si);
      });
    }
    for (auto& t : pool) t.join();
  }
  return report;
}

std::string metrics_json(const EvalMetrics& m) {
  ojson j = metrics_object(m);
  j["examples"] = m.examples;
  j["tokens"] = m.tokens;
  return j.dump(2);
}

std::string sweep_report_json(const SweepReport& r) {
  ojson doc;
  doc["schema_version"] = 1;
  doc["config"] = ojson::parse(experiment_config_json(r.config));
  doc["metric"] = r.metric;
  ojson cells = ojson::array();
  for (const auto& c : r.cells) {
    ojson j;
    j["seed"] = c.seed;
    j["p"] = c.p;
    j["kinds"] = kinds_label(c.kinds);
    j["retrain_mode"] = std::string(to_string(r.config.prune.retrain_mode));
    j["mask_baseline"] = r.config.prune.baseline;
    j["status"] = c.ok ? "ok" : "failed";
    if (!c.ok) j["error"] = c.error;
    j["metric_baseline"] = metric_value(c.baseline, r.metric);
    j["metric_pruned"] = c.ok ? metric_value(c.pruned, r.metric) : std::nan("");
    j["baseline"] = metrics_object(c.baseline);
    j["pruned"] = metrics_object(c.pruned);
    j["sparsity"] = c.sparsity;
    ojson per_kind = ojson::object();
    for (const auto& [k, v] : c.sparsity_per_kind) per_kind[std::string(to_string(k))] = v;
    j["sparsity_per_kind"] = per_kind;
    ojson th = ojson::array();
    for (const auto& t : c.thresholds) {
      th.push_back({{"kind", std::string(to_string(t.kind))}, {"layer", t.layer}, {"tau", t.tau}});
    }
    j["thresholds"] = th;
    j["mac_fraction"] = c.mac_fraction;
    j["mac_length"] = c.mac_length;
    j["baseline_checkpoint"] = c.baseline_hash;
    j["stats_checkpoint"] = c.stats_hash;
    cells.push_back(j);
  }
  doc["cells"] = cells;

  ojson agg = ojson::array();
  for (const auto& ks : r.config.prune.kind_sets) {
    for (double p : r.config.prune.p) {
      std::vector<double> b, q;
      for (const auto& c : r.cells) {
        if (c.ok && c.p == p && c.kinds == ks) {
          b.push_back(metric_value(c.baseline, r.metric));
          q.push_back(metric_value(c.pruned, r.metric));
        }
      }
      agg.push_back({{"p", p}, {"kinds", kinds_label(ks)}, {"seeds_ok", b.size()},
                     {"median_baseline", median(b)}, {"median_pruned", median(q)}});
    }
  }
  doc["aggregate"] = agg;
  return doc.dump(2) + "\n";
}

std::string sweep_report_csv(const SweepReport& r) {
  std::ostringstream out;
  out << "seed,p,kinds,metric_baseline,metric_pruned,sparsity,mac_fraction,status,retrain_mode,"
         "mask_baseline,mac_length,baseline_loss,baseline_perplexity,baseline_token_accuracy,"
         "baseline_bleu,pruned_loss,pruned_perplexity,pruned_token_accuracy,pruned_bleu,"
         "sparsity_per_kind,thresholds,baseline_checkpoint,stats_checkpoint\n";
  for (const auto& c : r.cells) {
    std::string per_kind, th;
    for (const auto& [k, v] : c.sparsity_per_kind) {
      per_kind += (per_kind.empty() ? "" : ";") + std::string(to_string(k)) + "=" + num(v);
    }
    for (const auto& t : c.thresholds) {
      th += (th.empty() ? "" : ";") + std::string(to_string(t.kind)) + ":" +
            std::to_string(t.layer) + "=" + num(t.tau);
    }
    out << c.seed << ',' << num(c.p) << ',' << kinds_label(c.kinds) << ','
        << num(metric_value(c.baseline, r.metric)) << ','
        << (c.ok ? num(metric_value(c.pruned, r.metric)) : "nan") << ',' << num(c.sparsity) << ','
        << num(c.mac_fraction) << ',' << (c.ok ? "ok" : "failed") << ','
        << to_string(r.config.prune.retrain_mode) << ',' << r.config.prune.baseline << ','
        << c.mac_length << ',' << num(c.baseline.loss) << ',' << num(c.baseline.perplexity) << ','
        << num(c.baseline.token_accuracy) << ',' << num(c.baseline.bleu) << ','
        << num(c.pruned.loss) << ',' << num(c.pruned.perplexity) << ','
        << num(c.pruned.token_accuracy) << ',' << num(c.pruned.bleu) << ',' << per_kind << ','
        << th << ',' << c.baseline_hash << ',' << c.stats_hash << '\n';
  }
  return out.str();
}

std::string sweep_timing_json(const SweepReport& r) {
  ojson doc;
  ojson base = ojson::array();
  for (const auto& [seed, ms] : r.baseline_wall_ms) base.push_back({{"seed", seed}, {"wall_ms", ms}});
  doc["baselines"] = base;
  ojson cells = ojson::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"seed", c.seed}, {"p", c.p}, {"kinds", kinds_label(c.kinds)}, {"wall_ms", c.wall_ms}});
  }
  doc["cells"] = cells;
  return doc.dump(2) + "\n";
}

}  // namespace attnprune
