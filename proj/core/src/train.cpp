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

#include "attnprune/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "attnprune/cost_model.hpp"
#include "attnprune/error.hpp"

namespace attnprune {

namespace {

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(17);
  s << x;
  return s.str();
}

bool better(const EvalMetrics& a, const EvalMetrics& b, bool lm) {
  if (lm) return a.loss < b.loss;
  if (a.bleu != b.bleu) return a.bleu > b.bleu;
  return a.loss < b.loss;
}

std::size_t model_max_len(const TransformerConfig& c, const TrainConfig& cfg, bool lm) {
  return lm ? std::min(cfg.lm_context, c.max_tgt_len) : std::max(c.max_src_len, c.max_tgt_len);
}

}  // namespace

std::string train_log_csv(const std::vector<TrainLogRow>& log) {
  std::ostringstream out;
  out << "step,split,loss,ppl_or_acc,bleu,lr,wall_ms\n";
  for (const auto& r : log) {
    out << r.step << ',' << r.split << ',' << fmt(r.loss) << ',' << fmt(r.ppl_or_acc) << ','
        << fmt(r.bleu) << ',' << fmt(r.lr) << ',' << std::fixed << std::setprecision(3) << r.wall_ms
        << std::defaultfloat << '\n';
  }
  return out.str();
}

TrainResult train(const Checkpoint& init, const TaskData& data, const TrainConfig& cfg,
                  const MaskSet* masks) {
  cfg.validate();
  const auto& c = init.config;
  const bool lm = c.arch == Architecture::kLmOnly;
  if (lm != (data.train.kind == DatasetKind::kLmStream)) {
    throw IncompatibleError("dataset kind does not match the model architecture");
  }
  if (masks) check_mask_compatibility(*masks, head_layout(c));
  const std::size_t max_len = model_max_len(c, cfg, lm);

  EvalOptions eval_opts;
  eval_opts.batch_size = std::max<std::size_t>(cfg.batch_size, 32);
  eval_opts.lm_context = cfg.lm_context;
  eval_opts.max_examples = cfg.eval_examples;
  eval_opts.with_bleu = !lm;
  eval_opts.masks = masks;

  TrainResult result;
  result.best = init;
  result.last = init;
  Checkpoint current = init;
  OptimState state;
  MaskSlicer slicer(masks, c.attention.neg_fill);
  const ForwardOptions fwd{masks ? &slicer : nullptr, nullptr};
  const auto t0 = std::chrono::steady_clock::now();
  auto wall = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  };

  std::vector<std::string> names;
  std::vector<Tensor*> params;
  for (auto& [name, t] : current.weights) {
    names.push_back(name);
    params.push_back(&t);
  }

  bool have_best = false;
  std::size_t stale = 0;
  TokenTally window;
  double last_lr = 0.0;
  std::uint64_t step = 0;
  bool stop = false;

  auto run_eval = [&] {
    if (window.count > 0) {
      const EvalMetrics tm = window.metrics();
      result.log.push_back({step, "train", tm.loss, lm ? tm.perplexity : tm.token_accuracy, 0.0,
                            last_lr, wall()});
      window = TokenTally{};
    }
    current.step = step;
    const EvalMetrics vm = evaluate(current, data.valid, eval_opts);
    result.log.push_back({step, "valid", vm.loss, lm ? vm.perplexity : vm.token_accuracy,
                          vm.bleu, last_lr, wall()});
    if (!have_best || better(vm, result.best_valid, lm)) {
      have_best = true;
      result.best = current;
      result.best_valid = vm;
      result.best_step = step;
      stale = 0;
    } else if (cfg.patience > 0 && ++stale >= cfg.patience) {
      result.stop_reason = "patience";
      stop = true;
    }
  };

  for (std::uint64_t epoch = 0; !stop; ++epoch) {
    if (cfg.max_epochs > 0 && epoch >= cfg.max_epochs) {
      result.stop_reason = "max_epochs";
      break;
    }
    const auto batches = make_batches(data.train, cfg.batch_size, max_len, cfg.seed, epoch);
    if (batches.empty()) throw DomainError("training split is empty");
    for (const Batch& batch : batches) {
      Tape tape;
      BoundModel model(tape, current, true);
      Var logits = batch_logits(model, batch, fwd);
      Var loss = cross_entropy(logits, batch.targets, kPadId);
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) {
        result.diverged = true;
        result.stop_reason = "non-finite loss at step " + std::to_string(step + 1);
        stop = true;
        break;
      }
      window.add(logits.value(), batch.targets);
      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(params.size());
      for (const auto& [name, var] : model.vars()) grads.push_back(tape.grad(var));
      try {
        last_lr = adam_step(params, grads, state, cfg, names).lr;
      } catch (const NumericalError& e) {
        result.diverged = true;
        result.stop_reason = e.what();
        stop = true;
        break;
      }
      ++step;
      if (step % cfg.eval_every == 0) run_eval();
      if (stop) break;
      if (step >= cfg.max_steps) {
        result.stop_reason = "max_steps";
        stop = true;
        break;
      }
    }
  }
  if (!result.diverged && step % cfg.eval_every != 0 && result.stop_reason != "patience") {
    run_eval();
  }
  current.step = step;
  result.steps = step;
  result.last = result.diverged ? result.best : current;
  return result;
}

AttentionStats collect_stats(const Checkpoint& ckpt, const Dataset& data, std::size_t batch_size,
                             std::size_t lm_context) {
  const bool lm = ckpt.config.arch == Architecture::kLmOnly;
  if (lm != (data.kind == DatasetKind::kLmStream)) {
    throw IncompatibleError("dataset kind does not match the model architecture");
  }
  if (data.num_examples() == 0) throw DomainError("cannot collect statistics over an empty split");
  AttentionStats stats(head_layout(ckpt.config));
  const AttentionObserver observer = [&stats](const AttentionEvent& ev) { stats.accumulate(ev); };
  const ForwardOptions fwd{nullptr, &observer};
  const std::size_t max_len =
      lm ? std::min(lm_context, ckpt.config.max_tgt_len)
         : std::max(ckpt.config.max_src_len, ckpt.config.max_tgt_len);
  for (const Batch& batch : make_batches(data, batch_size, max_len, 0, 0, false)) {
    Tape tape;
    BoundModel model(tape, ckpt, false);
    batch_logits(model, batch, fwd);
    stats.add_examples(batch.input.batch);
  }
  return stats;
}

std::string_view to_string(RetrainMode m) { return m == RetrainMode::kFresh ? "fresh" : "finetune"; }

RetrainMode parse_retrain_mode(std::string_view s) {
  if (s == "fresh") return RetrainMode::kFresh;
  if (s == "finetune") return RetrainMode::kFinetune;
  throw ConfigError("unknown retrain_mode '" + std::string(s) + "' (expected fresh or finetune)");
}

ApBaseline ap_baseline(const TransformerConfig& config, std::uint64_t init_seed,
                       const TaskData& data, const ApOptions& opts) {
  ApBaseline base;
  base.init = init_params(config, init_seed);
  base.trained = train(base.init, data, opts.train);
  if (base.trained.diverged && base.trained.best_step == 0) {
    throw NumericalError("baseline training diverged: " + base.trained.stop_reason);
  }
  EvalOptions eval = opts.eval;
  eval.masks = nullptr;
  base.test = evaluate(base.trained.best, data.test, eval);
  base.stats = collect_stats(base.trained.best, data.train, opts.stats_batch, opts.train.lm_context);
  base.stats_checkpoint_hash = base.trained.best.content_hash();
  return base;
}

std::size_t median_eval_length(const Dataset& data, std::size_t lm_context) {
  if (data.kind == DatasetKind::kLmStream) return lm_context;
  if (data.pairs.empty()) return 0;
  std::vector<std::size_t> lens;
  for (const auto& p : data.pairs) lens.push_back(p.src.size());
  std::nth_element(lens.begin(), lens.begin() + static_cast<std::ptrdiff_t>(lens.size() / 2), lens.end());
  return lens[lens.size() / 2];
}

ApCell ap_prune(const ApBaseline& base, const TaskData& data, const PruneSpec& spec,
                RetrainMode mode, const ApOptions& opts, MaskSource source,
                std::uint64_t mask_seed, const MaskSet* ood) {
  spec.validate();
  ApCell cell;
  cell.spec = spec;
  cell.mode = mode;
  cell.source = source;
  const auto& config = base.init.config;
  switch (source) {
    case MaskSource::kAp:
      cell.masks = build_masks(average(base.stats), spec);
      break;
    case MaskSource::kRandom:
      cell.masks = random_masks(average(base.stats), spec.p, mask_seed, spec.kinds);
      break;
    case MaskSource::kOod:
      if (!ood) throw ConfigError("out-of-distribution masks requested but none given");
      cell.masks = *ood;
      break;
  }
  cell.masks.meta.source_dataset = data.name;
  check_mask_compatibility(cell.masks, head_layout(config));
  cell.sparsity = mask_sparsity(cell.masks);

  const Checkpoint& start = mode == RetrainMode::kFresh ? base.init : base.trained.best;
  cell.trained = train(start, data, opts.train, &cell.masks);
  EvalOptions eval = opts.eval;
  eval.masks = &cell.masks;
  cell.test = evaluate(cell.trained.best, data.test, eval);
  cell.mac_length = median_eval_length(data.test, opts.train.lm_context);
  cell.mac_fraction = mac_fraction(static_cast<double>(config.attention.d_model),
                                   static_cast<double>(cell.mac_length), spec.p / 100.0);
  return cell;
}

}  // namespace attnprune
