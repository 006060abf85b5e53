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

#include "attnprune/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "attnprune/error.hpp"

namespace attnprune {

void TokenTally::add(const Tensor& logits, std::span<const int> targets, int ignore_id) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError("token tally: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const std::size_t V = logits.dim(1);
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const int t = targets[r];
    if (t == ignore_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= V) throw DomainError("target id out of range");
    const auto row = logits.data().subspan(r * V, V);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double x : row) z += std::exp(x - mx);
    nll += mx + std::log(z) - row[static_cast<std::size_t>(t)];
    if (argmax(row) == static_cast<std::size_t>(t)) ++correct;
    ++count;
  }
}

EvalMetrics TokenTally::metrics() const {
  if (count == 0) throw DomainError("evaluation over an empty split");
  EvalMetrics m;
  m.loss = nll / static_cast<double>(count);
  m.perplexity = std::exp(m.loss);
  m.token_accuracy = static_cast<double>(correct) / static_cast<double>(count);
  m.tokens = count;
  return m;
}

double bleu(const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<int>>& refs) {
  if (hyps.size() != refs.size()) throw ShapeError("bleu: hypothesis and reference counts differ");
  if (hyps.empty()) throw DomainError("bleu over an empty corpus");
  std::uint64_t matches[4] = {0, 0, 0, 0};
  std::uint64_t totals[4] = {0, 0, 0, 0};
  std::uint64_t hyp_len = 0;
  std::uint64_t ref_len = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& h = hyps[s];
    const auto& r = refs[s];
    hyp_len += h.size();
    ref_len += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      if (h.size() < n) continue;
      std::map<std::vector<int>, std::uint64_t> ref_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[{r.begin() + i, r.begin() + i + n}];
      std::map<std::vector<int>, std::uint64_t> hyp_counts;
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[{h.begin() + i, h.begin() + i + n}];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(c, it->second);
      }
      totals[n - 1] += h.size() - n + 1;
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    const double p = totals[n] == 0 ? 0.0
                                    : static_cast<double>(matches[n]) / static_cast<double>(totals[n]);
    log_sum += std::log(std::max(p, 1e-16));
  }
  const double bp =
      std::exp(std::min(0.0, 1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)));
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

Var batch_logits(const BoundModel& model, const Batch& batch, const ForwardOptions& opts) {
  if (model.config().arch == Architecture::kLmOnly) return lm_logits(model, batch.input, opts);
  return seq2seq_logits(model, batch.src, batch.input, opts);
}

namespace {

void check_kind(const Checkpoint& ckpt, const Dataset& data) {
  const bool lm = ckpt.config.arch == Architecture::kLmOnly;
  if (lm != (data.kind == DatasetKind::kLmStream)) {
    throw IncompatibleError(std::string("a ") + std::string(to_string(ckpt.config.arch)) +
                            " model cannot evaluate a " + std::string(to_string(data.kind)) +
                            " dataset");
  }
}

Dataset truncated(const Dataset& data, std::size_t max_examples) {
  Dataset d = data;
  if (max_examples == 0) return d;
  if (d.kind == DatasetKind::kPairSet && d.pairs.size() > max_examples) {
    d.pairs.resize(max_examples);
    d.indices.resize(max_examples);
  } else if (d.kind == DatasetKind::kLmStream && d.stream.size() > max_examples) {
    d.stream.resize(max_examples);
  }
  return d;
}

}  // namespace

EvalMetrics evaluate(const Checkpoint& ckpt, const Dataset& data_in, const EvalOptions& opts) {
  check_kind(ckpt, data_in);
  if (opts.masks) check_mask_compatibility(*opts.masks, head_layout(ckpt.config));
  const Dataset data = truncated(data_in, opts.max_examples);
  if (data.num_examples() == 0) throw DomainError("evaluation over an empty split");
  const bool lm = data.kind == DatasetKind::kLmStream;
  const std::size_t max_len =
      lm ? std::min(opts.lm_context, ckpt.config.max_tgt_len)
         : std::max(ckpt.config.max_src_len, ckpt.config.max_tgt_len);
  MaskSlicer slicer(opts.masks, ckpt.config.attention.neg_fill);
  const ForwardOptions fwd{opts.masks ? &slicer : nullptr, nullptr};

  TokenTally tally;
  for (const Batch& batch : make_batches(data, opts.batch_size, max_len, 0, 0, false)) {
    Tape tape;
    BoundModel model(tape, ckpt, false);
    tally.add(batch_logits(model, batch, fwd).value(), batch.targets);
  }
  EvalMetrics m = tally.metrics();
  m.examples = lm ? tally.count : data.pairs.size();

  if (opts.with_bleu && !lm) {
    std::vector<std::vector<int>> hyps, refs;
    for (std::size_t b0 = 0; b0 < data.pairs.size(); b0 += opts.batch_size) {
      std::vector<std::vector<int>> srcs;
      const std::size_t end = std::min(data.pairs.size(), b0 + opts.batch_size);
      for (std::size_t i = b0; i < end; ++i) srcs.push_back(data.pairs[i].src);
      auto out = greedy_decode_batch(ckpt, srcs, kBosId, kEosId, ckpt.config.max_tgt_len, opts.masks);
      for (std::size_t i = b0; i < end; ++i) {
        auto& h = out[i - b0];
        if (!h.empty() && h.back() == kEosId) h.pop_back();
        hyps.push_back(std::move(h));
        const auto& tgt = data.pairs[i].tgt;
        refs.emplace_back(tgt.begin() + 1, tgt.end() - 1);
      }
    }
    m.bleu = bleu(hyps, refs);
  }
  return m;
}

EvalMetrics perplexity(const Checkpoint& ckpt, const Dataset& data, const MaskSet* masks,
                       std::size_t lm_context) {
  if (data.kind != DatasetKind::kLmStream) throw IncompatibleError("perplexity needs an LM dataset");
  EvalOptions opts;
  opts.lm_context = lm_context;
  opts.masks = masks;
  return evaluate(ckpt, data, opts);
}

double token_accuracy(const Checkpoint& ckpt, const Dataset& data, const MaskSet* masks) {
  if (data.kind != DatasetKind::kPairSet) throw IncompatibleError("token accuracy needs a pair dataset");
  EvalOptions opts;
  opts.masks = masks;
  return evaluate(ckpt, data, opts).token_accuracy;
}

}  // namespace attnprune
