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

#include "attnprune/model.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "attnprune/error.hpp"

namespace attnprune {

std::string_view to_string(Architecture a) { return a == Architecture::kLmOnly ? "lm" : "encdec"; }

Architecture parse_architecture(std::string_view s) {
  if (s == "lm" || s == "LmOnly") return Architecture::kLmOnly;
  if (s == "encdec" || s == "EncDec") return Architecture::kEncDec;
  throw ConfigError("unknown architecture '" + std::string(s) + "'");
}

void TransformerConfig::validate() const {
  attention.validate();
  if (n_layers < 1) throw ConfigError("model.n_layers must be >= 1");
  if (max_src_len < 2 || max_tgt_len < 2) throw ConfigError("model max lengths must be >= 2");
  if (vocab_size <= static_cast<std::size_t>(kNumReserved)) {
    throw ConfigError("model.vocab_size must exceed the reserved ids");
  }
  if (d_ff < 1) throw ConfigError("model.d_ff must be >= 1");
}

bool TransformerConfig::operator==(const TransformerConfig& o) const {
  return n_layers == o.n_layers && attention.d_model == o.attention.d_model &&
         attention.n_heads == o.attention.n_heads && attention.d_k == o.attention.d_k &&
         attention.d_v == o.attention.d_v && attention.activation == o.attention.activation &&
         attention.neg_fill == o.attention.neg_fill && d_ff == o.d_ff &&
         vocab_size == o.vocab_size && max_src_len == o.max_src_len &&
         max_tgt_len == o.max_tgt_len && tie_embeddings == o.tie_embeddings && arch == o.arch;
}

std::vector<HeadLayout> head_layout(const TransformerConfig& c) {
  std::vector<HeadLayout> out;
  const std::size_t H = c.attention.n_heads;
  auto add = [&](AttentionKind kind, std::size_t rows, std::size_t cols) {
    for (std::size_t l = 0; l < c.n_layers; ++l)
      for (std::size_t h = 0; h < H; ++h) out.push_back({{kind, l, h}, rows, cols});
  };
  if (c.arch == Architecture::kLmOnly) {
    add(AttentionKind::kSelfDecoder, c.max_tgt_len, c.max_tgt_len);
  } else {
    add(AttentionKind::kSelfEncoder, c.max_src_len, c.max_src_len);
    add(AttentionKind::kSelfDecoder, c.max_tgt_len, c.max_tgt_len);
    add(AttentionKind::kCross, c.max_tgt_len, c.max_src_len);
  }
  return out;
}

namespace {

void add_attention_weights(std::vector<std::pair<std::string, Shape>>& out,
                           const std::string& prefix, std::size_t d) {
  for (const char* p : {"wq", "wk", "wv", "wo"}) {
    out.emplace_back(prefix + p, Shape{d, d});
    out.emplace_back(prefix + "b" + std::string(p + 1), Shape{d});
  }
}

void add_norm(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
              std::size_t d) {
  out.emplace_back(prefix + ".g", Shape{d});
  out.emplace_back(prefix + ".b", Shape{d});
}

void add_ff(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
            std::size_t d, std::size_t d_ff) {
  out.emplace_back(prefix + "ff.w1", Shape{d, d_ff});
  out.emplace_back(prefix + "ff.b1", Shape{d_ff});
  out.emplace_back(prefix + "ff.w2", Shape{d_ff, d});
  out.emplace_back(prefix + "ff.b2", Shape{d});
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::vector<std::pair<std::string, Shape>> weight_layout(const TransformerConfig& c) {
  const std::size_t d = c.attention.d_model;
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("tok_emb", Shape{c.vocab_size, d});
  if (c.arch == Architecture::kLmOnly) {
    out.emplace_back("pos_emb", Shape{c.max_tgt_len, d});
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const std::string p = "dec." + std::to_string(l) + ".";
      add_norm(out, p + "ln1", d);
      add_attention_weights(out, p + "self.", d);
      add_norm(out, p + "ln2", d);
      add_ff(out, p, d, c.d_ff);
    }
  } else {
    out.emplace_back("enc.pos_emb", Shape{c.max_src_len, d});
    out.emplace_back("dec.pos_emb", Shape{c.max_tgt_len, d});
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const std::string p = "enc." + std::to_string(l) + ".";
      add_norm(out, p + "ln1", d);
      add_attention_weights(out, p + "self.", d);
      add_norm(out, p + "ln2", d);
      add_ff(out, p, d, c.d_ff);
    }
    add_norm(out, "enc.ln", d);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      const std::string p = "dec." + std::to_string(l) + ".";
      add_norm(out, p + "ln1", d);
      add_attention_weights(out, p + "self.", d);
      add_norm(out, p + "ln2", d);
      add_attention_weights(out, p + "cross.", d);
      add_norm(out, p + "ln3", d);
      add_ff(out, p, d, c.d_ff);
    }
  }
  add_norm(out, "dec.ln", d);
  if (!c.tie_embeddings) out.emplace_back("out.w", Shape{d, c.vocab_size});
  out.emplace_back("out.b", Shape{c.vocab_size});
  return out;
}

const Tensor& Checkpoint::weight(const std::string& name) const {
  for (const auto& [n, t] : weights) {
    if (n == name) return t;
  }
  throw Error("checkpoint has no weight '" + name + "'");
}

Tensor& Checkpoint::weight(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const Checkpoint&>(*this).weight(name));
}

std::uint64_t Checkpoint::content_hash() const {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(&step), sizeof(step));
  for (const auto& [name, t] : weights) {
    crc = crc32(crc, reinterpret_cast<const Bytef*>(name.data()), static_cast<uInt>(name.size()));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(t.data().data()),
                static_cast<uInt>(t.size() * sizeof(double)));
  }
  return static_cast<std::uint64_t>(crc);
}

Checkpoint init_params(const TransformerConfig& config, std::uint64_t seed) {
  config.validate();
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.seed = seed;
  std::mt19937_64 rng(seed);
  for (auto& [name, shape] : weight_layout(config)) {
    Tensor t(shape);
    auto data = t.data();
    if (name == "tok_emb" || ends_with(name, "pos_emb")) {
      std::normal_distribution<double> normal(0.0, 0.02);
      for (double& v : data) v = normal(rng);
    } else if (ends_with(name, ".g")) {
      std::fill(data.begin(), data.end(), 1.0);
    } else if (shape.size() == 2) {
      const double a = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      std::uniform_real_distribution<double> uniform(-a, a);
      for (double& v : data) v = uniform(rng);
    }
    ckpt.weights.emplace_back(name, std::move(t));
  }
  return ckpt;
}

BoundModel::BoundModel(Tape& tape, const Checkpoint& ckpt, bool requires_grad)
    : tape_(&tape), config_(ckpt.config) {
  vars_.reserve(ckpt.weights.size());
  for (const auto& [name, t] : ckpt.weights) {
    index_.emplace(name, vars_.size());
    vars_.emplace_back(name, tape.leaf(t, requires_grad));
  }
}

Var BoundModel::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("model has no weight '" + name + "'");
  return vars_[it->second].second;
}

namespace {

MultiHeadParams attention_params(const BoundModel& m, const std::string& prefix) {
  return {m[prefix + "wq"], m[prefix + "bq"], m[prefix + "wk"], m[prefix + "bk"],
          m[prefix + "wv"], m[prefix + "bv"], m[prefix + "wo"], m[prefix + "bo"]};
}

Var norm(const BoundModel& m, Var x, const std::string& prefix) {
  return layer_norm(x, m[prefix + ".g"], m[prefix + ".b"]);
}

Var feed_forward(const BoundModel& m, Var x, const std::string& prefix) {
  Var h = relu(add(matmul(x, m[prefix + "ff.w1"]), m[prefix + "ff.b1"]));
  return add(matmul(h, m[prefix + "ff.w2"]), m[prefix + "ff.b2"]);
}

// Token plus learned absolute position embeddings: [B, n, d].
Var embed(const BoundModel& m, const TokenBatch& tokens, const std::string& pos_name) {
  const std::size_t d = m.config().attention.d_model;
  Var tok = reshape(embedding_lookup(m["tok_emb"], tokens.ids), {tokens.batch, tokens.len, d});
  std::vector<int> positions(tokens.len);
  for (std::size_t i = 0; i < tokens.len; ++i) positions[i] = static_cast<int>(i);
  return add(tok, embedding_lookup(m[pos_name], positions));
}

HeadMaskFn mask_fn(const ForwardOptions& opts, AttentionKind kind, std::size_t layer, bool causal) {
  if (!opts.masks || !opts.masks->active()) return {};
  MaskSlicer* slicer = opts.masks;
  return [slicer, kind, layer, causal](std::size_t h, std::size_t ql, std::size_t kl) {
    return slicer->get({kind, layer, h}, ql, kl, causal);
  };
}

Var attend(const BoundModel& m, Var x_q, Var x_kv, std::span<const std::size_t> q_len,
           std::span<const std::size_t> kv_len, bool causal, AttentionKind kind, std::size_t layer,
           const std::string& prefix, const ForwardOptions& opts) {
  MultiHeadCall call;
  call.x_q = x_q;
  call.x_kv = x_kv;
  call.q_lengths = q_len;
  call.kv_lengths = kv_len;
  call.causal = causal;
  call.head_masks = mask_fn(opts, kind, layer, causal);
  call.kind = kind;
  call.layer = layer;
  call.observer = opts.observer;
  return multi_head(call, attention_params(m, prefix), m.config().attention);
}

Var project_vocab(const BoundModel& m, Var x) {
  const auto& c = m.config();
  const std::size_t rows = x.value().size() / c.attention.d_model;
  Var flat = reshape(x, {rows, c.attention.d_model});
  Var logits = c.tie_embeddings ? matmul_nt(flat, m["tok_emb"]) : matmul(flat, m["out.w"]);
  return add(logits, m["out.b"]);
}

void check_batch(const TokenBatch& t, std::size_t max_len, const char* what) {
  if (t.len > max_len) {
    throw ShapeError(std::string(what) + " of length " + std::to_string(t.len) +
                     " exceeds the model maximum " + std::to_string(max_len));
  }
  if (t.lengths.size() != t.batch || t.ids.size() != t.batch * t.len) {
    throw ShapeError(std::string(what) + " batch is malformed");
  }
}

}  // namespace

Var lm_logits(const BoundModel& m, const TokenBatch& tokens, const ForwardOptions& opts) {
  const auto& c = m.config();
  if (c.arch != Architecture::kLmOnly) throw ConfigError("lm_logits needs an LM-only model");
  check_batch(tokens, c.max_tgt_len, "sequence");
  Var x = embed(m, tokens, "pos_emb");
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "dec." + std::to_string(l) + ".";
    Var h = norm(m, x, p + "ln1");
    x = add(x, attend(m, h, h, tokens.lengths, tokens.lengths, true, AttentionKind::kSelfDecoder,
                      l, p + "self.", opts));
    x = add(x, feed_forward(m, norm(m, x, p + "ln2"), p));
  }
  return project_vocab(m, norm(m, x, "dec.ln"));
}

Var encode(const BoundModel& m, const TokenBatch& src, const ForwardOptions& opts) {
  const auto& c = m.config();
  if (c.arch != Architecture::kEncDec) throw ConfigError("encode needs an encoder-decoder model");
  check_batch(src, c.max_src_len, "source");
  Var x = embed(m, src, "enc.pos_emb");
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "enc." + std::to_string(l) + ".";
    Var h = norm(m, x, p + "ln1");
    x = add(x, attend(m, h, h, src.lengths, src.lengths, false, AttentionKind::kSelfEncoder, l,
                      p + "self.", opts));
    x = add(x, feed_forward(m, norm(m, x, p + "ln2"), p));
  }
  return norm(m, x, "enc.ln");
}

Var decode(const BoundModel& m, Var memory, std::span<const std::size_t> src_lengths,
           const TokenBatch& tgt_in, const ForwardOptions& opts) {
  const auto& c = m.config();
  check_batch(tgt_in, c.max_tgt_len, "target");
  if (memory.shape()[0] != tgt_in.batch) throw ShapeError("decode: batch size mismatch");
  Var x = embed(m, tgt_in, "dec.pos_emb");
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "dec." + std::to_string(l) + ".";
    Var h = norm(m, x, p + "ln1");
    x = add(x, attend(m, h, h, tgt_in.lengths, tgt_in.lengths, true, AttentionKind::kSelfDecoder,
                      l, p + "self.", opts));
    h = norm(m, x, p + "ln2");
    x = add(x, attend(m, h, memory, tgt_in.lengths, src_lengths, false, AttentionKind::kCross, l,
                      p + "cross.", opts));
    x = add(x, feed_forward(m, norm(m, x, p + "ln3"), p));
  }
  return project_vocab(m, norm(m, x, "dec.ln"));
}

Var seq2seq_logits(const BoundModel& m, const TokenBatch& src, const TokenBatch& tgt_in,
                   const ForwardOptions& opts) {
  if (src.batch != tgt_in.batch) throw ShapeError("seq2seq: source and target batch differ");
  Var memory = encode(m, src, opts);
  return decode(m, memory, src.lengths, tgt_in, opts);
}

Tensor lm_forward(const Checkpoint& ckpt, std::span<const int> tokens, const MaskSet* masks,
                  const AttentionObserver* observer) {
  Tape tape;
  BoundModel m(tape, ckpt, false);
  MaskSlicer slicer(masks, ckpt.config.attention.neg_fill);
  ForwardOptions opts{masks ? &slicer : nullptr, observer};
  return lm_logits(m, TokenBatch::from_rows({{tokens.begin(), tokens.end()}}), opts).value();
}

Tensor seq2seq_forward(const Checkpoint& ckpt, std::span<const int> src,
                       std::span<const int> tgt_in, const MaskSet* masks,
                       const AttentionObserver* observer) {
  Tape tape;
  BoundModel m(tape, ckpt, false);
  MaskSlicer slicer(masks, ckpt.config.attention.neg_fill);
  ForwardOptions opts{masks ? &slicer : nullptr, observer};
  return seq2seq_logits(m, TokenBatch::from_rows({{src.begin(), src.end()}}),
                        TokenBatch::from_rows({{tgt_in.begin(), tgt_in.end()}}), opts)
      .value();
}

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

std::vector<std::vector<int>> greedy_decode_batch(const Checkpoint& ckpt,
                                                  const std::vector<std::vector<int>>& srcs,
                                                  int bos_id, int eos_id, std::size_t max_len,
                                                  const MaskSet* masks) {
  const auto& c = ckpt.config;
  if (max_len > c.max_tgt_len) {
    throw ShapeError("greedy_decode: max_len exceeds the model target length");
  }
  std::vector<std::vector<int>> out(srcs.size());
  if (srcs.empty() || max_len == 0) return out;
  Tape tape;
  BoundModel m(tape, ckpt, false);
  MaskSlicer slicer(masks, c.attention.neg_fill);
  ForwardOptions opts{masks ? &slicer : nullptr, nullptr};
  const TokenBatch src = TokenBatch::from_rows(srcs);
  Var memory = encode(m, src, opts);
  const std::size_t B = srcs.size();
  std::vector<std::vector<int>> prefix(B, std::vector<int>{bos_id});
  std::vector<bool> done(B, false);
  const std::size_t V = c.vocab_size;
  for (std::size_t t = 1; t <= max_len; ++t) {
    Var logits = decode(m, memory, src.lengths, TokenBatch::from_rows(prefix), opts);
    const auto& lv = logits.value();
    bool all_done = true;
    for (std::size_t b = 0; b < B; ++b) {
      const auto row = lv.data().subspan((b * t + t - 1) * V, V);
      const int next = static_cast<int>(argmax(row));
      prefix[b].push_back(next);
      if (!done[b]) {
        out[b].push_back(next);
        if (next == eos_id) done[b] = true;
      }
      all_done = all_done && done[b];
    }
    if (all_done) break;
  }
  return out;
}

std::vector<int> greedy_decode(const Checkpoint& ckpt, std::span<const int> src, int bos_id,
                               int eos_id, std::size_t max_len, const MaskSet* masks) {
  return greedy_decode_batch(ckpt, {{src.begin(), src.end()}}, bos_id, eos_id, max_len, masks)[0];
}

}  // namespace attnprune
