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

#include "attnprune/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "attnprune/cost_model.hpp"
#include "attnprune/error.hpp"

namespace attnprune {

std::string_view to_string(Activation a) {
  return a == Activation::kSoftmax ? "softmax" : "entmax15";
}

std::string_view to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::kSelfEncoder: return "self_encoder";
    case AttentionKind::kSelfDecoder: return "self_decoder";
    case AttentionKind::kCross: return "cross";
  }
  return "unknown";
}

Activation parse_activation(std::string_view s) {
  if (s == "softmax") return Activation::kSoftmax;
  if (s == "entmax15" || s == "entmax") return Activation::kEntmax15;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

AttentionKind parse_kind(std::string_view s) {
  if (s == "self_encoder" || s == "SelfEncoder") return AttentionKind::kSelfEncoder;
  if (s == "self_decoder" || s == "SelfDecoder") return AttentionKind::kSelfDecoder;
  if (s == "cross" || s == "Cross") return AttentionKind::kCross;
  throw ConfigError("unknown attention kind '" + std::string(s) + "'");
}

AttentionConfig AttentionConfig::make(std::size_t d_model, std::size_t n_heads,
                                      Activation activation) {
  AttentionConfig c;
  c.d_model = d_model;
  c.n_heads = n_heads;
  c.d_k = n_heads ? d_model / n_heads : 0;
  c.d_v = c.d_k;
  c.activation = activation;
  c.validate();
  return c;
}

void AttentionConfig::validate() const {
  if (n_heads == 0 || d_model == 0) throw ConfigError("attention needs d_model, n_heads >= 1");
  if (d_k * n_heads != d_model || d_v * n_heads != d_model) {
    throw ConfigError("attention: d_k * n_heads and d_v * n_heads must equal d_model");
  }
  if (!(neg_fill <= -1e6)) throw ConfigError("attention: neg_fill must be <= -1e6");
}

// ---- AdditiveMask ----------------------------------------------------------

AdditiveMask::AdditiveMask(std::size_t rows, std::size_t cols, double neg_fill)
    : rows_(rows), cols_(cols), neg_fill_(neg_fill), values_({rows, cols}) {}

void AdditiveMask::set_masked(std::size_t i, std::size_t j, bool masked) {
  values_[i * cols_ + j] = masked ? neg_fill_ : 0.0;
}

std::size_t AdditiveMask::masked_count() const {
  return static_cast<std::size_t>(
      std::count_if(values_.data().begin(), values_.data().end(),
                    [](double v) { return v != 0.0; }));
}

AdditiveMask AdditiveMask::combine(const AdditiveMask& other) const {
  if (rows_ != other.rows_ || cols_ != other.cols_) {
    throw ShapeError("cannot combine masks of different shapes");
  }
  AdditiveMask out(rows_, cols_, std::min(neg_fill_, other.neg_fill_));
  for (std::size_t i = 0; i < values_.size(); ++i) {
    out.values_[i] = std::min(values_[i], other.values_[i]);
  }
  return out;
}

void AdditiveMask::validate() const {
  for (std::size_t i = 0; i < rows_; ++i) {
    bool open = false;
    for (std::size_t j = 0; j < cols_ && !open; ++j) open = !masked(i, j);
    if (!open) {
      throw MaskError("additive mask row " + std::to_string(i) + " is fully masked");
    }
  }
}

AdditiveMask build_causal_mask(std::size_t n, double neg_fill) {
  if (n == 0) throw ShapeError("causal mask needs n >= 1");
  AdditiveMask mask(n, n, neg_fill);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) mask.set_masked(i, j);
  return mask;
}

// ---- normalizers -----------------------------------------------------------

void softmax_row(std::span<const double> logits, std::span<double> out) {
  if (logits.empty()) return;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  const double inv = 1.0 / z;
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] *= inv;
}

void entmax15_row(std::span<const double> logits, std::span<double> out) {
  const std::size_t n = logits.size();
  if (n == 0) return;
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) {
    if (!std::isfinite(z)) throw NumericalError("entmax15: non-finite logit");
    mx = std::max(mx, z);
  }
  const double top = mx / 2.0;
  auto mass = [&](double tau) {
    double s = 0.0;
    for (double z : logits) {
      const double u = z / 2.0 - tau;
      if (u > 0.0) s += u * u;
    }
    return s;
  };
  double lo = top - 1.0;  // mass(lo) >= 1 up to rounding
  double hi = top;        // mass(hi) == 0
  // top - 1 can round so the max entry contributes just under 1.
  for (double pad = 1e-15 * std::max(1.0, std::abs(top)); mass(lo) < 1.0 && pad < 1.0; pad *= 2) {
    lo = top - 1.0 - pad;
  }
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mass(mid) >= 1.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  double tau = 0.5 * (lo + hi);
  if (!(mass(lo) >= 1.0) || !std::isfinite(tau)) {
    throw NumericalError("entmax15: bisection failed to bracket the threshold");
  }

  // Closed form on the support found above: k tau^2 - 2 tau S1 + S2 - 1 = 0.
  double s1 = 0.0, s2 = 0.0;
  std::size_t k = 0;
  for (double z : logits) {
    const double u = z / 2.0;
    if (u > tau) {
      s1 += u;
      s2 += u * u;
      ++k;
    }
  }
  if (k > 0) {
    const double kd = static_cast<double>(k);
    const double disc = s1 * s1 - kd * (s2 - 1.0);
    if (disc >= 0.0) {
      const double exact = (s1 - std::sqrt(disc)) / kd;
      bool consistent = true;
      for (double z : logits) {
        const double u = z / 2.0;
        const bool inside = u > tau;
        if (inside != (u > exact)) {
          consistent = false;
          break;
        }
      }
      if (consistent) tau = exact;
    }
  }

  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = logits[i] / 2.0 - tau;
    out[i] = u > 0.0 ? u * u : 0.0;
    sum += out[i];
  }
  if (!(sum > 0.0)) throw NumericalError("entmax15: empty support");
  if (sum != 1.0) {
    const double inv = 1.0 / sum;
    for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
  }
}

void entmax15_backward_row(std::span<const double> p, std::span<const double> upstream,
                           std::span<double> downstream) {
  const std::size_t n = p.size();
  double gs = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = p[i] > 0.0 ? std::sqrt(p[i]) : 0.0;
    gs += upstream[i] * s;
    ss += s;
  }
  if (!(ss > 0.0)) throw NumericalError("entmax15 backward: zero support");
  const double shift = gs / ss;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = p[i] > 0.0 ? std::sqrt(p[i]) : 0.0;
    downstream[i] = s * (upstream[i] - shift);
  }
}

namespace {

std::size_t row_width(const Tensor& t) {
  if (t.rank() == 0) throw ShapeError("row normalization needs rank >= 1");
  return t.shape().back();
}

template <typename RowFn>
Tensor map_rows(const Tensor& in, RowFn fn) {
  Tensor out(in.shape());
  const std::size_t w = row_width(in);
  if (w == 0) return out;
  const std::size_t rows = in.size() / w;
  for (std::size_t r = 0; r < rows; ++r) {
    fn(in.data().subspan(r * w, w), out.data().subspan(r * w, w));
  }
  return out;
}

}  // namespace

Tensor softmax_rows(const Tensor& logits) { return map_rows(logits, softmax_row); }
Tensor entmax15_rows(const Tensor& logits) { return map_rows(logits, entmax15_row); }

Tensor entmax15_backward(const Tensor& p, const Tensor& upstream) {
  if (p.shape() != upstream.shape()) throw ShapeError("entmax15_backward shape mismatch");
  Tensor out(p.shape());
  const std::size_t w = row_width(p);
  if (w == 0) return out;
  for (std::size_t r = 0; r < p.size() / w; ++r) {
    entmax15_backward_row(p.data().subspan(r * w, w), upstream.data().subspan(r * w, w),
                          out.data().subspan(r * w, w));
  }
  return out;
}

Var softmax_rows(Var logits) {
  Tensor out = softmax_rows(logits.value());
  const std::size_t w = row_width(out);
  return logits.tape->record(std::move(out), {logits}, [w](BackwardContext& ctx) {
    auto p = ctx.output().data();
    auto g = ctx.grad_output();
    auto gz = ctx.input_grad(0);
    if (w == 0) return;
    for (std::size_t r = 0; r < p.size() / w; ++r) {
      const std::size_t base = r * w;
      double dot = 0.0;
      for (std::size_t i = 0; i < w; ++i) dot += g[base + i] * p[base + i];
      for (std::size_t i = 0; i < w; ++i) gz[base + i] += p[base + i] * (g[base + i] - dot);
    }
  });
}

Var entmax15_rows(Var logits) {
  Tensor out = entmax15_rows(logits.value());
  const std::size_t w = row_width(out);
  return logits.tape->record(std::move(out), {logits}, [w](BackwardContext& ctx) {
    auto p = ctx.output().data();
    auto g = ctx.grad_output();
    auto gz = ctx.input_grad(0);
    if (w == 0) return;
    std::vector<double> tmp(w);
    for (std::size_t r = 0; r < p.size() / w; ++r) {
      entmax15_backward_row(p.subspan(r * w, w), g.subspan(r * w, w), tmp);
      for (std::size_t i = 0; i < w; ++i) gz[r * w + i] += tmp[i];
    }
  });
}

Var normalize_rows(Var logits, Activation activation) {
  return activation == Activation::kSoftmax ? softmax_rows(logits) : entmax15_rows(logits);
}

AttentionResult scaled_dot_product(Var q, Var k, Var v, const AdditiveMask* mask,
                                   Activation activation) {
  const Shape& qs = q.shape();
  const Shape& ks = k.shape();
  const Shape& vs = v.shape();
  if (qs.size() < 2 || ks.size() < 2 || vs.size() < 2) {
    throw ShapeError("scaled_dot_product needs rank >= 2 operands");
  }
  const std::size_t n = qs[qs.size() - 2];
  const std::size_t m = ks[ks.size() - 2];
  const std::size_t dk = qs.back();
  if (ks.back() != dk) throw ShapeError("scaled_dot_product: Q and K widths differ");
  if (vs[vs.size() - 2] != m) throw ShapeError("scaled_dot_product: K and V lengths differ");
  Var scores = matmul_nt(q, k);
  if (mask) {
    if (mask->rows() != n || mask->cols() != m) {
      throw ShapeError("scaled_dot_product: mask is " + std::to_string(mask->rows()) + "x" +
                       std::to_string(mask->cols()) + ", expected " + std::to_string(n) +
                       "x" + std::to_string(m));
    }
    mask->validate();
    scores = add_constant(scores, mask->values());
  }
  scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(dk)));
  Var weights = normalize_rows(scores, activation);
  return {matmul(weights, v), weights};
}

// ---- multi-head ------------------------------------------------------------

namespace {

Var project(Var x, Var w, Var b) { return add(matmul(x, w), b); }

}  // namespace

Var multi_head(const MultiHeadCall& call, const MultiHeadParams& params,
               const AttentionConfig& config) {
  config.validate();
  const Shape& xs = call.x_q.shape();
  const Shape& ys = call.x_kv.shape();
  if (xs.size() != 3 || ys.size() != 3 || xs[0] != ys[0] || xs[2] != config.d_model ||
      ys[2] != config.d_model) {
    throw ShapeError("multi_head expects [B, n, d] and [B, m, d] inputs, got " +
                     shape_str(xs) + " and " + shape_str(ys));
  }
  const std::size_t B = xs[0], n = xs[1], m = ys[1];
  const std::size_t H = config.n_heads, dk = config.d_k, dv = config.d_v;
  if (!call.q_lengths.empty() && call.q_lengths.size() != B) {
    throw ShapeError("multi_head: q_lengths size differs from batch");
  }
  if (!call.kv_lengths.empty() && call.kv_lengths.size() != B) {
    throw ShapeError("multi_head: kv_lengths size differs from batch");
  }
  auto q_len = [&](std::size_t b) { return call.q_lengths.empty() ? n : call.q_lengths[b]; };
  auto k_len = [&](std::size_t b) { return call.kv_lengths.empty() ? m : call.kv_lengths[b]; };

  // Combined additive mask [B, H, n, m].
  bool any_mask = call.causal || static_cast<bool>(call.head_masks);
  for (std::size_t b = 0; b < B && !any_mask; ++b) any_mask = k_len(b) < m;
  Tensor mask;
  if (any_mask) {
    mask = Tensor({B, H, n, m});
    auto mv = mask.data();
    const double fill = config.neg_fill;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t ql = q_len(b), kl = k_len(b);
      if (ql > n || kl > m) throw ShapeError("multi_head: valid length exceeds padded length");
      for (std::size_t h = 0; h < H; ++h) {
        const AdditiveMask* prune = call.head_masks ? call.head_masks(h, ql, kl) : nullptr;
        if (prune && (prune->rows() != ql || prune->cols() != kl)) {
          throw ShapeError("multi_head: head mask is " + std::to_string(prune->rows()) + "x" +
                           std::to_string(prune->cols()) + ", expected " +
                           std::to_string(ql) + "x" + std::to_string(kl));
        }
        double* base = mv.data() + (b * H + h) * n * m;
        for (std::size_t i = 0; i < n; ++i) {
          bool open = false;
          for (std::size_t j = 0; j < m; ++j) {
            bool masked = j >= kl || (call.causal && j > i);
            if (!masked && prune && i < ql) masked = prune->masked(i, j);
            base[i * m + j] = masked ? fill : 0.0;
            open = open || !masked;
          }
          if (!open && i < ql) {
            throw MaskError("multi_head: query row " + std::to_string(i) + " of head " +
                            std::to_string(h) + " has every key masked");
          }
        }
      }
    }
  }

  Var q = project(call.x_q, params.w_q, params.b_q);
  Var k = project(call.x_kv, params.w_k, params.b_k);
  Var v = project(call.x_kv, params.w_v, params.b_v);
  q = swap_middle_axes(reshape(q, {B, n, H, dk}));
  k = swap_middle_axes(reshape(k, {B, m, H, dk}));
  v = swap_middle_axes(reshape(v, {B, m, H, dv}));

  Var scores = matmul_nt(q, k);
  if (any_mask) scores = add_constant(scores, mask);
  scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(dk)));
  Var weights = normalize_rows(scores, config.activation);
  Var heads = matmul(weights, v);
  Var merged = reshape(swap_middle_axes(heads), {B, n, H * dv});
  Var out = project(merged, params.w_o, params.b_o);

  if (MacCounter* counter = active_mac_counter()) {
    const std::size_t d = config.d_model;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t ql = q_len(b), kl = k_len(b);
      counter->projections += ql * d * d + 2 * kl * d * d;
      counter->output += ql * d * d;
      for (std::size_t h = 0; h < H; ++h) {
        const double* base = any_mask ? mask.data().data() + (b * H + h) * n * m : nullptr;
        for (std::size_t i = 0; i < ql; ++i) {
          for (std::size_t j = 0; j < kl; ++j) {
            counter->scores += dk;
            if (!base || base[i * m + j] == 0.0) counter->weighted_values += dv;
          }
        }
      }
    }
  }

  if (call.observer && *call.observer) {
    const Tensor& w = weights.value();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        AttentionEvent ev;
        ev.kind = call.kind;
        ev.layer = call.layer;
        ev.head = h;
        ev.batch_index = b;
        ev.rows = n;
        ev.cols = m;
        ev.q_len = q_len(b);
        ev.k_len = k_len(b);
        ev.causal = call.causal;
        ev.weights = w.data().subspan((b * H + h) * n * m, n * m);
        (*call.observer)(ev);
      }
    }
  }
  return out;
}

Var multi_head(Var x_q, Var x_kv, std::span<const AdditiveMask> head_masks, bool causal,
               const MultiHeadParams& params, const AttentionConfig& config,
               const AttentionObserver* observer) {
  if (x_q.shape().size() != 2 || x_kv.shape().size() != 2) {
    throw ShapeError("multi_head expects [n, d] and [m, d] inputs");
  }
  if (!head_masks.empty() && head_masks.size() != config.n_heads) {
    throw ShapeError("multi_head: " + std::to_string(head_masks.size()) +
                     " head masks for " + std::to_string(config.n_heads) + " heads");
  }
  const std::size_t n = x_q.shape()[0], m = x_kv.shape()[0], d = x_q.shape()[1];
  MultiHeadCall call;
  call.x_q = reshape(x_q, {1, n, d});
  call.x_kv = x_q.id == x_kv.id ? call.x_q : reshape(x_kv, {1, m, x_kv.shape()[1]});
  call.causal = causal;
  call.observer = observer;
  if (!head_masks.empty()) {
    call.head_masks = [head_masks](std::size_t h, std::size_t, std::size_t) {
      return &head_masks[h];
    };
  }
  Var out = multi_head(call, params, config);
  return reshape(out, {n, d});
}

}  // namespace attnprune
