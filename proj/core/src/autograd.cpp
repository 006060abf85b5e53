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

#include "attnprune/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "attnprune/error.hpp"

namespace attnprune {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid() || a.tape != b.tape) {
    throw Error("operands live on different tapes");
  }
  return *a.tape;
}

// C (rows x cols) += op(A) * op(B), with op = transpose when flagged.
void gemm_acc(const double* a, std::size_t a_rows, std::size_t a_cols, bool ta,
              const double* b, std::size_t b_rows, std::size_t b_cols, bool tb,
              double* c) {
  ConstMap A(a, static_cast<Eigen::Index>(a_rows), static_cast<Eigen::Index>(a_cols));
  ConstMap B(b, static_cast<Eigen::Index>(b_rows), static_cast<Eigen::Index>(b_cols));
  const Eigen::Index rows = static_cast<Eigen::Index>(ta ? a_cols : a_rows);
  const Eigen::Index cols = static_cast<Eigen::Index>(tb ? b_rows : b_cols);
  MutMap C(c, rows, cols);
  if (!ta && !tb) {
    C.noalias() += A * B;
  } else if (!ta && tb) {
    C.noalias() += A * B.transpose();
  } else if (ta && !tb) {
    C.noalias() += A.transpose() * B;
  } else {
    C.noalias() += A.transpose() * B.transpose();
  }
}

struct MatmulPlan {
  std::size_t batch = 1;
  std::size_t n = 0, k = 0, m = 0;
  bool a_batched = false, b_batched = false;
  Shape out_shape;
};

Shape batch_of(const Shape& s) { return Shape(s.begin(), s.end() - 2); }

MatmulPlan plan_matmul(const Shape& as, const Shape& bs, bool b_transposed) {
  if (as.size() < 2 || bs.size() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(as) +
                     " and " + shape_str(bs));
  }
  MatmulPlan p;
  p.n = as[as.size() - 2];
  p.k = as[as.size() - 1];
  const std::size_t bk = b_transposed ? bs[bs.size() - 1] : bs[bs.size() - 2];
  p.m = b_transposed ? bs[bs.size() - 2] : bs[bs.size() - 1];
  if (p.k != bk) {
    throw ShapeError("matmul inner dimension mismatch: " + shape_str(as) +
                     " x " + shape_str(bs));
  }
  const Shape ab = batch_of(as);
  const Shape bb = batch_of(bs);
  Shape out_batch;
  if (ab == bb) {
    out_batch = ab;
    p.a_batched = p.b_batched = !ab.empty();
  } else if (bb.empty()) {
    out_batch = ab;
    p.a_batched = true;
  } else if (ab.empty()) {
    out_batch = bb;
    p.b_batched = true;
  } else {
    throw ShapeError("matmul batch dimensions not broadcastable: " +
                     shape_str(as) + " x " + shape_str(bs));
  }
  p.batch = shape_numel(out_batch);
  p.out_shape = out_batch;
  p.out_shape.push_back(p.n);
  p.out_shape.push_back(p.m);
  return p;
}

Var matmul_impl(Var a, Var b, bool b_transposed) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const MatmulPlan p = plan_matmul(av.shape(), bv.shape(), b_transposed);
  Tensor out(p.out_shape);
  const std::size_t a_stride = p.n * p.k;
  const std::size_t b_stride = p.k * p.m;
  const std::size_t c_stride = p.n * p.m;
  const std::size_t b_rows = b_transposed ? p.m : p.k;
  const std::size_t b_cols = b_transposed ? p.k : p.m;

  if (p.a_batched && !p.b_batched) {
    // Fold the batch into the row dimension: one large product.
    gemm_acc(av.data().data(), p.batch * p.n, p.k, false, bv.data().data(),
             b_rows, b_cols, b_transposed, out.data().data());
  } else {
    for (std::size_t i = 0; i < p.batch; ++i) {
      gemm_acc(av.data().data() + (p.a_batched ? i * a_stride : 0), p.n, p.k, false,
               bv.data().data() + (p.b_batched ? i * b_stride : 0), b_rows, b_cols,
               b_transposed, out.data().data() + i * c_stride);
    }
  }

  return tape.record(std::move(out), {a, b}, [p, b_transposed, a_stride, b_stride,
                                               c_stride, b_rows, b_cols](BackwardContext& ctx) {
    const double* g = ctx.grad_output().data();
    const double* ad = ctx.input(0).data().data();
    const double* bd = ctx.input(1).data().data();
    if (ctx.needs_grad(0)) {
      double* ga = ctx.input_grad(0).data();
      // dA = dC * op(B)^T
      if (p.a_batched && !p.b_batched) {
        gemm_acc(g, p.batch * p.n, p.m, false, bd, b_rows, b_cols, !b_transposed, ga);
      } else {
        for (std::size_t i = 0; i < p.batch; ++i) {
          gemm_acc(g + i * c_stride, p.n, p.m, false,
                   bd + (p.b_batched ? i * b_stride : 0), b_rows, b_cols,
                   !b_transposed, ga + (p.a_batched ? i * a_stride : 0));
        }
      }
    }
    if (ctx.needs_grad(1)) {
      double* gb = ctx.input_grad(1).data();
      if (p.a_batched && !p.b_batched) {
        if (b_transposed) {
          // dB = dC^T * A
          gemm_acc(g, p.batch * p.n, p.m, true, ad, p.batch * p.n, p.k, false, gb);
        } else {
          // dB = A^T * dC
          gemm_acc(ad, p.batch * p.n, p.k, true, g, p.batch * p.n, p.m, false, gb);
        }
      } else {
        for (std::size_t i = 0; i < p.batch; ++i) {
          const double* ai = ad + (p.a_batched ? i * a_stride : 0);
          const double* gi = g + i * c_stride;
          double* gbi = gb + (p.b_batched ? i * b_stride : 0);
          if (b_transposed) {
            gemm_acc(gi, p.n, p.m, true, ai, p.n, p.k, false, gbi);
          } else {
            gemm_acc(ai, p.n, p.k, true, gi, p.n, p.m, false, gbi);
          }
        }
      }
    }
  });
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

void check_suffix(const Shape& b, const Shape& a, const char* op) {
  if (!is_suffix(b, a)) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(b) +
                     " does not broadcast onto " + shape_str(a));
  }
}

}  // namespace

// ---- Var / Tape ----------------------------------------------------------

const Tensor& Var::value() const { return tape->value(*this); }
bool Var::requires_grad() const { return tape->requires_grad(*this); }

const Tensor& BackwardContext::output() const { return tape_.nodes_[node_].value; }

std::span<const double> BackwardContext::grad_output() const {
  return tape_.nodes_[node_].grad;
}

std::size_t BackwardContext::num_inputs() const {
  return tape_.nodes_[node_].inputs.size();
}

const Tensor& BackwardContext::input(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(k)].value;
}

bool BackwardContext::needs_grad(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(k)].requires_grad;
}

std::span<double> BackwardContext::input_grad(std::size_t k) {
  return tape_.grad_buffer(tape_.nodes_[node_].inputs.at(k));
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape != this) throw Error("input recorded on a different tape");
    node.inputs.push_back(in.id);
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

std::vector<double>& Tape::grad_buffer(std::uint32_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty() && node.value.size() > 0) {
    node.grad.assign(node.value.size(), 0.0);
  }
  return node.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw Error("loss belongs to a different tape");
  if (consumed_) throw Error("tape already consumed by a backward pass");
  if (nodes_[loss.id].value.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " +
                     shape_str(nodes_[loss.id].value.shape()));
  }
  consumed_ = true;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::uint32_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || !node.backward || node.grad.empty()) continue;
    BackwardContext ctx(*this, i);
    node.backward(ctx);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& node = nodes_[v.id];
  if (node.grad.empty()) return Tensor(node.value.shape());
  return Tensor(node.value.shape(), node.grad);
}

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b) { return matmul_impl(a, b, false); }
Var matmul_nt(Var a, Var b) { return matmul_impl(a, b, true); }

Var elementwise(ElementwiseOp op, Var a, std::optional<Var> b, double scalar) {
  const Tensor& av = a.value();
  const std::size_t n = av.size();
  Tape& tape = *a.tape;

  switch (op) {
    case ElementwiseOp::kAdd:
    case ElementwiseOp::kSub:
    case ElementwiseOp::kMul: {
      if (!b) throw Error("binary elementwise op needs a second operand");
      same_tape(a, *b);
      const Tensor& bv = b->value();
      const char* name = op == ElementwiseOp::kAdd   ? "add"
                         : op == ElementwiseOp::kSub ? "sub"
                                                     : "mul";
      if (op == ElementwiseOp::kSub && bv.shape() != av.shape()) {
        throw ShapeError(std::string("sub: shape mismatch ") +
                         shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
      }
      check_suffix(bv.shape(), av.shape(), name);
      const std::size_t bn = bv.size();
      Tensor out(av.shape());
      auto o = out.data();
      auto x = av.data();
      auto y = bv.data();
      for (std::size_t i = 0; i < n; ++i) {
        const double yi = y[bn ? i % bn : 0];
        o[i] = op == ElementwiseOp::kAdd   ? x[i] + yi
               : op == ElementwiseOp::kSub ? x[i] - yi
                                           : x[i] * yi;
      }
      return tape.record(std::move(out), {a, *b}, [op, n, bn](BackwardContext& ctx) {
        auto g = ctx.grad_output();
        if (ctx.needs_grad(0)) {
          auto ga = ctx.input_grad(0);
          if (op == ElementwiseOp::kMul) {
            auto y = ctx.input(1).data();
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i % bn];
          } else {
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
          }
        }
        if (ctx.needs_grad(1)) {
          auto gb = ctx.input_grad(1);
          if (op == ElementwiseOp::kMul) {
            auto x = ctx.input(0).data();
            for (std::size_t i = 0; i < n; ++i) gb[i % bn] += g[i] * x[i];
          } else {
            const double sign = op == ElementwiseOp::kSub ? -1.0 : 1.0;
            for (std::size_t i = 0; i < n; ++i) gb[i % bn] += sign * g[i];
          }
        }
      });
    }
    default:
      break;
  }

  Tensor out(av.shape());
  auto o = out.data();
  auto x = av.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    switch (op) {
      case ElementwiseOp::kScale: o[i] = v * scalar; break;
      case ElementwiseOp::kRelu: o[i] = v > 0.0 ? v : 0.0; break;
      case ElementwiseOp::kExp: o[i] = std::exp(v); break;
      case ElementwiseOp::kLog:
        if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
        o[i] = std::log(v);
        break;
      case ElementwiseOp::kSqrt:
        if (v < 0.0) throw DomainError("sqrt of negative value " + std::to_string(v));
        o[i] = std::sqrt(v);
        break;
      case ElementwiseOp::kMaxScalar: o[i] = v > scalar ? v : scalar; break;
      default: break;
    }
  }
  return tape.record(std::move(out), {a}, [op, n, scalar](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    auto ga = ctx.input_grad(0);
    auto x = ctx.input(0).data();
    auto y = ctx.output().data();
    for (std::size_t i = 0; i < n; ++i) {
      double d = 0.0;
      switch (op) {
        case ElementwiseOp::kScale: d = scalar; break;
        case ElementwiseOp::kRelu: d = x[i] > 0.0 ? 1.0 : 0.0; break;
        case ElementwiseOp::kExp: d = y[i]; break;
        case ElementwiseOp::kLog: d = 1.0 / x[i]; break;
        case ElementwiseOp::kSqrt: d = 0.5 / y[i]; break;
        case ElementwiseOp::kMaxScalar: d = x[i] > scalar ? 1.0 : 0.0; break;
        default: break;
      }
      ga[i] += g[i] * d;
    }
  });
}

Var add(Var a, Var b) { return elementwise(ElementwiseOp::kAdd, a, b); }
Var sub(Var a, Var b) { return elementwise(ElementwiseOp::kSub, a, b); }
Var mul(Var a, Var b) { return elementwise(ElementwiseOp::kMul, a, b); }
Var scale(Var a, double s) { return elementwise(ElementwiseOp::kScale, a, std::nullopt, s); }
Var relu(Var a) { return elementwise(ElementwiseOp::kRelu, a); }
Var exp(Var a) { return elementwise(ElementwiseOp::kExp, a); }
Var log(Var a) { return elementwise(ElementwiseOp::kLog, a); }
Var sqrt(Var a) { return elementwise(ElementwiseOp::kSqrt, a); }
Var max_scalar(Var a, double s) {
  return elementwise(ElementwiseOp::kMaxScalar, a, std::nullopt, s);
}

Var add_constant(Var a, const Tensor& c) {
  const Tensor& av = a.value();
  check_suffix(c.shape(), av.shape(), "add_constant");
  const std::size_t n = av.size();
  const std::size_t cn = c.size();
  Tensor out(av.shape());
  auto o = out.data();
  auto x = av.data();
  auto y = c.data();
  for (std::size_t i = 0; i < n; ++i) o[i] = x[i] + y[cn ? i % cn : 0];
  return a.tape->record(std::move(out), {a}, [n](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    auto ga = ctx.input_grad(0);
    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
  });
}

Var reduce(ReduceOp op, Var a, std::size_t axis) {
  const Tensor& av = a.value();
  const Shape& s = av.shape();
  if (axis >= s.size()) {
    throw ShapeError("reduce axis " + std::to_string(axis) +
                     " invalid for shape " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  if (op == ReduceOp::kMax && len == 0) throw ShapeError("max over empty axis");

  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);
  std::vector<std::size_t> argmax;
  if (op == ReduceOp::kMax) argmax.assign(outer * inner, 0);
  auto x = av.data();
  auto o = out.data();
  for (std::size_t po = 0; po < outer; ++po) {
    for (std::size_t pi = 0; pi < inner; ++pi) {
      const std::size_t base = po * len * inner + pi;
      double acc = op == ReduceOp::kMax ? x[base] : 0.0;
      std::size_t best = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const double v = x[base + j * inner];
        if (op == ReduceOp::kMax) {
          if (v > acc) {
            acc = v;
            best = j;
          }
        } else {
          acc += v;
        }
      }
      if (op == ReduceOp::kMean) acc = len ? acc / static_cast<double>(len) : 0.0;
      o[po * inner + pi] = acc;
      if (op == ReduceOp::kMax) argmax[po * inner + pi] = best;
    }
  }
  return a.tape->record(std::move(out), {a}, [op, outer, inner, len,
                                               argmax = std::move(argmax)](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    auto ga = ctx.input_grad(0);
    const double w = op == ReduceOp::kMean && len ? 1.0 / static_cast<double>(len) : 1.0;
    for (std::size_t po = 0; po < outer; ++po) {
      for (std::size_t pi = 0; pi < inner; ++pi) {
        const std::size_t r = po * inner + pi;
        const std::size_t base = po * len * inner + pi;
        if (op == ReduceOp::kMax) {
          ga[base + argmax[r] * inner] += g[r];
        } else {
          for (std::size_t j = 0; j < len; ++j) ga[base + j * inner] += g[r] * w;
        }
      }
    }
  });
}

Var sum_all(Var a) {
  const Tensor& av = a.value();
  double acc = 0.0;
  for (double v : av.data()) acc += v;
  const std::size_t n = av.size();
  return a.tape->record(Tensor::scalar(acc), {a}, [n](BackwardContext& ctx) {
    const double g = ctx.grad_output()[0];
    auto ga = ctx.input_grad(0);
    for (std::size_t i = 0; i < n; ++i) ga[i] += g;
  });
}

Var reshape(Var a, Shape shape) {
  const Tensor& av = a.value();
  if (shape_numel(shape) != av.size()) {
    throw ShapeError("cannot reshape " + shape_str(av.shape()) + " to " + shape_str(shape));
  }
  const std::size_t n = av.size();
  return a.tape->record(av.reshaped(std::move(shape)), {a}, [n](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    auto ga = ctx.input_grad(0);
    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
  });
}

Var swap_middle_axes(Var a) {
  const Tensor& av = a.value();
  const Shape& s = av.shape();
  if (s.size() != 4) throw ShapeError("swap_middle_axes needs rank 4, got " + shape_str(s));
  const std::size_t A = s[0], B = s[1], C = s[2], D = s[3];
  Tensor out({A, C, B, D});
  auto x = av.data();
  auto o = out.data();
  for (std::size_t i = 0; i < A; ++i)
    for (std::size_t j = 0; j < B; ++j)
      for (std::size_t k = 0; k < C; ++k)
        std::copy_n(x.data() + ((i * B + j) * C + k) * D, D,
                    o.data() + ((i * C + k) * B + j) * D);
  return a.tape->record(std::move(out), {a}, [A, B, C, D](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    auto ga = ctx.input_grad(0);
    for (std::size_t i = 0; i < A; ++i)
      for (std::size_t j = 0; j < B; ++j)
        for (std::size_t k = 0; k < C; ++k) {
          const double* src = g.data() + ((i * C + k) * B + j) * D;
          double* dst = ga.data() + ((i * B + j) * C + k) * D;
          for (std::size_t l = 0; l < D; ++l) dst[l] += src[l];
        }
  });
}

Var embedding_lookup(Var table, std::span<const int> ids) {
  const Tensor& tv = table.value();
  if (tv.rank() != 2) throw ShapeError("embedding table must be [V, d]");
  const std::size_t V = tv.dim(0), d = tv.dim(1);
  std::vector<int> rows(ids.begin(), ids.end());
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= V) {
      throw DomainError("embedding id " + std::to_string(rows[i]) +
                        " out of range [0, " + std::to_string(V) + ")");
    }
    std::copy_n(tv.data().data() + static_cast<std::size_t>(rows[i]) * d, d,
                out.data().data() + i * d);
  }
  return table.tape->record(std::move(out), {table},
                            [rows = std::move(rows), d](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    auto gt = ctx.input_grad(0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double* dst = gt.data() + static_cast<std::size_t>(rows[i]) * d;
      const double* src = g.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& tape = same_tape(x, gain);
  same_tape(x, bias);
  const Tensor& xv = x.value();
  if (xv.rank() < 1) throw ShapeError("layer_norm needs rank >= 1");
  const std::size_t d = xv.shape().back();
  if (gain.value().shape() != Shape{d} || bias.value().shape() != Shape{d}) {
    throw ShapeError("layer_norm gain/bias must be [" + std::to_string(d) + "]");
  }
  const std::size_t rows = d ? xv.size() / d : 0;
  Tensor out(xv.shape());
  std::vector<double> xhat(xv.size());
  std::vector<double> rstd(rows);
  auto xs = xv.data();
  auto gs = gain.value().data();
  auto bs = bias.value().data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xs.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    rstd[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * inv;
      xhat[r * d + j] = h;
      o[r * d + j] = h * gs[j] + bs[j];
    }
  }
  return tape.record(std::move(out), {x, gain, bias},
                     [d, rows, xhat = std::move(xhat),
                      rstd = std::move(rstd)](BackwardContext& ctx) {
    auto g = ctx.grad_output();
    auto gs = ctx.input(1).data();
    if (ctx.needs_grad(0)) {
      auto gx = ctx.input_grad(0);
      std::vector<double> dh(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          dh[j] = g[r * d + j] * gs[j];
          mean_dh += dh[j];
          mean_dh_h += dh[j] * xhat[r * d + j];
        }
        mean_dh /= static_cast<double>(d);
        mean_dh_h /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          gx[r * d + j] += rstd[r] * (dh[j] - mean_dh - xhat[r * d + j] * mean_dh_h);
        }
      }
    }
    if (ctx.needs_grad(1)) {
      auto gg = ctx.input_grad(1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
    }
    if (ctx.needs_grad(2)) {
      auto gb = ctx.input_grad(2);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> targets, std::optional<int> ignore_id) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2) throw ShapeError("cross_entropy logits must be [n, V]");
  const std::size_t n = lv.dim(0), V = lv.dim(1);
  if (targets.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(n) + " rows");
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<double> probs(n * V, 0.0);
  auto x = lv.data();
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (ignore_id && tgt[r] == *ignore_id) continue;
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= V) {
      throw DomainError("target id " + std::to_string(tgt[r]) + " out of range");
    }
    const double* row = x.data() + r * V;
    const double mx = *std::max_element(row, row + V);
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) {
      const double e = std::exp(row[j] - mx);
      probs[r * V + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < V; ++j) probs[r * V + j] /= z;
    total += -(row[tgt[r]] - mx - std::log(z));
    ++counted;
  }
  if (counted == 0) throw DomainError("cross_entropy: every position is ignored (degenerate batch)");
  const double inv = 1.0 / static_cast<double>(counted);
  return logits.tape->record(
      Tensor::scalar(total * inv), {logits},
      [n, V, inv, ignore_id, tgt = std::move(tgt), probs = std::move(probs)](BackwardContext& ctx) {
        const double g = ctx.grad_output()[0] * inv;
        auto gl = ctx.input_grad(0);
        for (std::size_t r = 0; r < n; ++r) {
          if (ignore_id && tgt[r] == *ignore_id) continue;
          for (std::size_t j = 0; j < V; ++j) gl[r * V + j] += g * probs[r * V + j];
          gl[r * V + static_cast<std::size_t>(tgt[r])] -= g;
        }
      });
}

}  // namespace attnprune
