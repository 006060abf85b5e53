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

// Independent reference implementations used as test oracles.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "attnprune/attention.hpp"
#include "attnprune/tensor.hpp"

namespace attnprune::testing {

// 1.5-entmax by long-double bisection to machine precision; no closed form.
inline std::vector<double> entmax_bisect_oracle(const std::vector<double>& z) {
  const long double mx = *std::max_element(z.begin(), z.end());
  long double lo = mx / 2 - 1, hi = mx / 2;
  auto mass = [&](long double tau) {
    long double s = 0;
    for (double x : z) {
      const long double t = std::max<long double>(0, x / 2.0L - tau);
      s += t * t;
    }
    return s;
  };
  for (int it = 0; it < 200; ++it) {
    const long double mid = (lo + hi) / 2;
    (mass(mid) >= 1 ? lo : hi) = mid;
  }
  const long double tau = (lo + hi) / 2;
  std::vector<double> p(z.size());
  long double total = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const long double t = std::max<long double>(0, z[i] / 2.0L - tau);
    p[i] = static_cast<double>(t * t);
    total += t * t;
  }
  for (double& x : p) x = static_cast<double>(x / total);
  return p;
}

inline std::vector<double> softmax_oracle(const std::vector<double>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - mx));
  for (double& x : p) x /= s;
  return p;
}

// Plain-loop multi-head attention over one sequence: x_q [n, d], x_kv [m, d],
// weights W [d, d] applied as x W + b. masks[h] may be null.
inline Tensor multi_head_loops(const Tensor& xq, const Tensor& xkv, const Tensor& wq,
                               const Tensor& bq, const Tensor& wk, const Tensor& bk,
                               const Tensor& wv, const Tensor& bv, const Tensor& wo,
                               const Tensor& bo, std::size_t H, bool causal,
                               const std::vector<const AdditiveMask*>& masks, Activation act) {
  const std::size_t n = xq.dim(0), m = xkv.dim(0), d = xq.dim(1), dk = d / H;
  auto proj = [&](const Tensor& x, const Tensor& w, const Tensor& b) {
    const std::size_t r = x.dim(0);
    Tensor y({r, d});
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        double s = b[j];
        for (std::size_t k = 0; k < d; ++k) s += x[i * d + k] * w[k * d + j];
        y[i * d + j] = s;
      }
    }
    return y;
  };
  const Tensor q = proj(xq, wq, bq), k = proj(xkv, wk, bk), v = proj(xkv, wv, bv);
  Tensor concat({n, d});
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> z(m);
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < dk; ++c) s += q[i * d + h * dk + c] * k[j * d + h * dk + c];
        double add = 0;
        if (causal && j > i) add = kDefaultNegFill;
        if (h < masks.size() && masks[h] && masks[h]->masked(i, j)) add = kDefaultNegFill;
        z[j] = (s + add) / std::sqrt(static_cast<double>(dk));
      }
      const auto p = act == Activation::kSoftmax ? softmax_oracle(z) : entmax_bisect_oracle(z);
      for (std::size_t c = 0; c < dk; ++c) {
        double s = 0;
        for (std::size_t j = 0; j < m; ++j) s += p[j] * v[j * d + h * dk + c];
        concat[i * d + h * dk + c] = s;
      }
    }
  }
  return proj(concat, wo, bo);
}

}  // namespace attnprune::testing
