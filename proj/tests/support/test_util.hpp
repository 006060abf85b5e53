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

// Shared helpers for unit and acceptance tests.
#pragma once

#include <cmath>
#include <random>

#include "attnprune/autograd.hpp"
#include "attnprune/gradcheck.hpp"
#include "attnprune/tensor.hpp"

namespace attnprune::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& x : t.data()) x = u(rng);
  return t;
}

// sum(w * y) for a fixed random w, so no gradient coordinate vanishes by symmetry.
inline Var weighted_sum(Var y, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  Tensor w = random_tensor(y.shape(), rng, 0.5, 1.5);
  return sum_all(mul(y, y.tape->constant(std::move(w))));
}

// Finite-difference check of t -> f(x + t v) at t = 0 for a random direction
// v. Used where f has many inputs with near-zero partials.
inline double directional_check(const ScalarFn& f, const Tensor& x, std::uint64_t seed,
                                double eps = 1e-5) {
  std::mt19937_64 rng(seed);
  const Tensor v = random_tensor({x.size(), 1}, rng, -1.0, 1.0);
  const ScalarFn along = [&](Var t) {
    Tape& tape = *t.tape;
    Var step = reshape(matmul(tape.constant(v), reshape(t, {1, 1})), x.shape());
    return f(add(tape.constant(x), step));
  };
  return finite_diff_check(along, Tensor({1}, {0.0}), eps);
}

}  // namespace attnprune::testing
