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

#pragma once

#include <functional>

#include "attnprune/autograd.hpp"

namespace attnprune {

// Builds a scalar from `x` on x's tape.
using ScalarFn = std::function<Var(Var x)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  Tensor analytic;
  Tensor numeric;
};

// Compares the tape gradient of f at x against central differences.
// Relative error per coordinate is |analytic - numeric| / max(1e-12, |numeric|).
// Throws NumericalError when f is non-finite at a perturbed point.
GradCheckResult finite_diff_report(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

inline double finite_diff_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5) {
  return finite_diff_report(f, x, eps).max_rel_error;
}

}  // namespace attnprune
