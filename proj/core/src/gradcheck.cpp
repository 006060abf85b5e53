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

#include "attnprune/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "attnprune/error.hpp"

namespace attnprune {

namespace {

double evaluate(const ScalarFn& f, const Tensor& x) {
  Tape tape;
  const Var out = f(tape.leaf(x, false));
  const Tensor& v = out.value();
  if (v.size() != 1) throw ShapeError("gradient check needs a scalar function");
  const double y = v[0];
  if (!std::isfinite(y)) throw NumericalError("non-finite function value in gradient check");
  return y;
}

}  // namespace

GradCheckResult finite_diff_report(const ScalarFn& f, const Tensor& x, double eps) {
  GradCheckResult result;
  {
    Tape tape;
    const Var leaf = tape.leaf(x, true);
    const Var out = f(leaf);
    if (!std::isfinite(out.value()[0])) {
      throw NumericalError("non-finite function value in gradient check");
    }
    tape.backward(out);
    result.analytic = tape.grad(leaf);
  }
  result.numeric = Tensor(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = evaluate(f, probe);
    probe[i] = x[i] - eps;
    const double down = evaluate(f, probe);
    probe[i] = x[i];
    const double numeric = (up - down) / (2.0 * eps);
    result.numeric[i] = numeric;
    const double err = std::abs(result.analytic[i] - numeric) /
                       std::max(1e-12, std::abs(numeric));
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace attnprune
