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

// Microbenchmarks for the hot kernels of a training step.
#include <benchmark/benchmark.h>

#include <random>

#include "attnprune/attention.hpp"
#include "attnprune/autograd.hpp"
#include "attnprune/masks.hpp"

namespace {

using namespace attnprune;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  for (double& v : t.data()) v = g(rng);
  return t;
}

void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    Tape tape;
    const Var x = tape.leaf(a, true), y = tape.leaf(b, true);
    tape.backward(sum_all(matmul(x, y)));
    benchmark::DoNotOptimize(tape.grad(x).data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(3 * n * n * n));
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(32)->Arg(64)->Arg(128);

template <bool Entmax>
void BM_RowNormalize(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor z = random_tensor({n, n}, 3);
  for (auto _ : state) {
    Tensor p = Entmax ? entmax15_rows(z) : softmax_rows(z);
    benchmark::DoNotOptimize(p.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_RowNormalize<false>)->Name("BM_SoftmaxRows")->Arg(16)->Arg(64);
BENCHMARK(BM_RowNormalize<true>)->Name("BM_Entmax15Rows")->Arg(16)->Arg(64);

void BM_MultiHeadStep(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 64;
  const AttentionConfig cfg = AttentionConfig::make(d, 4);
  std::vector<Tensor> w;
  for (std::uint64_t i = 0; i < 4; ++i) {
    w.push_back(random_tensor({d, d}, 10 + i));
    w.push_back(Tensor::zeros({d}));
  }
  const Tensor x = random_tensor({n, d}, 4);
  for (auto _ : state) {
    Tape tape;
    const Var in = tape.leaf(x, true);
    MultiHeadParams p{tape.leaf(w[0], true), tape.leaf(w[1], true), tape.leaf(w[2], true),
                      tape.leaf(w[3], true), tape.leaf(w[4], true), tape.leaf(w[5], true),
                      tape.leaf(w[6], true), tape.leaf(w[7], true)};
    tape.backward(sum_all(multi_head(in, in, {}, true, p, cfg)));
    benchmark::DoNotOptimize(tape.grad(in).data().data());
  }
}
BENCHMARK(BM_MultiHeadStep)->Arg(16)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
