// Copyright 2026 The DTI Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Serial reference vs OpenMP kernels. Run with DTI_WORKERS / OMP_NUM_THREADS
// to vary the thread count.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dti/attention.hpp"
#include "dti/kernels.hpp"
#include "dti/prompting.hpp"

namespace {

std::vector<double> random_vec(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <dti::kernels::Exec E>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    dti::kernels::gemm(E, a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

// A streaming prompt of k targets over c-token interactions.
struct AttentionFixture {
  dti::TokenizedPrompt tp;
  dti::AttentionPlan plan;
  dti::Matrix q, k, v;

  AttentionFixture(std::size_t n, std::size_t targets, std::size_t c, std::size_t d) {
    dti::Vocabulary vocab;
    vocab.add("x");
    dti::Prompt p;
    dti::Interaction it;
    it.descriptor_tokens.assign(c, "x");
    p.context.assign(n, it);
    p.targets.assign(targets, it);
    p.labels.assign(targets, 1);
    dti::PromptingConfig cfg;
    cfg.n = n;
    tp = dti::tokenize_prompt(p, vocab, cfg);
    plan = dti::compute_attention_plan(tp, cfg);
    const std::size_t T = tp.size();
    q = dti::Matrix(T, d);
    k = dti::Matrix(T, d);
    v = dti::Matrix(T, d);
    auto fill = [](dti::Matrix& m, unsigned s) {
      const auto r = random_vec(m.size(), s);
      std::copy(r.begin(), r.end(), m.data());
    };
    fill(q, 3);
    fill(k, 4);
    fill(v, 5);
  }
};

template <dti::kernels::Exec E>
void BM_WindowedAttention(benchmark::State& state) {
  AttentionFixture f(20, static_cast<std::size_t>(state.range(0)), 5, 64);
  dti::AttentionConfig cfg;
  cfg.num_heads = 4;
  cfg.head_dim = 16;
  const dti::AttentionInputs in{f.q, f.k, f.v, nullptr};
  for (auto _ : state) {
    auto out = dti::windowed_attention(in, f.plan, cfg, E);
    benchmark::DoNotOptimize(out.out.data());
  }
  state.SetLabel(std::to_string(f.tp.size()) + " tokens");
}

}  // namespace

BENCHMARK(BM_Gemm<dti::kernels::Exec::serial>)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Gemm<dti::kernels::Exec::parallel>)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_WindowedAttention<dti::kernels::Exec::serial>)->Arg(10)->Arg(50);
BENCHMARK(BM_WindowedAttention<dti::kernels::Exec::parallel>)->Arg(10)->Arg(50);

BENCHMARK_MAIN();
