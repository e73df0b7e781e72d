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

#include <cmath>

#include "doctest.h"
#include "dti/common.hpp"
#include "dti/flops.hpp"
#include "dti/training.hpp"
#include "helpers.hpp"

using namespace dti;

TEST_CASE("sliding-window cost") {
  const auto in = nominal_token_accounting(1000, 20, 1, 5, 2, 64);
  CHECK(in.N == 100);
  CHECK(sliding_window_flops(in) == 4114432000.0);
  CHECK(980.0 * 4.0 * (100.0 * 100 * 64 + 100.0 * 64 * 64) == 4114432000.0);

  auto doubled = in;
  doubled.L = 4;
  CHECK(sliding_window_flops(doubled) == 2 * sliding_window_flops(in));

  const auto one = nominal_token_accounting(21, 20, 1, 5, 2, 64);
  CHECK(sliding_window_flops(one) == 2 * 2 * (100.0 * 100 * 64 + 100.0 * 64 * 64));
}

TEST_CASE("dti cost") {
  const auto in = nominal_token_accounting(1000, 20, 50, 5, 2, 64);
  CHECK(in.K == 250);
  CHECK(dti_flops(in) == 293888000.0);
  CHECK(20.0 * 4.0 * (350.0 * 100 * 64 + 350.0 * 64 * 64) == 293888000.0);
  CHECK(dti_flops(in, PromptCount::exact) == 293888000.0);  // ceil(980/50) = 1000/50
  CHECK(sliding_window_flops(in) / dti_flops(in) == doctest::Approx(14.0).epsilon(1e-12));

  // K = 0: a streaming prompt costs what a sliding-window prompt costs
  auto zero = in;
  zero.K = 0;
  zero.k = 1;
  zero.m = 21;
  auto sw = zero;
  CHECK(dti_flops(zero, PromptCount::exact) == sliding_window_flops(sw));

  // k = 1, K = c: ratio N / (N + c) with the exact prompt count
  const auto k1 = nominal_token_accounting(1000, 20, 1, 5, 2, 64);
  CHECK(sliding_window_flops(k1) / dti_flops(k1, PromptCount::exact) ==
        doctest::Approx(100.0 / 105.0).epsilon(1e-12));
}

TEST_CASE("the analytic ratio approaches N*k/(N+K) as m grows") {
  double prev_gap = 1.0;
  for (double m : {1000.0, 1e4, 1e5, 1e6}) {
    const auto in = nominal_token_accounting(m, 20, 50, 5, 2, 64);
    const double r = sliding_window_flops(in) / dti_flops(in);
    const double gap = std::abs(r / reduction_ratio(in.N, in.K, in.k) - 1.0);
    CHECK(gap < prev_gap);
    prev_gap = gap;
  }
  CHECK(prev_gap < 1e-4);
}

TEST_CASE("reduction ratio") {
  for (double c : {1.0, 3.0, 5.0, 17.0})
    CHECK(std::abs(reduction_ratio(20 * c, 50 * c, 50) - 14.2857) <= 1e-4);
  CHECK(reduction_ratio(100, 100, 1) == 0.5);
  double prev = 0;
  for (double k = 1; k <= 200; ++k) {
    const double r = reduction_ratio(20 * 5, k * 5, k);
    CHECK(r > prev);
    CHECK(r == doctest::Approx(20 * k / (20 + k)).epsilon(1e-14));
    CHECK(r < 20.0);
    prev = r;
  }
  CHECK(reduction_ratio(100, 5 * 1e7, 1e7) == doctest::Approx(20.0).epsilon(1e-5));
  CHECK_THROWS_AS(reduction_ratio(0, 1, 1), ConfigError);
}

TEST_CASE("exact token accounting matches tokenised prompt lengths") {
  for (std::size_t c : {1u, 3u, 5u})
    for (std::size_t k : {1u, 7u, 10u}) {
      const std::size_t n = 6;
      const Dataset ds = test::small_dataset(1, n + k, c);
      PromptingConfig pc;
      pc.n = n;
      pc.k = k;
      const PromptSet dti = build_prompt_set(ds, pc, Paradigm::dti);
      const PromptSet sw = build_prompt_set(ds, pc, Paradigm::sliding_window);
      const auto in = exact_token_accounting(0, double(n), double(k), double(c), 1, 1);
      REQUIRE(dti.size() == 1);
      CHECK(double(dti.prompts[0].size()) == in.N + in.K);
      CHECK(double(sw.prompts[0].size()) == in.N);
    }
}

TEST_CASE("measured MACs follow the layer shapes") {
  const Dataset ds = test::small_dataset(2, 20, 3);
  PromptingConfig pc;
  pc.n = 4;
  pc.k = 6;
  for (bool reset : {false, true}) {
    ModelConfig mc = test::small_model(ds.vocabulary.size(), 2, 8);
    mc.reset.enabled = reset;
    const ModelParams params = ModelParams::init(mc, 1);
    const PromptSet set = build_prompt_set(ds, pc, Paradigm::dti);
    const std::uint64_t d = mc.d_model, f = mc.ff_dim, V = mc.vocab_size;
    MacCounter total;
    for (std::size_t i = 0; i < set.size(); ++i) {
      MacCounter c;
      ForwardOptions fo;
      fo.counter = &c;
      forward(params, set.prompts[i], set.plans[i], fo);
      const std::uint64_t T = set.prompts[i].size(), S = set.prompts[i].sum_positions.size();
      const std::uint64_t per_layer = T * (4 * d * d + 2 * d * f);
      const std::uint64_t resets = reset ? T * 2 * d * d : 0;  // layer 2 only
      CHECK(c.linear == 2 * per_layer + resets + S * d * V);
      std::uint64_t pairs = 0;
      const auto& plan = set.plans[i];
      for (std::size_t t = 0; t < T; ++t)
        if (!plan.pad_query[t])
          for (std::size_t s = 0; s <= t; ++s) pairs += plan.attendable(t, s);
      CHECK(c.attention == 2 * 2 * d * pairs);
      CHECK(pairs <= T * (plan.max_span() + 1));
      CHECK(c.tokens == T);
      CHECK(c.targets == S);
      total += c;
    }
    // additivity: the per-prompt sum equals one pass over the set
    const MacCounter once = measure_forward_macs(params, set);
    CHECK(once.linear == total.linear);
    CHECK(once.attention == total.attention);
    CHECK(training_macs(once) == 2.0 * double(once.forward()));
  }
}

TEST_CASE("MAC counts do not depend on how prompts are batched") {
  const Dataset ds = test::small_dataset(3, 20, 2);
  PromptingConfig pc;
  pc.n = 4;
  pc.k = 3;
  const ModelParams params = ModelParams::init(test::small_model(ds.vocabulary.size()), 2);
  const PromptSet set = build_prompt_set(ds, pc, Paradigm::dti);
  const auto ex = set.examples();
  const auto count = [&](std::size_t per_batch) {
    MacCounter c;
    for (std::size_t b = 0; b < ex.size(); b += per_batch) {
      GradientOptions go;
      go.counter = &c;
      const std::size_t len = std::min(per_batch, ex.size() - b);
      compute_gradients(params, std::span(ex).subspan(b, len), go);
    }
    return c;
  };
  const MacCounter a = count(1), b = count(4), c = count(ex.size());
  CHECK(a.forward() == b.forward());
  CHECK(a.forward() == c.forward());
  CHECK(a.forward() == measure_forward_macs(params, set).forward());
}

TEST_CASE("flops report on a small workload") {
  const FlopsReport r = flops_report(60, 5, 10, 2, 1, 8, 16);
  CHECK(r.formula_reduction == doctest::Approx(reduction_ratio(10, 20, 10)));
  CHECK(r.measured_reduction > 1.0);
  CHECK(r.measured_sw == training_macs(r.sw_counter));
  const auto j = to_json(r);
  CHECK(j["formula_reduction"] == r.formula_reduction);
  CHECK(format_flops_table(r).find("measured") != std::string::npos);
}
