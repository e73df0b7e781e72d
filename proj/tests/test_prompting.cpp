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

#include <algorithm>
#include <map>
#include <iterator>
#include <random>
#include <set>

#include "doctest.h"
#include "dti/common.hpp"
#include "dti/prompting.hpp"
#include "helpers.hpp"

using namespace dti;

namespace {

InteractionSequence numbered_sequence(std::size_t m, std::size_t c = 2) {
  InteractionSequence seq;
  seq.user_id = 1;
  for (std::size_t i = 0; i < m; ++i) {
    Interaction it;
    it.item_id = static_cast<std::int64_t>(i);
    for (std::size_t t = 0; t < c; ++t) it.descriptor_tokens.push_back("tok" + std::to_string(t));
    it.label = static_cast<int>(i % 3 == 0);
    it.order_index = static_cast<std::int64_t>(i);
    seq.interactions.push_back(it);
  }
  return seq;
}

Vocabulary vocab_for(std::size_t c) {
  Vocabulary v;
  for (std::size_t t = 0; t < c; ++t) v.add("tok" + std::to_string(t));
  v.add("x");
  return v;
}

std::vector<std::int64_t> ids(const std::vector<Interaction>& its) {
  std::vector<std::int64_t> out;
  for (const auto& it : its) out.push_back(it.item_id);
  return out;
}

}  // namespace

TEST_CASE("sliding-window prompt counts") {
  PromptingConfig cfg;
  cfg.n = 20;
  CHECK(build_sliding_window_prompts(numbered_sequence(1000), cfg).size() == 980);
  CHECK(build_sliding_window_prompts(numbered_sequence(21), cfg).size() == 1);
  CHECK(build_sliding_window_prompts(numbered_sequence(20), cfg).empty());
}

TEST_CASE("consecutive sliding-window prompts share n-1 context interactions") {
  PromptingConfig cfg;
  cfg.n = 20;
  const auto prompts = build_sliding_window_prompts(numbered_sequence(50), cfg);
  for (std::size_t i = 0; i + 1 < prompts.size(); ++i) {
    const auto a = ids(prompts[i].context), b = ids(prompts[i + 1].context);
    std::vector<std::int64_t> shared;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(shared));
    CHECK(shared.size() == 19);
    CHECK(prompts[i].targets.size() == 1);
  }
}

TEST_CASE("streaming prompt counts") {
  PromptingConfig cfg;
  cfg.n = 20;
  cfg.k = 50;
  CHECK(build_streaming_prompts(numbered_sequence(1000), cfg).size() == 20);
  cfg.k = 33;
  const auto p = build_streaming_prompts(numbered_sequence(1000), cfg);
  REQUIRE(p.size() == 30);
  CHECK(p.back().targets.size() == 23);
  CHECK(p.front().targets.size() == 33);
}

TEST_CASE("k=1 streaming prompts equal sliding-window prompts") {
  PromptingConfig cfg;
  cfg.n = 7;
  cfg.k = 1;
  const auto seq = numbered_sequence(40);
  const auto s = build_streaming_prompts(seq, cfg);
  const auto w = build_sliding_window_prompts(seq, cfg);
  REQUIRE(s.size() == w.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(s[i].context == w[i].context);
    CHECK(s[i].targets == w[i].targets);
    CHECK(s[i].labels == w[i].labels);
  }
}

TEST_CASE("prompt-count law and target coverage over random (m, n, k)") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    const std::size_t m = n + 1 + rng() % 60;
    const std::size_t k = 1 + rng() % 25;
    PromptingConfig cfg;
    cfg.n = n;
    cfg.k = k;
    const auto seq = numbered_sequence(m, 1);
    const auto s = build_streaming_prompts(seq, cfg);
    const auto w = build_sliding_window_prompts(seq, cfg);
    CHECK(s.size() == (m - n + k - 1) / k);
    CHECK(w.size() == m - n);
    CHECK(s.size() <= w.size());
    CHECK((s.size() == w.size()) == (k == 1 || m - n == 1));

    // (target, preceding n interactions) multisets
    std::multiset<std::vector<std::int64_t>> from_w, from_s;
    for (const auto& p : w) {
      auto key = ids(p.context);
      key.push_back(p.targets[0].item_id);
      from_w.insert(key);
    }
    for (const auto& p : s) {
      std::vector<Interaction> all = p.context;
      all.insert(all.end(), p.targets.begin(), p.targets.end());
      for (std::size_t t = p.context.size(); t < all.size(); ++t) {
        std::vector<std::int64_t> key;
        for (std::size_t i = t - n; i <= t; ++i) key.push_back(all[i].item_id);
        from_s.insert(key);
      }
    }
    CHECK(from_w == from_s);
  }
}

TEST_CASE("tokenised layout") {
  Vocabulary v = vocab_for(2);
  Prompt p;
  Interaction a, b;
  a.descriptor_tokens = {"tok0", "tok1"};
  b.descriptor_tokens = {"tok1", "x"};
  p.context = {a};
  p.targets = {b};
  p.labels = {1};
  PromptingConfig cfg;
  cfg.n = 1;
  const TokenizedPrompt tp = tokenize_prompt(p, v, cfg);
  const std::vector<int> expect{v.id("tok0"), v.id("tok1"), Vocabulary::kSep,
                                v.id("tok1"), v.id("x"),    Vocabulary::kSum};
  CHECK(tp.token_ids == expect);
  CHECK(tp.sum_positions == std::vector<std::size_t>{5});
  CHECK(tp.position_ids == std::vector<int>{0, 1, 2, 3, 4, -1});
  CHECK(tp.alibi_positions[5] == 5);
  CHECK(tp.sum_label_ids == std::vector<int>{Vocabulary::kYes});
}

TEST_CASE("k targets give k [SUM] tokens with mapped labels") {
  PromptingConfig cfg;
  cfg.n = 2;
  cfg.k = 3;
  auto seq = numbered_sequence(5);
  seq.interactions[2].label = 1;
  seq.interactions[3].label = 0;
  seq.interactions[4].label = 1;
  const auto prompts = build_streaming_prompts(seq, cfg);
  REQUIRE(prompts.size() == 1);
  const TokenizedPrompt tp = tokenize_prompt(prompts[0], vocab_for(2), cfg);
  CHECK(std::count(tp.token_ids.begin(), tp.token_ids.end(), Vocabulary::kSum) == 3);
  CHECK(tp.sum_label_ids ==
        std::vector<int>{Vocabulary::kYes, Vocabulary::kNo, Vocabulary::kYes});
  CHECK(tp.sum_labels == std::vector<int>{1, 0, 1});
  for (std::size_t s : tp.sum_positions) CHECK(tp.token_ids[s] == Vocabulary::kSum);
}

TEST_CASE("unknown tokens are reported") {
  Prompt p;
  Interaction a;
  a.descriptor_tokens = {"unseen"};
  p.targets = {a};
  p.labels = {0};
  CHECK_THROWS_WITH_AS(tokenize_prompt(p, vocab_for(1), PromptingConfig{}),
                       doctest::Contains("unseen"), Error);
}

TEST_CASE("window of a token in interaction 25 covers interactions 5..25") {
  PromptingConfig cfg;
  cfg.n = 20;
  cfg.k = 10;
  const auto prompts = build_streaming_prompts(numbered_sequence(40), cfg);
  const TokenizedPrompt tp = tokenize_prompt(prompts[0], vocab_for(2), cfg);
  const AttentionPlan plan = compute_attention_plan(tp, cfg);
  for (std::size_t t = 0; t < tp.size(); ++t) {
    if (tp.owner[t] != 25) continue;
    std::set<int> seen;
    for (std::size_t s = 0; s <= t; ++s)
      if (plan.attendable(t, s)) seen.insert(tp.owner[s]);
    CHECK(*seen.begin() == 5);
    CHECK(*seen.rbegin() == 25);
    CHECK(plan.window_start[t] == tp.interaction_begin[5]);
  }
}

TEST_CASE("window exactness, causality and [SUM] key masking on random prompts") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    PromptingConfig cfg;
    cfg.n = 1 + rng() % 6;
    cfg.k = 1 + rng() % 8;
    cfg.token_cap = trial % 3 == 0 ? 4 + rng() % 20 : 1024;
    const std::size_t c = 1 + rng() % 3;
    auto seq = numbered_sequence(cfg.n + 1 + rng() % 20, c);
    if (trial % 4 == 1) seq.interactions[0].descriptor_tokens.assign(c, "[PAD]");
    Vocabulary v = vocab_for(c);
    for (const auto& p : build_streaming_prompts(seq, cfg)) {
      const TokenizedPrompt tp = tokenize_prompt(p, v, cfg);
      const AttentionPlan plan = compute_attention_plan(tp, cfg);
      for (std::size_t t = 0; t < tp.size(); ++t)
        for (std::size_t s = 0; s < tp.size(); ++s) {
          const bool expect = s <= t && tp.owner[t] - tp.owner[s] <= static_cast<int>(cfg.n) &&
                              t - s < cfg.token_cap && tp.token_ids[s] != Vocabulary::kSum &&
                              tp.token_ids[s] != Vocabulary::kPad;
          CHECK(plan.attendable(t, s) == expect);
        }
    }
  }
}

TEST_CASE("a later [SUM] never sees an earlier [SUM] inside its window") {
  PromptingConfig cfg;
  cfg.n = 3;
  cfg.k = 3;
  const auto prompts = build_streaming_prompts(numbered_sequence(6), cfg);
  const TokenizedPrompt tp = tokenize_prompt(prompts[0], vocab_for(2), cfg);
  const AttentionPlan plan = compute_attention_plan(tp, cfg);
  REQUIRE(tp.sum_positions.size() == 3);
  const std::size_t first = tp.sum_positions[0], second = tp.sum_positions[1];
  CHECK(plan.window_start[second] <= first);
  CHECK_FALSE(plan.attendable(second, first));
  CHECK(plan.attendable(second, first - 1));
  CHECK(plan.sum_query[second]);
}

TEST_CASE("target distance per token") {
  PromptingConfig cfg;
  cfg.n = 3;
  cfg.k = 2;
  const auto prompts = build_streaming_prompts(numbered_sequence(5), cfg);
  const TokenizedPrompt tp = tokenize_prompt(prompts[0], vocab_for(2), cfg);
  const AttentionPlan plan = compute_attention_plan(tp, cfg);
  for (std::size_t t = 0; t < tp.size(); ++t)
    CHECK(plan.target_distance[t] == std::max(3 - tp.owner[t], 0));
}

TEST_CASE("padding interactions tokenise to [PAD] only") {
  Prompt p;
  Interaction pad, a;
  pad.descriptor_tokens = {"[PAD]", "[PAD]"};
  a.descriptor_tokens = {"tok0", "tok1"};
  p.context = {pad, a};
  p.targets = {a};
  p.labels = {0};
  PromptingConfig cfg;
  cfg.n = 2;
  const TokenizedPrompt tp = tokenize_prompt(p, vocab_for(2), cfg);
  CHECK(tp.token_ids[0] == Vocabulary::kPad);
  CHECK(tp.token_ids[1] == Vocabulary::kPad);
  CHECK(tp.token_ids[2] == Vocabulary::kPad);
  CHECK(tp.token_ids[5] == Vocabulary::kSep);
  const AttentionPlan plan = compute_attention_plan(tp, cfg);
  CHECK(plan.pad_query[2]);
  CHECK_FALSE(plan.key_mask[2]);
}

TEST_CASE("tokenised prompts round-trip through JSON lines") {
  PromptingConfig cfg;
  cfg.n = 3;
  cfg.k = 4;
  std::vector<TokenizedPrompt> tps;
  for (const auto& p : build_streaming_prompts(numbered_sequence(15), cfg))
    tps.push_back(tokenize_prompt(p, vocab_for(2), cfg));
  test::TempDir dir;
  write_prompts_jsonl(tps, dir / "p.jsonl");
  const auto back = read_prompts_jsonl(dir / "p.jsonl");
  REQUIRE(back.size() == tps.size());
  for (std::size_t i = 0; i < tps.size(); ++i) CHECK(to_json(back[i]) == to_json(tps[i]));
}

TEST_CASE("plan matrix dump") {
  PromptingConfig cfg;
  cfg.n = 1;
  const auto prompts = build_sliding_window_prompts(numbered_sequence(2, 1), cfg);
  const TokenizedPrompt tp = tokenize_prompt(prompts[0], vocab_for(1), cfg);
  const AttentionPlan plan = compute_attention_plan(tp, cfg);
  const std::string dump = format_plan_matrix(plan);
  CHECK(std::count(dump.begin(), dump.end(), '\n') == static_cast<long>(tp.size()));
}

TEST_CASE("prompting config validation") {
  PromptingConfig cfg;
  cfg.k = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.n = 0;
  CHECK_THROWS_AS(build_sliding_window_prompts(numbered_sequence(3), cfg), ConfigError);
}
