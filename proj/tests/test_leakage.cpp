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
#include "dti/leakage.hpp"
#include "helpers.hpp"

using namespace dti;

namespace {

struct Probe {
  Dataset data;
  PromptingConfig cfg;
  test::Tokenized tok;
  Probe(std::size_t n, std::size_t k, std::uint64_t seed) {
    data = test::small_dataset(1, 3 * n + k, 2, seed);
    cfg.n = n;
    cfg.k = k;
    // context of 2n interactions so distances up to 2n exist
    Prompt p;
    const auto& its = data.sequences[0].interactions;
    p.context.assign(its.begin(), its.begin() + static_cast<long>(2 * n));
    p.targets.assign(its.begin() + static_cast<long>(2 * n),
                     its.begin() + static_cast<long>(2 * n + k));
    for (const auto& t : p.targets) p.labels.push_back(t.label);
    tok = test::tokenize(p, data.vocabulary, cfg);
  }
};

}  // namespace

TEST_CASE("one-layer sensitivity vanishes beyond the window") {
  Probe pr(4, 1, 3);
  for (const auto& v : standard_variants()) {
    ModelConfig mc = apply_variant(test::small_model(pr.data.vocabulary.size(), 1), v);
    const ModelParams params = ModelParams::init(mc, 5);
    const SensitivityCurve c = sensitivity_curve(params, pr.tok.prompt, pr.tok.plan);
    REQUIRE(c.by_distance.size() == 9);
    CHECK(c.max_in(4, 8) <= 1e-10);
    CHECK(c.max_in(0, 4) > 1e-8);
    CHECK(std::isnan(c.by_distance[0]));
  }
}

TEST_CASE("two-layer sensitivity leaks past the window and reset reduces it") {
  int leaks = 0, reduced = 0;
  const int seeds = 10;
  for (int s = 0; s < seeds; ++s) {
    Probe pr(4, 1, 100 + s);
    ModelConfig mc = test::small_model(pr.data.vocabulary.size(), 2, 16);
    const ModelParams off = ModelParams::init(mc, 200 + s);
    ModelParams on = off;
    on.config.reset.enabled = true;
    on.config.reset.y_max = 1.0;
    const SensitivityCurve a = sensitivity_curve(off, pr.tok.prompt, pr.tok.plan);
    const SensitivityCurve b = sensitivity_curve(on, pr.tok.prompt, pr.tok.plan);
    leaks += a.max_in(4, 8) > 1e-8;
    reduced += b.area_in(4, 8) < a.area_in(4, 8);
  }
  CHECK(leaks == seeds);
  CHECK(reduced == seeds);
}

TEST_CASE("sensitivity stays zero beyond l*n for deeper models") {
  // three layers reach 3n; use a context long enough to see past it
  Dataset ds = test::small_dataset(1, 14, 2, 4);
  Prompt p;
  const auto& its = ds.sequences[0].interactions;
  p.context.assign(its.begin(), its.begin() + 12);
  p.targets = {its[12]};
  p.labels = {its[12].label};
  PromptingConfig cfg;
  cfg.n = 2;
  const auto t = test::tokenize(p, ds.vocabulary, cfg);
  for (std::size_t layers : {1u, 2u, 3u}) {
    ModelConfig mc = test::small_model(ds.vocabulary.size(), layers);
    mc.reset.enabled = true;
    const SensitivityCurve c = sensitivity_curve(ModelParams::init(mc, 6), t.prompt, t.plan);
    // the curve covers distances 1..2n = 4; beyond l*n is (2*layers, 4]
    if (2 * layers < 4) CHECK(c.max_in(2 * layers, 4) <= 1e-10);
    CHECK(c.max_in(0, 2) > 1e-8);
  }
}

TEST_CASE("sensitivity curve helpers") {
  SensitivityCurve c;
  c.n = 2;
  c.by_distance = {std::nan(""), 1.0, 2.0, std::nan(""), 0.5};
  CHECK(c.max_in(0, 4) == 2.0);
  CHECK(c.area_in(2, 4) == 0.5);
  CHECK(c.area_in(0, 2) == 3.0);
  test::TempDir dir;
  write_sensitivity_csv({{"x", c}}, dir / "s.csv");
  CHECK(test::read_file(dir / "s.csv") == "curve,distance,sensitivity\nx,1,1\nx,2,2\nx,4,0.5\n");
}

TEST_CASE("positional probe is structurally zero with position-free [SUM]") {
  const Dataset ds = test::small_dataset(3, 12, 2, 9);
  PromptingConfig pc;
  pc.n = 4;
  Dataset eval = ds;
  ModelConfig mc = apply_variant(test::small_model(ds.vocabulary.size()), variant_by_name("both_fixes"));
  const ProbeReport fixed = positional_probe(ModelParams::init(mc, 3), eval, pc, 6, 10);
  CHECK(fixed.divergence <= 1e-6);
  CHECK(fixed.prompts == 10);

  mc = apply_variant(mc, variant_by_name("no_fixes"));
  const ProbeReport shifted = positional_probe(ModelParams::init(mc, 3), eval, pc, 6, 10);
  CHECK(shifted.divergence > fixed.divergence);
}

TEST_CASE("variants") {
  CHECK(standard_variants().size() == 4);
  const ModelConfig base;
  const ModelConfig both = apply_variant(base, variant_by_name("both_fixes"));
  CHECK(both.reset.enabled);
  CHECK(both.sum_position_free);
  CHECK(both.alibi == AlibiMode::sum_rows);
  CHECK(both.positional_mode == PositionalMode::none);
  const ModelConfig none = apply_variant(base, variant_by_name("no_fixes"));
  CHECK_FALSE(none.reset.enabled);
  CHECK(none.positional_mode == PositionalMode::absolute);
  CHECK(none.alibi == AlibiMode::off);
  CHECK(apply_variant(base, variant_by_name("reset_only")).reset.enabled);
  CHECK_FALSE(apply_variant(base, variant_by_name("positional_fix_only")).reset.enabled);
  CHECK_THROWS_AS(variant_by_name("bogus"), ConfigError);
}

TEST_CASE("ablation grid is deterministic and isolates failing cells") {
  const Dataset ds = test::small_dataset(6, 24, 2, 2, 0.1);
  PromptingConfig pc;
  pc.n = 3;
  const DataSplit split = chronological_split(ds, pc.n);
  ModelConfig mc = test::small_model(ds.vocabulary.size());
  mc.init_std = 0.1;
  mc.max_positions = 24;  // too short for k=20 in the absolute variant
  TrainConfig tc;
  tc.max_epochs = 2;
  const std::vector<Variant> variants{variant_by_name("both_fixes"), variant_by_name("no_fixes")};
  const std::vector<std::size_t> ks{1, 20};
  const AblationGrid a = run_ablation_grid(split, mc, pc, tc, ks, variants, 4);
  const AblationGrid b = run_ablation_grid(split, mc, pc, tc, ks, variants, 4);
  REQUIRE(a.cells.size() == 4);
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    CHECK(a.cells[i].val_auc == b.cells[i].val_auc);
    CHECK(a.cells[i].val_log_loss == b.cells[i].val_log_loss);
    CHECK(a.cells[i].status == b.cells[i].status);
  }
  CHECK(a.at("both_fixes", 20).status == "ok");
  CHECK(a.at("no_fixes", 20).status == "failed");
  CHECK(a.at("no_fixes", 20).error.find("max_positions") != std::string::npos);
  CHECK(a.at("no_fixes", 1).status == "ok");
  CHECK_THROWS_AS(a.at("no_fixes", 5), Error);

  test::TempDir dir;
  write_ablation_csv(a, dir / "g.csv");
  const std::string s = test::read_file(dir / "g.csv");
  CHECK(std::count(s.begin(), s.end(), '\n') == 5);
  CHECK(s.find("no_fixes,20,undefined") != std::string::npos);
}
