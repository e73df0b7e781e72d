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
#include <cmath>

#include "doctest.h"
#include "dti/common.hpp"
#include "dti/metrics.hpp"
#include "dti/training.hpp"
#include "helpers.hpp"

using namespace dti;

namespace {

struct Setup {
  DataSplit split;
  PromptingConfig prompting;
  ModelConfig model;
  Setup() {
    const Dataset ds = test::small_dataset(12, 30, 2, 5, 0.1);
    prompting.n = 4;
    prompting.k = 5;
    split = chronological_split(ds, prompting.n);
    model = test::small_model(ds.vocabulary.size());
    model.init_std = 0.1;
  }
  PromptSet train_set(Paradigm p) const { return build_prompt_set(split.train, prompting, p); }
  PromptSet val_set() const {
    return build_prompt_set(split.val, prompting, Paradigm::sliding_window);
  }
};

}  // namespace

TEST_CASE("warm-up and cosine schedule") {
  const std::size_t total = 95;
  CHECK(warmup_steps(total, 0.1) == 10);
  CHECK(warmup_steps(100, 0.1) == 10);
  CHECK(scheduled_learning_rate(1e-3, 1, total, 0.1) == doctest::Approx(1e-3 / 10).epsilon(1e-15));
  CHECK(scheduled_learning_rate(1e-3, 10, total, 0.1) == doctest::Approx(1e-3));
  CHECK(scheduled_learning_rate(1e-3, total, total, 0.1) == doctest::Approx(0.0));
  const double mid = scheduled_learning_rate(1e-3, 10 + 85 / 2, total, 0.1);
  CHECK(mid < 1e-3);
  CHECK(mid > 0.4e-3);
  for (std::size_t s = 11; s < total; ++s)
    CHECK(scheduled_learning_rate(1e-3, s + 1, total, 0.1) <=
          scheduled_learning_rate(1e-3, s, total, 0.1));
}

TEST_CASE("AdamW first step moves each coordinate by about lr against the gradient") {
  AdamW opt(3, 0.9, 0.999, 1e-8, 0.1);
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{0.3, -4.0, 0.0};
  opt.step(p, g, 0.01);
  CHECK(p[0] == doctest::Approx(1.0 * (1 - 0.001) - 0.01 * 0.3 / (0.3 + 1e-8)).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(-2.0 * (1 - 0.001) + 0.01 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
  CHECK(p[2] == doctest::Approx(0.5 * (1 - 0.001)).epsilon(1e-15));
  CHECK(opt.steps() == 1);
}

TEST_CASE("zero learning rate and zero decay leave parameters bit-identical") {
  Setup s;
  const ModelParams init = ModelParams::init(s.model, 3);
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.weight_decay = 0.0;
  tc.max_epochs = 1;
  const TrainResult r = train(init, s.train_set(Paradigm::dti), s.val_set(), tc);
  CHECK(r.params.values == init.values);
  CHECK(r.history.size() == 1);
}

TEST_CASE("batches are counted in targets") {
  Setup s;
  const ModelParams init = ModelParams::init(s.model, 3);
  TrainConfig tc;
  tc.max_epochs = 1;
  tc.batch_size = 10;
  const PromptSet dti = s.train_set(Paradigm::dti);
  const PromptSet sw = s.train_set(Paradigm::sliding_window);
  const TrainResult a = train(init, dti, s.val_set(), tc);
  const TrainResult b = train(init, sw, s.val_set(), tc);
  CHECK(a.steps_per_epoch == (dti.size() + 1) / 2);  // 2 prompts of 5 targets
  CHECK(b.steps_per_epoch == (sw.size() + 9) / 10);
  CHECK(a.train_targets == b.train_targets);
  CHECK(a.train_targets == sw.num_targets());
  CHECK(a.train_tokens == dti.num_tokens());
  CHECK(a.train_tokens < b.train_tokens);
}

TEST_CASE("training is deterministic and early stopping keeps the best epoch") {
  Setup s;
  const ModelParams init = ModelParams::init(s.model, 4);
  TrainConfig tc;
  tc.max_epochs = 4;
  tc.learning_rate = 1e-2;
  const PromptSet train_set = s.train_set(Paradigm::dti);
  const PromptSet val = s.val_set();
  const TrainResult a = train(init, train_set, val, tc);
  const TrainResult b = train(init, train_set, val, tc);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].val_auc == b.history[i].val_auc);
  }
  CHECK(a.params.values == b.params.values);

  double best = -1;
  for (const auto& h : a.history) best = std::max(best, h.val_auc.value_or(-1));
  REQUIRE(a.best_val_auc.has_value());
  CHECK(*a.best_val_auc == best);
  CHECK(evaluate(a.params, val).auc == a.best_val_auc);
  CHECK(a.history[a.best_epoch - 1].val_auc == a.best_val_auc);
}

TEST_CASE("patience stops training after non-improving epochs") {
  Setup s;
  const ModelParams init = ModelParams::init(s.model, 4);
  TrainConfig tc;
  tc.max_epochs = 10;
  tc.learning_rate = 0.0;  // no epoch can improve on the first
  tc.patience = 2;
  const TrainResult r = train(init, s.train_set(Paradigm::sliding_window), s.val_set(), tc);
  CHECK(r.history.size() == 3);
  CHECK(r.best_epoch == 1);
}

TEST_CASE("evaluation with a single label class reports an undefined AUC") {
  Setup s;
  Dataset val = s.split.val;
  for (auto& seq : val.sequences)
    for (auto& it : seq.interactions) it.label = 1;
  const PromptSet set = build_prompt_set(val, s.prompting, Paradigm::sliding_window);
  const MetricsReport r = evaluate(ModelParams::init(s.model, 1), set);
  CHECK_FALSE(r.auc.has_value());
  CHECK(std::isfinite(r.log_loss));
  CHECK(r.count == set.num_targets());
  CHECK(to_json(r)["auc"] == "undefined");

  const std::vector<double> scores(r.labels.begin(), r.labels.end());
  CHECK(log_loss(scores, r.labels) <= 1e-6);
  CHECK(f1(scores, r.labels) == 1.0);
}

TEST_CASE("serial and parallel evaluation agree") {
  Setup s;
  const ModelParams p = ModelParams::init(s.model, 2);
  const PromptSet val = s.val_set();
  const MetricsReport a = evaluate(p, val, kernels::Exec::serial);
  const MetricsReport b = evaluate(p, val, kernels::Exec::parallel);
  CHECK(a.scores == b.scores);
  CHECK(a.labels == b.labels);
  CHECK(a.auc == b.auc);
}

TEST_CASE("finite-difference error is smallest at the middle step size") {
  Setup s;
  ModelConfig mc = s.model;
  mc.reset.enabled = true;
  mc.init_std = 0.5;
  const ModelParams p = ModelParams::init(mc, 9);
  const PromptSet set = s.train_set(Paradigm::dti);
  auto ex = set.examples();
  ex.resize(2);
  std::vector<double> err;
  for (double eps : {1e-4, 1e-5, 1e-6})
    err.push_back(finite_difference_check(p, ex, eps, 10, 1).max_rel_error);
  CHECK(err[1] < 1e-4);
  CHECK(std::log(err[1]) <= 0.5 * (std::log(err[0]) + std::log(err[2])));
}

TEST_CASE("history csv") {
  std::vector<EpochRecord> h(2);
  h[0].epoch = 1;
  h[0].val_auc = 0.1;
  h[1].epoch = 2;
  test::TempDir dir;
  write_history_csv(h, dir / "h.csv");
  const std::string s = test::read_file(dir / "h.csv");
  CHECK(s.rfind("epoch,split,metric,value\n", 0) == 0);
  CHECK(s.find("1,val,auc,0.10000000000000001\n") != std::string::npos);
  CHECK(s.find("2,val,auc,undefined\n") != std::string::npos);
  CHECK(std::count(s.begin(), s.end(), '\n') == 11);
}

TEST_CASE("train config validation and paradigm parsing") {
  TrainConfig tc;
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  CHECK(parse_paradigm("sw") == Paradigm::sliding_window);
  CHECK(parse_paradigm("dti") == Paradigm::dti);
  CHECK_THROWS_AS(parse_paradigm("other"), ConfigError);
  nlohmann::json j = TrainConfig{};
  CHECK(nlohmann::json(j.get<TrainConfig>()) == j);
}
