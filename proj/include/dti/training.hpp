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

#pragma once

// Optimisation loop, evaluation and the finite-difference gradient check.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dti/data.hpp"
#include "dti/model.hpp"
#include "dti/prompting.hpp"
#include "json.hpp"

namespace dti {

enum class Paradigm { sliding_window, dti };
std::string to_string(Paradigm p);
Paradigm parse_paradigm(const std::string& s);

struct TrainConfig {
  Paradigm paradigm = Paradigm::sliding_window;
  double learning_rate = 3e-3;
  double weight_decay = 0.001;
  double warmup_ratio = 0.1;
  // Targets per optimiser step. Streaming prompts carry k targets each, so a
  // streaming batch holds max(1, batch_size / k) prompts.
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::size_t patience = 2;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  LossWeighting weighting = LossWeighting::per_prompt;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Tokenised prompts with their plans, kept together so examples can point
// into stable storage.
struct PromptSet {
  std::vector<TokenizedPrompt> prompts;
  std::vector<AttentionPlan> plans;

  std::size_t size() const { return prompts.size(); }
  std::size_t num_targets() const;
  std::size_t num_tokens() const;
  std::vector<PromptExample> examples() const;
  std::vector<int> labels() const;  // one per [SUM], in prompt order
};

// Builds and tokenises prompts for every sequence. Sequences of a val/test
// split already carry their context, so sliding-window prompts over them
// score exactly the split's targets.
PromptSet build_prompt_set(const Dataset& data, const PromptingConfig& cfg, Paradigm paradigm);

// Learning rate at 1-indexed `step`: linear warm-up over ceil(ratio * total)
// steps, cosine decay to zero afterwards.
double scheduled_learning_rate(double base, std::size_t step, std::size_t total_steps,
                               double warmup_ratio);
std::size_t warmup_steps(std::size_t total_steps, double warmup_ratio);

// Decoupled weight decay Adam. Decay is scaled by the step's learning rate.
class AdamW {
 public:
  AdamW(std::size_t size, double beta1, double beta2, double epsilon, double weight_decay);
  void step(std::vector<double>& params, const std::vector<double>& grad, double lr);
  std::size_t steps() const { return t_; }

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_, wd_;
  std::size_t t_ = 0;
};

struct MetricsReport {
  std::optional<double> auc;
  double log_loss = 0.0;
  double f1 = 0.0;
  std::size_t count = 0;
  double seconds = 0.0;
  std::vector<double> scores;
  std::vector<int> labels;
};

nlohmann::json to_json(const MetricsReport& r);

// Scores every [SUM] in `set` with pointwise_score.
MetricsReport evaluate(const ModelParams& params, const PromptSet& set,
                       kernels::Exec exec = kernels::default_exec());

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_auc;
  double val_log_loss = 0.0;
  double val_f1 = 0.0;
  double learning_rate = 0.0;  // at the epoch's last step
  double seconds = 0.0;  // optimiser steps only, validation excluded
};

struct TrainResult {
  ModelParams params;  // best-validation checkpoint
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::optional<double> best_val_auc;
  std::size_t steps = 0;
  std::size_t steps_per_epoch = 0;
  bool diverged = false;
  std::uint64_t train_tokens = 0;   // tokens fed through training steps
  std::uint64_t train_targets = 0;  // [SUM] targets in those steps
  MacCounter train_macs;            // forward MACs of training steps
  double train_seconds = 0.0;
};

TrainResult train(const ModelParams& init, const PromptSet& train_set, const PromptSet& val_set,
                  const TrainConfig& cfg, kernels::Exec exec = kernels::default_exec());

// Long-format history rows (epoch, split, metric, value). Values are printed
// with round-trip precision; wall-clock is left out.
void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);
std::string format_value(double v);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::map<std::string, double> per_tensor;  // worst relative error per tensor
  std::size_t checked = 0;
};

// Relative error is |a - n| / max(|a|, |n|, kGradCheckFloor).
inline constexpr double kGradCheckFloor = 1e-6;

// Central differences on a random subsample of every tensor (`per_tensor`
// entries each, half of them drawn from entries with non-zero analytic
// gradient) against compute_gradients.
GradCheckReport finite_difference_check(const ModelParams& params,
                                        std::span<const PromptExample> batch, double eps = 1e-5,
                                        std::size_t per_tensor = 20, std::uint64_t seed = 0);

}  // namespace dti
