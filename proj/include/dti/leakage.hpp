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

// Finite-difference leakage curves, the slot-shift positional probe and the
// fix-toggling ablation grid.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dti/data.hpp"
#include "dti/model.hpp"
#include "dti/prompting.hpp"
#include "dti/training.hpp"

namespace dti {

struct ProbeConfig {
  std::size_t sum_index = static_cast<std::size_t>(-1);  // which [SUM]; default the last
  std::size_t directions = 3;                            // random unit directions per interaction
  double eps = 1e-5;
  std::uint64_t seed = 0;
};

struct SensitivityCurve {
  std::size_t n = 0;
  // index d = interaction distance from the probed target (0 unused when no
  // context sits there); NaN where no interaction exists at that distance.
  std::vector<double> by_distance;

  double max_in(std::size_t lo_exclusive, std::size_t hi_inclusive) const;
  double area_in(std::size_t lo_exclusive, std::size_t hi_inclusive) const;
};

// Mean |d yes-logit / d eps| when every descriptor token of one context
// interaction is shifted by eps * u, over random unit directions u, for each
// interaction distance 1..2n.
SensitivityCurve sensitivity_curve(const ModelParams& params, const TokenizedPrompt& tp,
                                   const AttentionPlan& plan, const ProbeConfig& probe = {});

struct ProbeReport {
  double divergence = 0.0;  // max over prompts and slots of |score_j - score_1|
  std::size_t prompts = 0;
  std::size_t slots = 0;
};

// Re-scores sliding-window prompts with j-1 all-[PAD] interactions inserted
// before the context, shifting every position as a slot-j target would be
// shifted in a streaming prompt, for j = 1..slots.
ProbeReport positional_probe(const ModelParams& params, const Dataset& eval,
                             const PromptingConfig& cfg, std::size_t slots,
                             std::size_t max_prompts = 200);

struct Variant {
  std::string name;
  bool positional_fix = true;  // position-free [SUM] with ALiBi
  bool reset = true;
};

// both fixes, positional fix only, reset only, neither.
std::vector<Variant> standard_variants();
Variant variant_by_name(const std::string& name);
ModelConfig apply_variant(ModelConfig base, const Variant& v);

struct AblationCell {
  std::string variant;
  std::size_t k = 0;
  std::optional<double> val_auc;
  double val_log_loss = 0.0;
  double val_f1 = 0.0;
  std::size_t best_epoch = 0;
  std::string status = "ok";
  std::string error;
};

struct AblationGrid {
  std::vector<std::size_t> k_values;
  std::vector<std::string> variants;
  std::vector<AblationCell> cells;

  const AblationCell& at(const std::string& variant, std::size_t k) const;
};

// Trains every (variant, k) cell from the same initial parameters and seed.
AblationGrid run_ablation_grid(const DataSplit& split, const ModelConfig& base_model,
                               const PromptingConfig& prompting, const TrainConfig& train_cfg,
                               const std::vector<std::size_t>& k_values,
                               const std::vector<Variant>& variants,
                               std::uint64_t init_seed);

void write_sensitivity_csv(const std::vector<std::pair<std::string, SensitivityCurve>>& curves,
                           const std::filesystem::path& path);
void write_ablation_csv(const AblationGrid& grid, const std::filesystem::path& path);

}  // namespace dti
