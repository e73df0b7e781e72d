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

// Config-driven experiment runs: single runs, paradigm comparisons, plot data
// and run manifests.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dti/data.hpp"
#include "dti/flops.hpp"
#include "dti/leakage.hpp"
#include "dti/model.hpp"
#include "dti/prompting.hpp"
#include "dti/training.hpp"
#include "json.hpp"

namespace dti {

struct DatasetSource {
  std::string kind = "synthetic";  // synthetic | csv
  SyntheticConfig synthetic;
  std::string csv_path;
  SplitRatios split;
};

struct ExperimentConfig {
  DatasetSource dataset;
  PromptingConfig prompting;
  ModelConfig model;  // vocab_size 0 means "take it from the dataset"
  TrainConfig train;
  std::vector<std::size_t> k_list{5, 10};
  // Applied on top of `model` for every run. Empty uses `model` as written.
  std::string variant = "both_fixes";
  std::string output_dir = "runs/default";
  std::uint64_t seed = 1;  // parameter initialisation
  bool dump_attention = false;

  // Field-level checks; throws ConfigError. Does not touch the filesystem
  // except to confirm a csv source exists.
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Resolves a relative output directory against DTI_OUTPUT_ROOT when set.
std::filesystem::path resolve_output_dir(const std::string& dir);

struct PreparedData {
  Dataset dataset;
  DataSplit split;
  std::size_t tokens_per_interaction = 0;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

struct RunSummary {
  std::filesystem::path directory;
  TrainResult train;
  MetricsReport val;
  MetricsReport test;
  ModelConfig model;  // resolved
};

// Trains, evaluates and accounts one configuration into cfg.output_dir.
// Refuses to write into an existing non-empty directory.
RunSummary run_experiment(const ExperimentConfig& cfg);

// Same pipeline without touching the filesystem.
RunSummary run_in_memory(const ExperimentConfig& cfg, const PreparedData& data);

struct ComparisonRow {
  std::string paradigm;  // sliding_window | dti
  std::size_t k = 1;
  std::string variant;
  std::optional<double> auc;
  double log_loss = 0.0;
  double f1 = 0.0;
  std::size_t epochs = 0;
  double seconds_per_epoch = 0.0;
  double train_macs_per_epoch = 0.0;
  double tokens_per_target = 0.0;
  double formula_reduction = 1.0;        // N*k/(N+K), N = nc, K = kc
  double measured_reduction = 1.0;  // SW MACs per epoch / these MACs per epoch
  double wall_reduction_pct = 0.0;  // 100 * (1 - seconds_per_epoch / SW seconds_per_epoch)
  std::string status = "ok";
  std::string error;
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;
};

// Trains the sliding-window baseline and dti at every k of cfg.k_list, all
// under cfg.variant. Writes comparison.csv/json and a manifest when `write` is
// set.
ComparisonReport compare_paradigms(const ExperimentConfig& cfg, bool write = true);

void write_comparison_csv(const ComparisonReport& r, const std::filesystem::path& path);

// Long-format rows run_id,k,variant,epoch,metric,value collected from the
// history.csv of every run directory. Values are copied verbatim.
void emit_plot_data(const std::vector<std::filesystem::path>& runs,
                    const std::filesystem::path& out);

struct ManifestEntry {
  std::string path;  // relative to the run directory
  std::uintmax_t bytes = 0;
  std::string sha256;
};

std::string sha256_file(const std::filesystem::path& path);

// Hashes every regular file in `dir` (except manifest.json) and writes
// manifest.json.
void write_manifest(const std::filesystem::path& dir, const nlohmann::json& config,
                    const std::string& started, const std::string& status);
std::string utc_timestamp();

}  // namespace dti
