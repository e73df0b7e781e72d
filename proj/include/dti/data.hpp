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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace dti {

struct Interaction {
  std::int64_t item_id = 0;
  std::vector<std::string> descriptor_tokens;
  int label = 0;  // 0 or 1
  std::int64_t order_index = 0;

  bool operator==(const Interaction&) const = default;
};

struct InteractionSequence {
  std::int64_t user_id = 0;
  std::vector<Interaction> interactions;  // chronological

  bool operator==(const InteractionSequence&) const = default;
};

// Token <-> id mapping. Ids 0..4 are reserved for the special tokens below;
// everything else is assigned in first-occurrence order.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSep = 1;
  static constexpr int kSum = 2;
  static constexpr int kYes = 3;
  static constexpr int kNo = 4;
  static constexpr int kNumReserved = 5;

  Vocabulary();

  // Returns the id of `token`, inserting it when absent.
  int add(const std::string& token);
  // Throws dti::Error naming the token when it is unknown.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

std::string_view reserved_token_name(int id);

struct Dataset {
  std::vector<InteractionSequence> sequences;
  Vocabulary vocabulary;

  std::size_t num_interactions() const;
  bool operator==(const Dataset&) const = default;
};

struct SyntheticConfig {
  std::size_t num_users = 200;
  std::size_t items_per_user = 60;   // m
  std::size_t vocab_size = 8;        // quantisation levels per descriptor slot
  std::size_t tokens_per_interaction = 2;  // c
  std::size_t latent_dim = 2;
  double label_noise = 0.0;
  double history_weight = 1.0;
  std::size_t history_window = 10;   // how many previous items the history term averages
  std::size_t num_items = 400;       // catalogue size
  std::uint64_t rng_seed = 7;

  void validate() const;  // throws ConfigError
};

void to_json(nlohmann::json& j, const SyntheticConfig& c);
void from_json(const nlohmann::json& j, SyntheticConfig& c);

// Generator output together with the noise-free logits the labels were drawn
// from, aligned with `data.sequences[u].interactions[j]`.
struct SyntheticDataset {
  Dataset data;
  std::vector<std::vector<double>> clean_logits;
  std::vector<std::vector<int>> clean_labels;
};

SyntheticDataset generate_synthetic(const SyntheticConfig& config);
Dataset generate_synthetic_dataset(const SyntheticConfig& config);

// Reads `user_id,item_id,timestamp,label,item_text`. Users with fewer than
// kMinUserInteractions rows are dropped.
inline constexpr std::size_t kMinUserInteractions = 5;
Dataset load_interactions_csv(const std::filesystem::path& path);
void write_interactions_csv(const Dataset& dataset, const std::filesystem::path& path);

Vocabulary build_vocabulary(const Dataset& dataset);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// Per-user chronological split. Validation and test sequences are stored with
// their `context` preceding interactions prepended (taken from the earlier
// splits), so the first `context` entries of every val/test sequence are
// context only and everything after is a target.
struct DataSplit {
  Dataset train;
  Dataset val;
  Dataset test;
  std::size_t context = 0;
  std::size_t excluded_users = 0;
};

DataSplit chronological_split(const Dataset& dataset, std::size_t context,
                              const SplitRatios& ratios = {});

struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;
};
SplitSizes split_sizes(std::size_t m, const SplitRatios& ratios);

}  // namespace dti
