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

// Prompt construction for the two training paradigms.
//
// A sliding-window prompt holds n context interactions and one target; a
// streaming prompt holds n context interactions followed by up to k targets.
// Tokenised layout: interactions are joined by [SEP] and every target is
// followed immediately by a [SUM] token:
//
//   c c c SEP c c c SEP ... t t t SUM SEP t t t SUM
//
// The attention plan restricts every token to the tokens of its own
// interaction plus the n interactions before it (capped at `token_cap`
// tokens), and never lets any query read a [SUM] or [PAD] key.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dti/data.hpp"
#include "json.hpp"

namespace dti {

struct PromptingConfig {
  std::size_t n = 20;            // context interactions
  std::size_t k = 1;             // targets per streaming prompt
  std::size_t token_cap = 1024;  // max attention span in tokens

  void validate() const;
};

void to_json(nlohmann::json& j, const PromptingConfig& c);
void from_json(const nlohmann::json& j, PromptingConfig& c);

struct Prompt {
  std::vector<Interaction> context;
  std::vector<Interaction> targets;
  std::vector<int> labels;  // aligned with targets
};

// Segment markers for tokens that do not belong to an interaction's text.
inline constexpr int kSepSegment = -1;
inline constexpr int kSumSegment = -2;

struct TokenizedPrompt {
  std::vector<int> token_ids;
  // Interaction ordinal for descriptor tokens, kSepSegment / kSumSegment otherwise.
  std::vector<int> segment;
  // Interaction that owns each token for windowing: separators belong to the
  // interaction they follow and a [SUM] belongs to its target.
  std::vector<int> owner;
  std::vector<std::size_t> sum_positions;
  std::vector<int> sum_labels;     // 0/1
  std::vector<int> sum_label_ids;  // [YES]/[NO]
  // Positional numbering with [SUM] skipped; -1 marks a [SUM].
  std::vector<int> position_ids;
  // Positions used for ALiBi distances. A [SUM] takes the position right
  // after its target's last token.
  std::vector<int> alibi_positions;
  std::size_t num_interactions = 0;
  std::size_t num_context = 0;  // interactions before the first target
  std::vector<std::size_t> interaction_begin;

  std::size_t size() const { return token_ids.size(); }
  bool is_sum(std::size_t t) const { return segment[t] == kSumSegment; }
};

std::vector<Prompt> build_sliding_window_prompts(const InteractionSequence& seq,
                                                 const PromptingConfig& cfg);
std::vector<Prompt> build_streaming_prompts(const InteractionSequence& seq,
                                            const PromptingConfig& cfg);

// An interaction whose descriptor tokens are all "[PAD]" tokenises to [PAD]
// only, separator included. Used to build position-shifted probe prompts.
TokenizedPrompt tokenize_prompt(const Prompt& prompt, const Vocabulary& vocab,
                                const PromptingConfig& cfg);

struct AttentionPlan {
  std::size_t n = 0;
  std::size_t token_cap = 0;
  std::vector<std::size_t> window_start;
  std::vector<bool> key_mask;     // attendable as a key
  std::vector<bool> sum_query;    // query row is a [SUM]
  std::vector<bool> pad_query;    // query row is [PAD]; produces no output
  std::vector<int> interaction;   // owner interaction per token
  std::vector<int> alibi_position;
  // Per-token distance (in interactions) to the nearest target at or after it.
  std::vector<int> target_distance;

  std::size_t size() const { return window_start.size(); }
  bool attendable(std::size_t q, std::size_t s) const;
  std::optional<int> alibi_distance(std::size_t q, std::size_t s) const;
  std::optional<int> blend_distance(std::size_t q, std::size_t s) const;
  // Widest span (t - window_start[t]) in the plan.
  std::size_t max_span() const;
};

AttentionPlan compute_attention_plan(const TokenizedPrompt& tp, const PromptingConfig& cfg);

// JSON-lines serialisation for inspection and replay.
nlohmann::json to_json(const TokenizedPrompt& tp);
TokenizedPrompt tokenized_prompt_from_json(const nlohmann::json& j);
void write_prompts_jsonl(const std::vector<TokenizedPrompt>& prompts,
                         const std::filesystem::path& path);
std::vector<TokenizedPrompt> read_prompts_jsonl(const std::filesystem::path& path);

// Dense text dump of a plan: one row per query, 1 = attendable.
std::string format_plan_matrix(const AttentionPlan& plan);

}  // namespace dti
