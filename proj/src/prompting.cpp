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

#include "dti/prompting.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dti/common.hpp"

namespace dti {

void PromptingConfig::validate() const {
  if (n == 0) throw ConfigError("prompting.n must be >= 1");
  if (k == 0) throw ConfigError("prompting.k must be >= 1");
  if (token_cap == 0) throw ConfigError("prompting.token_cap must be >= 1");
}

void to_json(nlohmann::json& j, const PromptingConfig& c) {
  j = nlohmann::json{{"n", c.n}, {"k", c.k}, {"token_cap", c.token_cap}};
}

void from_json(const nlohmann::json& j, PromptingConfig& c) {
  PromptingConfig d;
  c.n = j.value("n", d.n);
  c.k = j.value("k", d.k);
  c.token_cap = j.value("token_cap", d.token_cap);
}

namespace {

Prompt make_prompt(const std::vector<Interaction>& all, std::size_t ctx_lo, std::size_t tgt_lo,
                   std::size_t tgt_hi) {
  Prompt p;
  p.context.assign(all.begin() + static_cast<std::ptrdiff_t>(ctx_lo),
                   all.begin() + static_cast<std::ptrdiff_t>(tgt_lo));
  p.targets.assign(all.begin() + static_cast<std::ptrdiff_t>(tgt_lo),
                   all.begin() + static_cast<std::ptrdiff_t>(tgt_hi));
  for (const auto& t : p.targets) p.labels.push_back(t.label);
  return p;
}

bool is_padding(const Interaction& it) {
  return !it.descriptor_tokens.empty() &&
         std::all_of(it.descriptor_tokens.begin(), it.descriptor_tokens.end(),
                     [](const std::string& s) { return s == "[PAD]"; });
}

}  // namespace

std::vector<Prompt> build_sliding_window_prompts(const InteractionSequence& seq,
                                                 const PromptingConfig& cfg) {
  cfg.validate();
  const std::size_t m = seq.interactions.size();
  std::vector<Prompt> out;
  if (m <= cfg.n) {
    std::clog << "build_sliding_window_prompts: user " << seq.user_id << " has " << m
              << " interactions, need more than " << cfg.n << "\n";
    return out;
  }
  out.reserve(m - cfg.n);
  for (std::size_t t = cfg.n; t < m; ++t) out.push_back(make_prompt(seq.interactions, t - cfg.n, t, t + 1));
  return out;
}

std::vector<Prompt> build_streaming_prompts(const InteractionSequence& seq,
                                            const PromptingConfig& cfg) {
  cfg.validate();
  const std::size_t m = seq.interactions.size();
  std::vector<Prompt> out;
  if (m <= cfg.n) {
    std::clog << "build_streaming_prompts: user " << seq.user_id << " has " << m
              << " interactions, need more than " << cfg.n << "\n";
    return out;
  }
  out.reserve((m - cfg.n + cfg.k - 1) / cfg.k);
  for (std::size_t t = cfg.n; t < m; t += cfg.k)
    out.push_back(make_prompt(seq.interactions, t - cfg.n, t, std::min(t + cfg.k, m)));
  return out;
}

TokenizedPrompt tokenize_prompt(const Prompt& prompt, const Vocabulary& vocab,
                                const PromptingConfig& cfg) {
  cfg.validate();
  DTI_CHECK(prompt.labels.size() == prompt.targets.size(),
            "tokenize_prompt: labels and targets differ in length");
  TokenizedPrompt tp;
  tp.num_context = prompt.context.size();
  tp.num_interactions = prompt.context.size() + prompt.targets.size();

  int position = 0;
  const auto emit = [&](int token, int segment, int owner) {
    tp.token_ids.push_back(token);
    tp.segment.push_back(segment);
    tp.owner.push_back(owner);
    if (segment == kSumSegment) {
      tp.position_ids.push_back(-1);
      tp.alibi_positions.push_back(position);
    } else {
      tp.position_ids.push_back(position);
      tp.alibi_positions.push_back(position);
      ++position;
    }
  };

  bool prev_padding = false;
  for (std::size_t i = 0; i < tp.num_interactions; ++i) {
    const bool is_target = i >= tp.num_context;
    const Interaction& it = is_target ? prompt.targets[i - tp.num_context] : prompt.context[i];
    const int ord = static_cast<int>(i);
    if (i > 0) emit(prev_padding ? Vocabulary::kPad : Vocabulary::kSep, kSepSegment, ord - 1);
    tp.interaction_begin.push_back(tp.token_ids.size());
    for (const auto& tok : it.descriptor_tokens) emit(vocab.id(tok), ord, ord);
    if (is_target) {
      const int label = prompt.labels[i - tp.num_context];
      DTI_CHECK(label == 0 || label == 1, "tokenize_prompt: labels must be 0 or 1");
      tp.sum_positions.push_back(tp.token_ids.size());
      tp.sum_labels.push_back(label);
      tp.sum_label_ids.push_back(label ? Vocabulary::kYes : Vocabulary::kNo);
      emit(Vocabulary::kSum, kSumSegment, ord);
    }
    prev_padding = is_padding(it);
  }
  return tp;
}

bool AttentionPlan::attendable(std::size_t q, std::size_t s) const {
  return s <= q && s >= window_start[q] && key_mask[s];
}

std::optional<int> AttentionPlan::alibi_distance(std::size_t q, std::size_t s) const {
  if (!attendable(q, s)) return std::nullopt;
  return alibi_position[q] - alibi_position[s];
}

std::optional<int> AttentionPlan::blend_distance(std::size_t q, std::size_t s) const {
  if (!attendable(q, s)) return std::nullopt;
  return interaction[q] - interaction[s];
}

std::size_t AttentionPlan::max_span() const {
  std::size_t w = 0;
  for (std::size_t t = 0; t < window_start.size(); ++t) w = std::max(w, t - window_start[t]);
  return w;
}

AttentionPlan compute_attention_plan(const TokenizedPrompt& tp, const PromptingConfig& cfg) {
  cfg.validate();
  const std::size_t T = tp.size();
  AttentionPlan plan;
  plan.n = cfg.n;
  plan.token_cap = cfg.token_cap;
  plan.window_start.resize(T);
  plan.key_mask.resize(T);
  plan.sum_query.resize(T);
  plan.pad_query.resize(T);
  plan.interaction = tp.owner;
  plan.alibi_position = tp.alibi_positions;
  plan.target_distance.resize(T);

  const int n = static_cast<int>(cfg.n);
  const int first_target = static_cast<int>(tp.num_context);
  for (std::size_t t = 0; t < T; ++t) {
    const int owner = tp.owner[t];
    const int first_interaction = std::max(0, owner - n);
    std::size_t start = tp.interaction_begin[static_cast<std::size_t>(first_interaction)];
    if (t + 1 > cfg.token_cap) start = std::max(start, t + 1 - cfg.token_cap);
    plan.window_start[t] = start;
    const int tok = tp.token_ids[t];
    plan.sum_query[t] = tp.segment[t] == kSumSegment;
    plan.pad_query[t] = tok == Vocabulary::kPad;
    plan.key_mask[t] = !(plan.sum_query[t] || plan.pad_query[t]);
    plan.target_distance[t] = std::max(owner, first_target) - owner;
  }
  return plan;
}

nlohmann::json to_json(const TokenizedPrompt& tp) {
  return nlohmann::json{{"token_ids", tp.token_ids},
                        {"segment", tp.segment},
                        {"owner", tp.owner},
                        {"sum_positions", tp.sum_positions},
                        {"sum_labels", tp.sum_labels},
                        {"sum_label_ids", tp.sum_label_ids},
                        {"position_ids", tp.position_ids},
                        {"alibi_positions", tp.alibi_positions},
                        {"num_interactions", tp.num_interactions},
                        {"num_context", tp.num_context},
                        {"interaction_begin", tp.interaction_begin}};
}

TokenizedPrompt tokenized_prompt_from_json(const nlohmann::json& j) {
  TokenizedPrompt tp;
  j.at("token_ids").get_to(tp.token_ids);
  j.at("segment").get_to(tp.segment);
  j.at("owner").get_to(tp.owner);
  j.at("sum_positions").get_to(tp.sum_positions);
  j.at("sum_labels").get_to(tp.sum_labels);
  j.at("sum_label_ids").get_to(tp.sum_label_ids);
  j.at("position_ids").get_to(tp.position_ids);
  j.at("alibi_positions").get_to(tp.alibi_positions);
  j.at("num_interactions").get_to(tp.num_interactions);
  j.at("num_context").get_to(tp.num_context);
  j.at("interaction_begin").get_to(tp.interaction_begin);
  const std::size_t T = tp.token_ids.size();
  if (tp.segment.size() != T || tp.owner.size() != T || tp.position_ids.size() != T ||
      tp.alibi_positions.size() != T || tp.interaction_begin.size() != tp.num_interactions)
    throw Error("tokenized prompt record has inconsistent array lengths");
  return tp;
}

void write_prompts_jsonl(const std::vector<TokenizedPrompt>& prompts,
                         const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  for (const auto& tp : prompts) out << to_json(tp).dump() << '\n';
}

std::vector<TokenizedPrompt> read_prompts_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::vector<TokenizedPrompt> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(tokenized_prompt_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string format_plan_matrix(const AttentionPlan& plan) {
  std::ostringstream os;
  const std::size_t T = plan.size();
  for (std::size_t q = 0; q < T; ++q) {
    for (std::size_t s = 0; s < T; ++s) os << (s ? " " : "") << (plan.attendable(q, s) ? 1 : 0);
    os << '\n';
  }
  return os.str();
}

}  // namespace dti
