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

#include "dti/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "dti/common.hpp"

namespace dti {

namespace {

constexpr std::array<std::string_view, Vocabulary::kNumReserved> kReservedNames = {
    "[PAD]", "[SEP]", "[SUM]", "[YES]", "[NO]"};

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

std::string_view reserved_token_name(int id) {
  DTI_CHECK(id >= 0 && id < Vocabulary::kNumReserved, "not a reserved token id");
  return kReservedNames[static_cast<std::size_t>(id)];
}

Vocabulary::Vocabulary() {
  for (auto name : kReservedNames) add(std::string(name));
}

int Vocabulary::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) throw Error("unknown token '" + token + "'");
  return it->second;
}

bool Vocabulary::contains(const std::string& token) const { return ids_.count(token) != 0; }

const std::string& Vocabulary::token(int id) const {
  DTI_CHECK(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(), "token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::size_t Dataset::num_interactions() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.interactions.size();
  return n;
}

void SyntheticConfig::validate() const {
  if (num_users == 0) throw ConfigError("synthetic.num_users must be >= 1");
  if (vocab_size == 0) throw ConfigError("synthetic.vocab_size must be >= 1");
  if (items_per_user == 0) throw ConfigError("synthetic.items_per_user must be >= 1");
  if (tokens_per_interaction == 0)
    throw ConfigError("synthetic.tokens_per_interaction must be >= 1");
  if (latent_dim == 0) throw ConfigError("synthetic.latent_dim must be >= 1");
  if (num_items == 0) throw ConfigError("synthetic.num_items must be >= 1");
  if (history_window == 0) throw ConfigError("synthetic.history_window must be >= 1");
  if (!(label_noise >= 0.0 && label_noise <= 1.0))
    throw ConfigError("synthetic.label_noise must lie in [0, 1]");
  if (!(history_weight >= 0.0 && history_weight <= 1.0))
    throw ConfigError("synthetic.history_weight must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const SyntheticConfig& c) {
  j = nlohmann::json{{"num_users", c.num_users},
                     {"items_per_user", c.items_per_user},
                     {"vocab_size", c.vocab_size},
                     {"tokens_per_interaction", c.tokens_per_interaction},
                     {"latent_dim", c.latent_dim},
                     {"label_noise", c.label_noise},
                     {"history_weight", c.history_weight},
                     {"history_window", c.history_window},
                     {"num_items", c.num_items},
                     {"rng_seed", c.rng_seed}};
}

void from_json(const nlohmann::json& j, SyntheticConfig& c) {
  SyntheticConfig d;
  c.num_users = j.value("num_users", d.num_users);
  c.items_per_user = j.value("items_per_user", d.items_per_user);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.tokens_per_interaction = j.value("tokens_per_interaction", d.tokens_per_interaction);
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.label_noise = j.value("label_noise", d.label_noise);
  c.history_weight = j.value("history_weight", d.history_weight);
  c.history_window = j.value("history_window", d.history_window);
  c.num_items = j.value("num_items", d.num_items);
  c.rng_seed = j.value("rng_seed", d.rng_seed);
}

// Items carry a quantised latent vector; each descriptor slot spells out the
// bucket of one latent coordinate, so the text fully determines the latent.
// The clean logit mixes a user-affinity term with the agreement between the
// item and the mean of the user's previous `history_window` items; the label
// is the sign of that logit, flipped with probability `label_noise`.
SyntheticDataset generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  const std::size_t dim = config.latent_dim;
  const std::size_t levels = config.vocab_size;
  const std::size_t slots = config.tokens_per_interaction;

  std::mt19937_64 rng(config.rng_seed);
  std::uniform_int_distribution<std::size_t> bucket_dist(0, levels - 1);
  std::uniform_int_distribution<std::size_t> item_dist(0, config.num_items - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  struct Item {
    std::vector<double> latent;
    std::vector<std::string> tokens;
  };
  std::vector<Item> catalogue(config.num_items);
  for (auto& item : catalogue) {
    std::vector<std::size_t> buckets(dim);
    item.latent.resize(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      buckets[d] = bucket_dist(rng);
      item.latent[d] = -1.0 + (2.0 * static_cast<double>(buckets[d]) + 1.0) /
                                  static_cast<double>(levels);
    }
    for (std::size_t s = 0; s < slots; ++s)
      item.tokens.push_back("f" + std::to_string(s) + "_" + std::to_string(buckets[s % dim]));
  }

  SyntheticDataset out;
  out.data.sequences.reserve(config.num_users);
  for (std::size_t u = 0; u < config.num_users; ++u) {
    std::vector<double> user(dim);
    double norm = 0.0;
    for (auto& x : user) {
      x = gauss(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : user) x /= (norm > 0 ? norm : 1.0);

    InteractionSequence seq;
    seq.user_id = static_cast<std::int64_t>(u);
    std::vector<std::size_t> picked;
    std::vector<double> logits;
    std::vector<int> clean;
    for (std::size_t j = 0; j < config.items_per_user; ++j) {
      const std::size_t idx = item_dist(rng);
      const Item& item = catalogue[idx];

      double affinity = 0.0;
      for (std::size_t d = 0; d < dim; ++d) affinity += user[d] * item.latent[d];
      double history = 0.0;
      const std::size_t lo = j > config.history_window ? j - config.history_window : 0;
      if (j > lo) {
        for (std::size_t p = lo; p < j; ++p) {
          const Item& prev = catalogue[picked[p]];
          for (std::size_t d = 0; d < dim; ++d) history += item.latent[d] * prev.latent[d];
        }
        history /= static_cast<double>(j - lo);
      }
      const double z =
          (1.0 - config.history_weight) * affinity + config.history_weight * history;
      const int clean_label = z > 0.0 ? 1 : 0;
      const bool flip = unit(rng) < config.label_noise;

      Interaction it;
      it.item_id = static_cast<std::int64_t>(idx);
      it.descriptor_tokens = item.tokens;
      it.label = flip ? 1 - clean_label : clean_label;
      it.order_index = static_cast<std::int64_t>(j);
      seq.interactions.push_back(std::move(it));
      picked.push_back(idx);
      logits.push_back(z);
      clean.push_back(clean_label);
    }
    out.data.sequences.push_back(std::move(seq));
    out.clean_logits.push_back(std::move(logits));
    out.clean_labels.push_back(std::move(clean));
  }
  out.data.vocabulary = build_vocabulary(out.data);
  return out;
}

Dataset generate_synthetic_dataset(const SyntheticConfig& config) {
  return generate_synthetic(config).data;
}

Dataset load_interactions_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open interactions file '" + path.string() + "'");

  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  struct Row {
    std::int64_t timestamp;
    Interaction interaction;
  };
  std::map<std::int64_t, std::vector<Row>> per_user;  // ordered by user id
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header) {
      if (line.empty()) continue;
      if (line != "user_id,item_id,timestamp,label,item_text")
        throw Error("line 1: expected header 'user_id,item_id,timestamp,label,item_text'");
      have_header = true;
      continue;
    }
    if (line.empty()) continue;
    std::array<std::string_view, 5> fields;
    std::string_view rest(line);
    for (std::size_t f = 0; f < 4; ++f) {
      const auto comma = rest.find(',');
      if (comma == std::string_view::npos)
        throw Error("line " + std::to_string(line_no) + ": expected 5 comma-separated fields");
      fields[f] = rest.substr(0, comma);
      rest.remove_prefix(comma + 1);
    }
    fields[4] = rest;

    std::int64_t user = 0, item = 0, ts = 0;
    int label = 0;
    if (!parse_number(fields[0], user))
      throw Error("line " + std::to_string(line_no) + ": bad user_id");
    if (!parse_number(fields[1], item) || item < 0)
      throw Error("line " + std::to_string(line_no) + ": bad item_id");
    if (!parse_number(fields[2], ts))
      throw Error("line " + std::to_string(line_no) + ": bad timestamp");
    if (!parse_number(fields[3], label) || (label != 0 && label != 1))
      throw Error("line " + std::to_string(line_no) + ": label must be 0 or 1");
    auto tokens = split_whitespace(fields[4]);
    if (tokens.empty()) throw Error("line " + std::to_string(line_no) + ": empty item_text");

    Row row;
    row.timestamp = ts;
    row.interaction.item_id = item;
    row.interaction.label = label;
    row.interaction.descriptor_tokens = std::move(tokens);
    per_user[user].push_back(std::move(row));
  }
  if (!have_header || per_user.empty())
    throw Error("interactions file '" + path.string() + "' contains no data rows");

  Dataset ds;
  for (auto& [user, rows] : per_user) {
    if (rows.size() < kMinUserInteractions) continue;
    // Stable: equal timestamps keep input row order.
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.timestamp < b.timestamp; });
    InteractionSequence seq;
    seq.user_id = user;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rows[i].interaction.order_index = static_cast<std::int64_t>(i);
      seq.interactions.push_back(std::move(rows[i].interaction));
    }
    ds.sequences.push_back(std::move(seq));
  }
  ds.vocabulary = build_vocabulary(ds);
  return ds;
}

void write_interactions_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "user_id,item_id,timestamp,label,item_text\n";
  for (const auto& seq : dataset.sequences) {
    for (const auto& it : seq.interactions) {
      out << seq.user_id << ',' << it.item_id << ',' << it.order_index << ',' << it.label << ',';
      for (std::size_t t = 0; t < it.descriptor_tokens.size(); ++t)
        out << (t ? " " : "") << it.descriptor_tokens[t];
      out << '\n';
    }
  }
}

Vocabulary build_vocabulary(const Dataset& dataset) {
  Vocabulary vocab;
  for (const auto& seq : dataset.sequences)
    for (const auto& it : seq.interactions)
      for (const auto& tok : it.descriptor_tokens) vocab.add(tok);
  return vocab;
}

SplitSizes split_sizes(std::size_t m, const SplitRatios& r) {
  // The epsilon keeps products like 0.8 * 10 from flooring to 7.
  const auto floor_of = [m](double ratio) {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(m) + 1e-9));
  };
  SplitSizes s;
  s.train = std::min(m, floor_of(r.train));
  s.val = std::min(m - s.train, floor_of(r.val));
  s.test = m - s.train - s.val;
  return s;
}

DataSplit chronological_split(const Dataset& dataset, std::size_t context,
                              const SplitRatios& ratios) {
  if (!(ratios.train > 0 && ratios.val > 0 && ratios.test > 0))
    throw ConfigError("split ratios must be positive");
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1");

  DataSplit out;
  out.context = context;
  out.train.vocabulary = out.val.vocabulary = out.test.vocabulary = dataset.vocabulary;
  for (const auto& seq : dataset.sequences) {
    const std::size_t m = seq.interactions.size();
    const SplitSizes s = split_sizes(m, ratios);
    if (m < context + 3 || s.train < context + 1 || s.val == 0 || s.test == 0) {
      ++out.excluded_users;
      continue;
    }
    const auto& all = seq.interactions;
    const auto take = [&](std::size_t lo, std::size_t hi) {
      InteractionSequence part;
      part.user_id = seq.user_id;
      part.interactions.assign(all.begin() + static_cast<std::ptrdiff_t>(lo),
                               all.begin() + static_cast<std::ptrdiff_t>(hi));
      return part;
    };
    out.train.sequences.push_back(take(0, s.train));
    out.val.sequences.push_back(take(s.train - context, s.train + s.val));
    out.test.sequences.push_back(take(s.train + s.val - context, m));
  }
  if (out.excluded_users > 0)
    std::clog << "chronological_split: excluded " << out.excluded_users
              << " user(s) too short for context " << context << "\n";
  return out;
}

}  // namespace dti
