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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "dti/data.hpp"
#include "dti/model.hpp"
#include "dti/prompting.hpp"

namespace dti::test {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "dti_test_XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline Dataset small_dataset(std::size_t users, std::size_t m, std::size_t c,
                             std::uint64_t seed = 7, double noise = 0.0) {
  SyntheticConfig s;
  s.num_users = users;
  s.items_per_user = m;
  s.tokens_per_interaction = c;
  s.rng_seed = seed;
  s.label_noise = noise;
  return generate_synthetic_dataset(s);
}

inline ModelConfig small_model(std::size_t vocab, std::size_t layers = 2, std::size_t d = 8) {
  ModelConfig cfg;
  cfg.layers = layers;
  cfg.d_model = d;
  cfg.heads = 2;
  cfg.ff_dim = 2 * d;
  cfg.vocab_size = vocab;
  cfg.init_std = 0.5;
  return cfg;
}

struct Tokenized {
  TokenizedPrompt prompt;
  AttentionPlan plan;
};

inline Tokenized tokenize(const Prompt& p, const Vocabulary& v, const PromptingConfig& cfg) {
  Tokenized t;
  t.prompt = tokenize_prompt(p, v, cfg);
  t.plan = compute_attention_plan(t.prompt, cfg);
  return t;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace dti::test
