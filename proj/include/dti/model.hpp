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

// Small pre-norm decoder-only transformer with windowed attention, the
// distance-based key/value reset, [SUM]-token loss and hand-written
// reverse-mode gradients. Everything is double precision.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dti/attention.hpp"
#include "dti/kernels.hpp"
#include "dti/prompting.hpp"
#include "dti/tensor.hpp"
#include "json.hpp"

namespace dti {

struct ResetConfig {
  bool enabled = false;
  double y_min = 0.0;
  double y_max = 0.9;
  BlendGranularity granularity = BlendGranularity::per_query;
  // 1-indexed layers that blend their key/value inputs. Empty means every
  // layer from 2 up.
  std::vector<std::size_t> active_layers;

  void validate(std::size_t num_layers) const;
  bool active(std::size_t layer) const;  // 1-indexed
};

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t d_model = 16;
  std::size_t heads = 2;
  std::size_t ff_dim = 64;
  std::size_t vocab_size = 0;
  std::size_t max_positions = 1024;
  PositionalMode positional_mode = PositionalMode::none;
  // When false every token, [SUM] included, is numbered by its raw index for
  // both the positional encoding and ALiBi.
  bool sum_position_free = true;
  AlibiMode alibi = AlibiMode::sum_rows;
  double alibi_multiplier = 1.0;
  double rope_base = 10000.0;
  ResetConfig reset;
  double dropout = 0.0;
  double init_std = 0.02;

  void validate() const;
  std::size_t head_dim() const { return d_model / heads; }
  AttentionConfig attention() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct ParamTensor {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

// Offsets of every tensor inside the flat parameter vector.
struct ParamLayout {
  struct Layer {
    std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln2_g, ln2_b, w1, b1, w2, b2;
  };
  std::size_t tok_emb = 0, pos_emb = 0, lnf_g = 0, lnf_b = 0, w_out = 0, b_out = 0;
  std::vector<Layer> layer;
  std::vector<ParamTensor> tensors;
  std::size_t total = 0;

  static ParamLayout build(const ModelConfig& cfg);
  const ParamTensor& find(const std::string& name) const;
};

struct ModelParams {
  ModelConfig config;
  ParamLayout layout;
  std::vector<double> values;
  std::uint64_t seed = 0;

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);
  const double* at(std::size_t offset) const { return values.data() + offset; }
};

// Logistic reset schedule over interaction distance d with midpoint n/2.
double interpolation_ratio(double d, double n, double y_min, double y_max);

// alpha * h_initial + (1 - alpha) * h_layer_input, row-wise with one alpha per row.
Matrix hidden_state_blend(const Matrix& h_initial, const Matrix& h_layer_input,
                          std::span<const double> alpha);
// Same, with alpha = interpolation_ratio(distance[row], n, y_min, y_max).
Matrix hidden_state_blend(const Matrix& h_initial, const Matrix& h_layer_input,
                          std::span<const double> distance, double n, const ResetConfig& reset);

// Counts multiply-accumulates of one or more forward passes.
struct MacCounter {
  std::uint64_t linear = 0;     // every dense projection, vocab head included
  std::uint64_t attention = 0;  // 2 * d_model per attended (query, key) pair
  std::uint64_t tokens = 0;
  std::uint64_t targets = 0;
  std::uint64_t forward() const { return linear + attention; }
  MacCounter& operator+=(const MacCounter& o);
};

struct ForwardOptions {
  bool training = false;  // enables dropout
  std::uint64_t dropout_seed = 0;
  const Matrix* embedding_delta = nullptr;  // added to the raw token embeddings
  MacCounter* counter = nullptr;
  bool keep_hidden = false;
  kernels::Exec exec = kernels::Exec::serial;
};

struct SumLogits {
  Matrix logits;  // one row per [SUM], full vocabulary
  std::vector<double> yes, no;
};

struct LayerCache;

struct ForwardCache {
  std::vector<int> position_ids;
  AttentionPlan plan;  // plan with model-specific ALiBi positions
  Matrix x0;
  std::vector<LayerCache> layers;
  Matrix final_in;   // residual rows at [SUM] positions
  Matrix final_hat;  // normalised
  std::vector<double> final_rstd;
  Matrix final_out;
  ForwardCache();
  ~ForwardCache();
  ForwardCache(ForwardCache&&) noexcept;
  ForwardCache& operator=(ForwardCache&&) noexcept;
};

struct ForwardResult {
  SumLogits sum;
  std::vector<Matrix> hidden;  // residual stream after each layer when requested
};

ForwardResult forward(const ModelParams& params, const TokenizedPrompt& tp,
                      const AttentionPlan& plan, const ForwardOptions& opts = {},
                      ForwardCache* cache = nullptr);

// Attention weights of one head at a 0-indexed layer of a cached forward.
std::string format_layer_attention(const ForwardCache& cache, std::size_t layer, std::size_t head);

// exp(ly) / (exp(ly) + exp(ln)), computed without overflow.
double pointwise_score(double logit_yes, double logit_no);
std::vector<double> pointwise_scores(const SumLogits& s);

// Mean over [SUM] rows of the full-vocabulary cross-entropy of the label token.
double sum_token_loss(const SumLogits& s, std::span<const int> label_ids);

enum class LossWeighting { per_prompt, per_target };

struct PromptExample {
  const TokenizedPrompt* prompt = nullptr;
  const AttentionPlan* plan = nullptr;
};

struct GradientOptions {
  LossWeighting weighting = LossWeighting::per_prompt;
  double loss_scale = 1.0;
  bool training = false;
  std::uint64_t dropout_seed = 0;
  MacCounter* counter = nullptr;
  kernels::Exec exec = kernels::default_exec();
};

struct BatchGradient {
  double loss = 0.0;
  std::vector<double> grad;  // same layout as ModelParams::values
};

// Exact gradient of loss_scale * (batch loss). The batch loss is the mean of
// per-prompt losses, or the mean over all targets with per_target weighting.
BatchGradient compute_gradients(const ModelParams& params, std::span<const PromptExample> batch,
                                const GradientOptions& opts = {});

double batch_loss(const ModelParams& params, std::span<const PromptExample> batch,
                  LossWeighting weighting = LossWeighting::per_prompt);

// Raw little-endian doubles in `<stem>.bin`, a JSON manifest in `<stem>.json`.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& stem);
ModelParams load_checkpoint(const std::filesystem::path& stem);

}  // namespace dti
