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

// Windowed causal attention over an AttentionPlan, positional encodings and
// ALiBi, plus the structural receptive-field calculation.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dti/kernels.hpp"
#include "dti/prompting.hpp"
#include "dti/tensor.hpp"

namespace dti {

enum class PositionalMode { absolute, rope, none };
enum class AlibiMode { off, sum_rows, all_rows };
enum class BlendGranularity { per_query, per_token };

std::string to_string(PositionalMode m);
std::string to_string(AlibiMode m);
std::string to_string(BlendGranularity g);
PositionalMode parse_positional_mode(const std::string& s);
AlibiMode parse_alibi_mode(const std::string& s);
BlendGranularity parse_blend_granularity(const std::string& s);

struct AttentionConfig {
  std::size_t num_heads = 2;
  std::size_t head_dim = 8;
  PositionalMode positional_mode = PositionalMode::none;
  AlibiMode alibi = AlibiMode::sum_rows;
  double alibi_multiplier = 1.0;
  double rope_base = 10000.0;

  void validate() const;
};

// Geometric per-head slopes 2^(-8(h+1)/H), scaled by `multiplier`.
std::vector<double> alibi_slopes(std::size_t heads, double multiplier);

// -slope * (p - q). Throws for p < q.
double alibi_bias(int p, int q, double slope);

// Rotates consecutive pairs (2i, 2i+1) by position * base^(-2i/D). A negative
// position rotates backwards (the transpose), which is what backprop needs.
void rope_rotate(std::span<double> v, double position, double base);

// Position ids of -1 mark tokens that must not be encoded. `table` is the
// learned absolute-position table, required in absolute mode only.
void apply_positional_encoding(Matrix& embeddings, std::span<const int> position_ids,
                               PositionalMode mode, const Matrix* table = nullptr,
                               double rope_base = 10000.0);

// Distance-dependent blending of key/value streams: the key seen by a query
// is ratio * k0 + (1 - ratio) * k, and likewise for values.
struct KeyValueBlend {
  BlendGranularity granularity = BlendGranularity::per_query;
  std::vector<double> ratio_by_distance;  // per_query, indexed by interaction distance
  std::vector<double> ratio_by_token;     // per_token, indexed by key token
  const Matrix* k0 = nullptr;
  const Matrix* v0 = nullptr;

  double ratio(const AttentionPlan& plan, std::size_t q, std::size_t s) const;
};

struct AttentionInputs {
  const Matrix& q;
  const Matrix& k;
  const Matrix& v;
  const KeyValueBlend* blend = nullptr;
};

// Softmax weights kept for the backward pass: for each head and query, one
// entry per key in [window_start[t], t]. Masked keys hold exact zeros.
struct AttentionCache {
  std::vector<std::size_t> offset;  // per query, into each head's weight block
  std::size_t per_head = 0;
  std::vector<double> weights;      // heads * per_head

  double weight(std::size_t head, std::size_t q, std::size_t s, const AttentionPlan& plan) const;
};

struct AttentionOutput {
  Matrix out;
  AttentionCache cache;
  std::uint64_t attended_pairs = 0;  // (query, key) pairs with structural non-zero weight
};

AttentionOutput windowed_attention(const AttentionInputs& in, const AttentionPlan& plan,
                                   const AttentionConfig& cfg,
                                   kernels::Exec exec = kernels::default_exec());

struct AttentionGrads {
  Matrix dq, dk, dv, dk0, dv0;
};

// Accumulates into `grads`, which must be sized like the inputs (dk0/dv0 only
// when a blend is present).
void windowed_attention_backward(const AttentionInputs& in, const AttentionPlan& plan,
                                 const AttentionConfig& cfg, const AttentionCache& cache,
                                 const Matrix& dout, AttentionGrads& grads,
                                 kernels::Exec exec = kernels::default_exec());

namespace serial {
AttentionOutput windowed_attention(const AttentionInputs& in, const AttentionPlan& plan,
                                   const AttentionConfig& cfg);
}
namespace parallel {
AttentionOutput windowed_attention(const AttentionInputs& in, const AttentionPlan& plan,
                                   const AttentionConfig& cfg);
}

struct ReceptiveField {
  std::size_t token = 0;
  std::size_t layer = 0;
  std::size_t lo = 0;
  std::size_t hi = 0;
};

// Lowest layer-0 position that can structurally influence the layer-`layer`
// state of token t (through windows and unmasked keys).
ReceptiveField receptive_field(std::size_t t, std::size_t layer, const AttentionPlan& plan);

// max(0, t - layer * window_tokens)
std::size_t receptive_field_bound(std::size_t t, std::size_t layer, std::size_t window_tokens);

// Text dump of one head's attention weights, one query row per line.
std::string format_attention_weights(const AttentionCache& cache, const AttentionPlan& plan,
                                     std::size_t head);

}  // namespace dti
