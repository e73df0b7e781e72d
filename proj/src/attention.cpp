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

#include "dti/attention.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "dti/common.hpp"

namespace dti {

std::string to_string(PositionalMode m) {
  switch (m) {
    case PositionalMode::absolute: return "absolute";
    case PositionalMode::rope: return "rope";
    case PositionalMode::none: return "none";
  }
  return "?";
}

std::string to_string(AlibiMode m) {
  switch (m) {
    case AlibiMode::off: return "off";
    case AlibiMode::sum_rows: return "sum_rows";
    case AlibiMode::all_rows: return "all_rows";
  }
  return "?";
}

std::string to_string(BlendGranularity g) {
  return g == BlendGranularity::per_query ? "per_query" : "per_token";
}

PositionalMode parse_positional_mode(const std::string& s) {
  if (s == "absolute") return PositionalMode::absolute;
  if (s == "rope") return PositionalMode::rope;
  if (s == "none") return PositionalMode::none;
  throw ConfigError("positional_mode must be one of absolute|rope|none, got '" + s + "'");
}

AlibiMode parse_alibi_mode(const std::string& s) {
  if (s == "off") return AlibiMode::off;
  if (s == "sum_rows") return AlibiMode::sum_rows;
  if (s == "all_rows") return AlibiMode::all_rows;
  throw ConfigError("alibi must be one of off|sum_rows|all_rows, got '" + s + "'");
}

BlendGranularity parse_blend_granularity(const std::string& s) {
  if (s == "per_query") return BlendGranularity::per_query;
  if (s == "per_token") return BlendGranularity::per_token;
  throw ConfigError("granularity must be per_query or per_token, got '" + s + "'");
}

void AttentionConfig::validate() const {
  if (num_heads == 0 || head_dim == 0) throw ConfigError("attention heads/head_dim must be >= 1");
  if (positional_mode == PositionalMode::rope && head_dim % 2 != 0)
    throw ConfigError("rope requires an even head_dim");
  if (alibi != AlibiMode::off && !(alibi_multiplier > 0.0))
    throw ConfigError("alibi slope multiplier must be > 0");
}

std::vector<double> alibi_slopes(std::size_t heads, double multiplier) {
  std::vector<double> s(heads);
  for (std::size_t h = 0; h < heads; ++h)
    s[h] = multiplier * std::pow(2.0, -8.0 * static_cast<double>(h + 1) / static_cast<double>(heads));
  return s;
}

double alibi_bias(int p, int q, double slope) {
  if (p < q) throw Error("alibi_bias: key position is after the query (acausal pair)");
  return -slope * static_cast<double>(p - q);
}

void rope_rotate(std::span<double> v, double position, double base) {
  const std::size_t D = v.size();
  for (std::size_t i = 0; 2 * i + 1 < D; ++i) {
    const double theta = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(D));
    const double angle = position * theta;
    const double c = std::cos(angle), s = std::sin(angle);
    const double x = v[2 * i], y = v[2 * i + 1];
    v[2 * i] = c * x - s * y;
    v[2 * i + 1] = s * x + c * y;
  }
}

void apply_positional_encoding(Matrix& embeddings, std::span<const int> position_ids,
                               PositionalMode mode, const Matrix* table, double rope_base) {
  DTI_CHECK(position_ids.size() == embeddings.rows(),
            "apply_positional_encoding: one position id per row required");
  if (mode == PositionalMode::none) return;
  if (mode == PositionalMode::rope && embeddings.cols() % 2 != 0)
    throw ConfigError("rope requires an even embedding width");
  if (mode == PositionalMode::absolute)
    DTI_CHECK(table != nullptr && table->cols() == embeddings.cols(),
              "absolute positional mode needs a position table of matching width");
  for (std::size_t t = 0; t < embeddings.rows(); ++t) {
    const int p = position_ids[t];
    if (p < 0) continue;
    auto row = embeddings.row(t);
    if (mode == PositionalMode::absolute) {
      if (static_cast<std::size_t>(p) >= table->rows())
        throw Error("position id " + std::to_string(p) + " exceeds the position table");
      const auto pe = table->row(static_cast<std::size_t>(p));
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += pe[c];
    } else {
      rope_rotate(row, static_cast<double>(p), rope_base);
    }
  }
}

double KeyValueBlend::ratio(const AttentionPlan& plan, std::size_t q, std::size_t s) const {
  if (granularity == BlendGranularity::per_token) return ratio_by_token[s];
  const int d = plan.interaction[q] - plan.interaction[s];
  const auto idx = static_cast<std::size_t>(std::max(0, d));
  return idx < ratio_by_distance.size() ? ratio_by_distance[idx] : ratio_by_distance.back();
}

double AttentionCache::weight(std::size_t head, std::size_t q, std::size_t s,
                              const AttentionPlan& plan) const {
  if (s > q || s < plan.window_start[q]) return 0.0;
  return weights[head * per_head + offset[q] + (s - plan.window_start[q])];
}

namespace {

struct RowContext {
  const AttentionInputs& in;
  const AttentionPlan& plan;
  const AttentionConfig& cfg;
  std::vector<double> slopes;
  double scale;
};

bool row_has_alibi(const RowContext& ctx, std::size_t t) {
  return ctx.cfg.alibi == AlibiMode::all_rows ||
         (ctx.cfg.alibi == AlibiMode::sum_rows && ctx.plan.sum_query[t]);
}

// Fills out row t (all heads) and its cached weights; returns attended pairs.
std::uint64_t attend_row(const RowContext& ctx, std::size_t t, Matrix& out,
                         AttentionCache& cache, std::vector<double>& scratch_k) {
  const auto& plan = ctx.plan;
  const std::size_t dk = ctx.cfg.head_dim;
  const std::size_t lo = plan.window_start[t];
  const std::size_t width = t - lo + 1;
  const KeyValueBlend* blend = ctx.in.blend;
  auto orow = out.row(t);
  std::fill(orow.begin(), orow.end(), 0.0);
  if (plan.pad_query[t]) return 0;

  std::uint64_t pairs = 0;
  for (std::size_t s = lo; s <= t; ++s) pairs += plan.key_mask[s] ? 1 : 0;
  if (pairs == 0) throw Error("windowed_attention: empty window for query " + std::to_string(t));

  const bool alibi = row_has_alibi(ctx, t);
  scratch_k.resize(dk);
  for (std::size_t h = 0; h < ctx.cfg.num_heads; ++h) {
    const std::size_t c0 = h * dk;
    double* w = cache.weights.data() + h * cache.per_head + cache.offset[t];
    const double* qrow = ctx.in.q.data() + t * ctx.in.q.cols() + c0;
    double max_score = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t s = lo + j;
      if (!plan.key_mask[s]) {
        w[j] = 0.0;
        continue;
      }
      const double* krow = ctx.in.k.data() + s * ctx.in.k.cols() + c0;
      double score = 0.0;
      if (blend) {
        const double a = blend->ratio(plan, t, s);
        const double* k0row = blend->k0->data() + s * blend->k0->cols() + c0;
        for (std::size_t c = 0; c < dk; ++c) score += qrow[c] * (a * k0row[c] + (1.0 - a) * krow[c]);
      } else {
        for (std::size_t c = 0; c < dk; ++c) score += qrow[c] * krow[c];
      }
      score *= ctx.scale;
      if (alibi)
        score += alibi_bias(plan.alibi_position[t], plan.alibi_position[s], ctx.slopes[h]);
      w[j] = score;
      max_score = std::max(max_score, score);
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      if (!plan.key_mask[lo + j]) continue;
      w[j] = std::exp(w[j] - max_score);
      denom += w[j];
    }
    double* o = orow.data() + c0;
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t s = lo + j;
      if (!plan.key_mask[s]) continue;
      w[j] /= denom;
      const double* vrow = ctx.in.v.data() + s * ctx.in.v.cols() + c0;
      if (blend) {
        const double a = blend->ratio(plan, t, s);
        const double* v0row = blend->v0->data() + s * blend->v0->cols() + c0;
        for (std::size_t c = 0; c < dk; ++c) o[c] += w[j] * (a * v0row[c] + (1.0 - a) * vrow[c]);
      } else {
        for (std::size_t c = 0; c < dk; ++c) o[c] += w[j] * vrow[c];
      }
    }
  }
  return pairs;
}

AttentionOutput prepare(const AttentionInputs& in, const AttentionPlan& plan,
                        const AttentionConfig& cfg) {
  cfg.validate();
  const std::size_t T = plan.size();
  const std::size_t d = cfg.num_heads * cfg.head_dim;
  DTI_CHECK(in.q.rows() == T && in.k.rows() == T && in.v.rows() == T,
            "windowed_attention: q/k/v rows must match the plan");
  DTI_CHECK(in.q.cols() == d && in.k.cols() == d && in.v.cols() == d,
            "windowed_attention: q/k/v width must equal heads * head_dim");
  if (in.blend) {
    DTI_CHECK(in.blend->k0 && in.blend->v0, "windowed_attention: blend needs k0 and v0");
    DTI_CHECK(in.blend->k0->rows() == T && in.blend->v0->rows() == T,
              "windowed_attention: blend streams must match the plan");
    if (in.blend->granularity == BlendGranularity::per_token)
      DTI_CHECK(in.blend->ratio_by_token.size() == T, "windowed_attention: per-token ratios");
    else
      DTI_CHECK(!in.blend->ratio_by_distance.empty(), "windowed_attention: distance ratios");
  }
  AttentionOutput res;
  res.out = Matrix(T, d);
  res.cache.offset.resize(T);
  std::size_t total = 0;
  for (std::size_t t = 0; t < T; ++t) {
    res.cache.offset[t] = total;
    total += t - plan.window_start[t] + 1;
  }
  res.cache.per_head = total;
  res.cache.weights.assign(total * cfg.num_heads, 0.0);
  return res;
}

RowContext make_context(const AttentionInputs& in, const AttentionPlan& plan,
                        const AttentionConfig& cfg) {
  return RowContext{in, plan, cfg, alibi_slopes(cfg.num_heads, cfg.alibi_multiplier),
                    1.0 / std::sqrt(static_cast<double>(cfg.head_dim))};
}

// Gradient for one head across all queries. Heads touch disjoint columns.
void backward_head(const RowContext& ctx, const AttentionCache& cache, const Matrix& dout,
                   AttentionGrads& g, std::size_t h) {
  const auto& plan = ctx.plan;
  const std::size_t dk = ctx.cfg.head_dim;
  const std::size_t c0 = h * dk;
  const KeyValueBlend* blend = ctx.in.blend;
  const std::size_t T = plan.size();
  std::vector<double> dw;
  for (std::size_t t = 0; t < T; ++t) {
    if (plan.pad_query[t]) continue;
    const std::size_t lo = plan.window_start[t];
    const std::size_t width = t - lo + 1;
    const double* w = cache.weights.data() + h * cache.per_head + cache.offset[t];
    const double* go = dout.data() + t * dout.cols() + c0;
    const double* qrow = ctx.in.q.data() + t * ctx.in.q.cols() + c0;
    dw.assign(width, 0.0);
    double wdw = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t s = lo + j;
      if (!plan.key_mask[s]) continue;
      const double* vrow = ctx.in.v.data() + s * ctx.in.v.cols() + c0;
      double acc = 0.0;
      if (blend) {
        const double a = blend->ratio(plan, t, s);
        const double* v0row = blend->v0->data() + s * blend->v0->cols() + c0;
        for (std::size_t c = 0; c < dk; ++c) acc += go[c] * (a * v0row[c] + (1.0 - a) * vrow[c]);
        double* dv = g.dv.data() + s * g.dv.cols() + c0;
        double* dv0 = g.dv0.data() + s * g.dv0.cols() + c0;
        for (std::size_t c = 0; c < dk; ++c) {
          dv[c] += (1.0 - a) * w[j] * go[c];
          dv0[c] += a * w[j] * go[c];
        }
      } else {
        for (std::size_t c = 0; c < dk; ++c) acc += go[c] * vrow[c];
        double* dv = g.dv.data() + s * g.dv.cols() + c0;
        for (std::size_t c = 0; c < dk; ++c) dv[c] += w[j] * go[c];
      }
      dw[j] = acc;
      wdw += w[j] * acc;
    }
    double* dq = g.dq.data() + t * g.dq.cols() + c0;
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t s = lo + j;
      if (!plan.key_mask[s]) continue;
      const double ds = w[j] * (dw[j] - wdw) * ctx.scale;
      if (ds == 0.0) continue;
      const double* krow = ctx.in.k.data() + s * ctx.in.k.cols() + c0;
      double* dkr = g.dk.data() + s * g.dk.cols() + c0;
      if (blend) {
        const double a = blend->ratio(plan, t, s);
        const double* k0row = blend->k0->data() + s * blend->k0->cols() + c0;
        double* dk0r = g.dk0.data() + s * g.dk0.cols() + c0;
        for (std::size_t c = 0; c < dk; ++c) {
          dq[c] += ds * (a * k0row[c] + (1.0 - a) * krow[c]);
          dkr[c] += (1.0 - a) * ds * qrow[c];
          dk0r[c] += a * ds * qrow[c];
        }
      } else {
        for (std::size_t c = 0; c < dk; ++c) {
          dq[c] += ds * krow[c];
          dkr[c] += ds * qrow[c];
        }
      }
    }
  }
}

}  // namespace

namespace serial {
AttentionOutput windowed_attention(const AttentionInputs& in, const AttentionPlan& plan,
                                   const AttentionConfig& cfg) {
  AttentionOutput res = prepare(in, plan, cfg);
  const RowContext ctx = make_context(in, plan, cfg);
  std::vector<double> scratch;
  for (std::size_t t = 0; t < plan.size(); ++t)
    res.attended_pairs += attend_row(ctx, t, res.out, res.cache, scratch);
  return res;
}
}  // namespace serial

namespace parallel {
AttentionOutput windowed_attention(const AttentionInputs& in, const AttentionPlan& plan,
                                   const AttentionConfig& cfg) {
  AttentionOutput res = prepare(in, plan, cfg);
  const RowContext ctx = make_context(in, plan, cfg);
  const auto T = static_cast<std::ptrdiff_t>(plan.size());
  std::uint64_t pairs = 0;
  bool failed = false;
  std::string message;
#pragma omp parallel reduction(+ : pairs)
  {
    std::vector<double> scratch;
#pragma omp for schedule(dynamic, 16)
    for (std::ptrdiff_t t = 0; t < T; ++t) {
      try {
        pairs += attend_row(ctx, static_cast<std::size_t>(t), res.out, res.cache, scratch);
      } catch (const std::exception& e) {
#pragma omp critical
        {
          failed = true;
          message = e.what();
        }
      }
    }
  }
  if (failed) throw Error(message);
  res.attended_pairs = pairs;
  return res;
}
}  // namespace parallel

AttentionOutput windowed_attention(const AttentionInputs& in, const AttentionPlan& plan,
                                   const AttentionConfig& cfg, kernels::Exec exec) {
  return exec == kernels::Exec::parallel ? parallel::windowed_attention(in, plan, cfg)
                                         : serial::windowed_attention(in, plan, cfg);
}

void windowed_attention_backward(const AttentionInputs& in, const AttentionPlan& plan,
                                 const AttentionConfig& cfg, const AttentionCache& cache,
                                 const Matrix& dout, AttentionGrads& grads, kernels::Exec exec) {
  const std::size_t T = plan.size();
  const std::size_t d = cfg.num_heads * cfg.head_dim;
  DTI_CHECK(dout.rows() == T && dout.cols() == d, "attention backward: dout shape");
  DTI_CHECK(grads.dq.rows() == T && grads.dk.rows() == T && grads.dv.rows() == T,
            "attention backward: gradient buffers must be sized like the inputs");
  if (in.blend)
    DTI_CHECK(grads.dk0.rows() == T && grads.dv0.rows() == T,
              "attention backward: blend gradient buffers missing");
  const RowContext ctx = make_context(in, plan, cfg);
  const auto H = static_cast<std::ptrdiff_t>(cfg.num_heads);
  if (exec == kernels::Exec::parallel) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t h = 0; h < H; ++h)
      backward_head(ctx, cache, dout, grads, static_cast<std::size_t>(h));
  } else {
    for (std::ptrdiff_t h = 0; h < H; ++h)
      backward_head(ctx, cache, dout, grads, static_cast<std::size_t>(h));
  }
}

ReceptiveField receptive_field(std::size_t t, std::size_t layer, const AttentionPlan& plan) {
  DTI_CHECK(layer >= 1, "receptive_field: layer must be >= 1");
  DTI_CHECK(t < plan.size(), "receptive_field: token out of range");
  std::size_t lo = t;
  for (std::size_t l = 0; l < layer; ++l) {
    std::size_t s = plan.window_start[lo];
    while (s < lo && !plan.key_mask[s]) ++s;
    lo = std::min(lo, s);
  }
  return ReceptiveField{t, layer, lo, t};
}

std::size_t receptive_field_bound(std::size_t t, std::size_t layer, std::size_t window_tokens) {
  const std::size_t reach = layer * window_tokens;
  return t > reach ? t - reach : 0;
}

std::string format_attention_weights(const AttentionCache& cache, const AttentionPlan& plan,
                                     std::size_t head) {
  std::ostringstream os;
  os << std::setprecision(6);
  for (std::size_t q = 0; q < plan.size(); ++q) {
    for (std::size_t s = 0; s < plan.size(); ++s)
      os << (s ? " " : "") << cache.weight(head, q, s, plan);
    os << '\n';
  }
  return os.str();
}

}  // namespace dti
