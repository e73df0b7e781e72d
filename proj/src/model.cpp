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

#include "dti/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "dti/common.hpp"

#ifdef DTI_HAVE_OPENMP
#include <omp.h>
#endif

namespace dti {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double unit_hash(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  const std::uint64_t h = splitmix64(seed ^ splitmix64(a * 0x100000001B3ULL + b));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace

struct LayerCache {
  Matrix x_in;
  Matrix a_hat, a;
  std::vector<double> rstd1;
  Matrix q, k, v;
  bool reset = false;
  Matrix a0_hat, a0;
  std::vector<double> rstd0;
  Matrix k0, v0;
  KeyValueBlend blend;
  AttentionCache attn;
  Matrix attn_out;
  std::vector<double> drop1;
  Matrix x_mid;
  Matrix b_hat, b;
  std::vector<double> rstd2;
  Matrix u, g;
  std::vector<double> drop2;
};

ForwardCache::ForwardCache() = default;
ForwardCache::~ForwardCache() = default;
ForwardCache::ForwardCache(ForwardCache&&) noexcept = default;
ForwardCache& ForwardCache::operator=(ForwardCache&&) noexcept = default;

void ResetConfig::validate(std::size_t num_layers) const {
  if (y_min < 0.0 || y_max > 1.0 || y_min > y_max)
    throw ConfigError("reset ratios must satisfy 0 <= y_min <= y_max <= 1");
  for (auto l : active_layers)
    if (l < 2 || l > num_layers)
      throw ConfigError("reset.active_layers entries must lie in [2, layers]");
}

bool ResetConfig::active(std::size_t layer) const {
  if (!enabled) return false;
  if (active_layers.empty()) return layer >= 2;
  return std::find(active_layers.begin(), active_layers.end(), layer) != active_layers.end();
}

void ModelConfig::validate() const {
  if (layers == 0) throw ConfigError("model.layers must be >= 1");
  if (heads == 0 || d_model == 0 || d_model % heads != 0)
    throw ConfigError("model.d_model must be a positive multiple of model.heads");
  if (ff_dim == 0) throw ConfigError("model.ff_dim must be >= 1");
  if (vocab_size <= static_cast<std::size_t>(Vocabulary::kNumReserved))
    throw ConfigError("model.vocab_size must exceed the reserved tokens");
  if (max_positions == 0) throw ConfigError("model.max_positions must be >= 1");
  if (positional_mode == PositionalMode::rope && d_model % 2 != 0)
    throw ConfigError("rope requires an even d_model");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model.dropout must lie in [0, 1)");
  if (!(init_std > 0.0)) throw ConfigError("model.init_std must be > 0");
  attention().validate();
  reset.validate(layers);
}

AttentionConfig ModelConfig::attention() const {
  AttentionConfig a;
  a.num_heads = heads;
  a.head_dim = heads ? d_model / heads : 0;
  a.positional_mode = positional_mode;
  a.alibi = alibi;
  a.alibi_multiplier = alibi_multiplier;
  a.rope_base = rope_base;
  return a;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"layers", c.layers},
                     {"d_model", c.d_model},
                     {"heads", c.heads},
                     {"ff_dim", c.ff_dim},
                     {"vocab_size", c.vocab_size},
                     {"max_positions", c.max_positions},
                     {"positional_mode", to_string(c.positional_mode)},
                     {"sum_position_free", c.sum_position_free},
                     {"alibi", to_string(c.alibi)},
                     {"alibi_multiplier", c.alibi_multiplier},
                     {"rope_base", c.rope_base},
                     {"reset",
                      {{"enabled", c.reset.enabled},
                       {"y_min", c.reset.y_min},
                       {"y_max", c.reset.y_max},
                       {"granularity", to_string(c.reset.granularity)},
                       {"active_layers", c.reset.active_layers}}},
                     {"dropout", c.dropout},
                     {"init_std", c.init_std}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.layers = j.value("layers", d.layers);
  c.d_model = j.value("d_model", d.d_model);
  c.heads = j.value("heads", d.heads);
  c.ff_dim = j.value("ff_dim", d.ff_dim);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_positions = j.value("max_positions", d.max_positions);
  c.positional_mode = parse_positional_mode(j.value("positional_mode", to_string(d.positional_mode)));
  c.sum_position_free = j.value("sum_position_free", d.sum_position_free);
  c.alibi = parse_alibi_mode(j.value("alibi", to_string(d.alibi)));
  c.alibi_multiplier = j.value("alibi_multiplier", d.alibi_multiplier);
  c.rope_base = j.value("rope_base", d.rope_base);
  c.reset = d.reset;
  if (j.contains("reset")) {
    const auto& r = j.at("reset");
    c.reset.enabled = r.value("enabled", d.reset.enabled);
    c.reset.y_min = r.value("y_min", d.reset.y_min);
    c.reset.y_max = r.value("y_max", d.reset.y_max);
    c.reset.granularity =
        parse_blend_granularity(r.value("granularity", to_string(d.reset.granularity)));
    c.reset.active_layers = r.value("active_layers", d.reset.active_layers);
  }
  c.dropout = j.value("dropout", d.dropout);
  c.init_std = j.value("init_std", d.init_std);
}

ParamLayout ParamLayout::build(const ModelConfig& cfg) {
  ParamLayout p;
  const auto add = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    p.tensors.push_back(ParamTensor{name, p.total, rows, cols});
    p.total += rows * cols;
    return p.tensors.back().offset;
  };
  const std::size_t d = cfg.d_model, f = cfg.ff_dim, V = cfg.vocab_size;
  p.tok_emb = add("tok_emb", V, d);
  p.pos_emb = add("pos_emb", cfg.max_positions, d);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l + 1) + ".";
    Layer L{};
    L.ln1_g = add(pre + "ln1_g", 1, d);
    L.ln1_b = add(pre + "ln1_b", 1, d);
    L.wq = add(pre + "wq", d, d);
    L.bq = add(pre + "bq", 1, d);
    L.wk = add(pre + "wk", d, d);
    L.bk = add(pre + "bk", 1, d);
    L.wv = add(pre + "wv", d, d);
    L.bv = add(pre + "bv", 1, d);
    L.wo = add(pre + "wo", d, d);
    L.bo = add(pre + "bo", 1, d);
    L.ln2_g = add(pre + "ln2_g", 1, d);
    L.ln2_b = add(pre + "ln2_b", 1, d);
    L.w1 = add(pre + "w1", d, f);
    L.b1 = add(pre + "b1", 1, f);
    L.w2 = add(pre + "w2", f, d);
    L.b2 = add(pre + "b2", 1, d);
    p.layer.push_back(L);
  }
  p.lnf_g = add("lnf_g", 1, d);
  p.lnf_b = add("lnf_b", 1, d);
  p.w_out = add("w_out", d, V);
  p.b_out = add("b_out", 1, V);
  return p;
}

const ParamTensor& ParamLayout::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw Error("no parameter tensor named '" + name + "'");
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  p.layout = ParamLayout::build(cfg);
  p.values.assign(p.layout.total, 0.0);
  p.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (const auto& t : p.layout.tensors) {
    double* w = p.values.data() + t.offset;
    const bool is_gain = t.name.ends_with("_g");
    const bool is_bias = t.rows == 1 && !is_gain;
    if (is_gain) {
      std::fill(w, w + t.size(), 1.0);
    } else if (is_bias) {
      continue;
    } else if (t.name == "tok_emb" || t.name == "pos_emb") {
      for (std::size_t i = 0; i < t.size(); ++i) w[i] = cfg.init_std * gauss(rng);
    } else {
      const double s = 1.0 / std::sqrt(static_cast<double>(t.rows));
      for (std::size_t i = 0; i < t.size(); ++i) w[i] = s * gauss(rng);
    }
  }
  return p;
}

double interpolation_ratio(double d, double n, double y_min, double y_max) {
  if (y_min > y_max) throw ConfigError("interpolation_ratio: y_min > y_max");
  DTI_CHECK(d >= 0.0, "interpolation_ratio: distance must be >= 0");
  const double s = 1.0 / (1.0 + std::exp(-(d - n / 2.0)));
  return y_min + (y_max - y_min) * s;
}

Matrix hidden_state_blend(const Matrix& h_initial, const Matrix& h_layer_input,
                          std::span<const double> alpha) {
  DTI_CHECK(h_initial.rows() == h_layer_input.rows() && h_initial.cols() == h_layer_input.cols(),
            "hidden_state_blend: shape mismatch");
  DTI_CHECK(alpha.size() == h_initial.rows(), "hidden_state_blend: one ratio per row");
  Matrix out(h_initial.rows(), h_initial.cols());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const double a = alpha[r];
    for (std::size_t c = 0; c < out.cols(); ++c)
      out(r, c) = a * h_initial(r, c) + (1.0 - a) * h_layer_input(r, c);
  }
  return out;
}

Matrix hidden_state_blend(const Matrix& h_initial, const Matrix& h_layer_input,
                          std::span<const double> distance, double n, const ResetConfig& reset) {
  std::vector<double> alpha(distance.size());
  for (std::size_t i = 0; i < distance.size(); ++i)
    alpha[i] = interpolation_ratio(distance[i], n, reset.y_min, reset.y_max);
  return hidden_state_blend(h_initial, h_layer_input, alpha);
}

MacCounter& MacCounter::operator+=(const MacCounter& o) {
  linear += o.linear;
  attention += o.attention;
  tokens += o.tokens;
  targets += o.targets;
  return *this;
}

namespace {

void layer_norm(const Matrix& x, const double* g, const double* b, Matrix& hat,
                std::vector<double>& rstd, Matrix& out) {
  const std::size_t T = x.rows(), d = x.cols();
  hat = Matrix(T, d);
  out = Matrix(T, d);
  rstd.assign(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const auto xr = x.row(t);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double r = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd[t] = r;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (xr[c] - mean) * r;
      hat(t, c) = h;
      out(t, c) = g[c] * h + b[c];
    }
  }
}

// dx += LN'(dout); dg/db accumulate.
void layer_norm_backward(const Matrix& dout, const Matrix& hat, const std::vector<double>& rstd,
                         const double* g, double* dg, double* db, Matrix& dx) {
  const std::size_t T = dout.rows(), d = dout.cols();
  std::vector<double> dh(d);
  for (std::size_t t = 0; t < T; ++t) {
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double go = dout(t, c);
      dg[c] += go * hat(t, c);
      db[c] += go;
      dh[c] = go * g[c];
      m1 += dh[c];
      m2 += dh[c] * hat(t, c);
    }
    m1 /= static_cast<double>(d);
    m2 /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) dx(t, c) += rstd[t] * (dh[c] - m1 - hat(t, c) * m2);
  }
}

void linear(kernels::Exec exec, const Matrix& x, const double* w, const double* b,
            std::size_t out_dim, Matrix& y, MacCounter* counter) {
  const std::size_t T = x.rows(), in = x.cols();
  y = Matrix(T, out_dim);
  kernels::gemm(exec, x.flat(), {w, in * out_dim}, y.flat(), T, in, out_dim);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < out_dim; ++c) y(t, c) += b[c];
  if (counter) counter->linear += static_cast<std::uint64_t>(T * in * out_dim);
}

// dW += x^T dy, db += colsum(dy), dx (+)= dy W^T.
void linear_backward(kernels::Exec exec, const Matrix& x, const double* w, const Matrix& dy,
                     double* dw, double* db, Matrix* dx) {
  const std::size_t T = x.rows(), in = x.cols(), out = dy.cols();
  kernels::gemm_tn_acc(exec, x.flat(), dy.flat(), {dw, in * out}, T, in, out);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < out; ++c) db[c] += dy(t, c);
  if (dx) kernels::gemm_nt(exec, dy.flat(), {w, in * out}, dx->flat(), T, out, in, true);
}

double gelu(double u) {
  return 0.5 * u * (1.0 + std::tanh(kGeluScale * (u + kGeluCubic * u * u * u)));
}

double gelu_grad(double u) {
  const double th = std::tanh(kGeluScale * (u + kGeluCubic * u * u * u));
  return 0.5 * (1.0 + th) +
         0.5 * u * (1.0 - th * th) * kGeluScale * (1.0 + 3.0 * kGeluCubic * u * u);
}

std::vector<double> dropout_mask(double p, std::uint64_t seed, std::size_t layer, std::size_t site,
                                 std::size_t count) {
  std::vector<double> mask(count, 1.0);
  const double keep = 1.0 / (1.0 - p);
  const std::uint64_t s = seed ^ splitmix64(layer * 16 + site);
  for (std::size_t i = 0; i < count; ++i) mask[i] = unit_hash(s, i, site) < p ? 0.0 : keep;
  return mask;
}

void check_finite(const Matrix& m, const std::string& where) {
  for (double v : m.flat())
    if (!std::isfinite(v)) throw Error("non-finite activation at " + where);
}

KeyValueBlend make_blend(const LayerCache& lc) {
  KeyValueBlend b = lc.blend;
  b.k0 = &lc.k0;
  b.v0 = &lc.v0;
  return b;
}

}  // namespace

ForwardResult forward(const ModelParams& params, const TokenizedPrompt& tp,
                      const AttentionPlan& plan, const ForwardOptions& opts, ForwardCache* cache) {
  const ModelConfig& cfg = params.config;
  const ParamLayout& L = params.layout;
  const std::size_t T = tp.size(), d = cfg.d_model, f = cfg.ff_dim, V = cfg.vocab_size;
  DTI_CHECK(plan.size() == T, "forward: plan does not match the prompt");
  DTI_CHECK(T > 0, "forward: empty prompt");
  ForwardCache local;
  ForwardCache& fc = cache ? *cache : local;
  fc.layers.clear();
  fc.layers.resize(cfg.layers);

  fc.plan = plan;
  fc.position_ids.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    fc.position_ids[t] = cfg.sum_position_free ? tp.position_ids[t] : static_cast<int>(t);
    if (!cfg.sum_position_free) fc.plan.alibi_position[t] = static_cast<int>(t);
  }

  fc.x0 = Matrix(T, d);
  for (std::size_t t = 0; t < T; ++t) {
    const int id = tp.token_ids[t];
    DTI_CHECK(id >= 0 && static_cast<std::size_t>(id) < V, "forward: token id outside vocabulary");
    const double* e = params.at(L.tok_emb + static_cast<std::size_t>(id) * d);
    std::copy(e, e + d, fc.x0.row(t).begin());
  }
  if (opts.embedding_delta) {
    DTI_CHECK(opts.embedding_delta->rows() == T && opts.embedding_delta->cols() == d,
              "forward: embedding delta shape");
    for (std::size_t i = 0; i < fc.x0.size(); ++i) fc.x0.data()[i] += opts.embedding_delta->data()[i];
  }
  if (cfg.positional_mode == PositionalMode::absolute) {
    for (std::size_t t = 0; t < T; ++t) {
      const int p = fc.position_ids[t];
      if (p < 0) continue;
      if (static_cast<std::size_t>(p) >= cfg.max_positions)
        throw ConfigError("position " + std::to_string(p) + " exceeds model.max_positions");
      const double* pe = params.at(L.pos_emb + static_cast<std::size_t>(p) * d);
      for (std::size_t c = 0; c < d; ++c) fc.x0(t, c) += pe[c];
    }
  } else {
    apply_positional_encoding(fc.x0, fc.position_ids, cfg.positional_mode, nullptr, cfg.rope_base);
  }

  const AttentionConfig acfg = cfg.attention();
  const bool dropout = opts.training && cfg.dropout > 0.0;
  ForwardResult result;
  Matrix x = fc.x0;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& P = L.layer[l];
    LayerCache& lc = fc.layers[l];
    lc.x_in = x;
    layer_norm(x, params.at(P.ln1_g), params.at(P.ln1_b), lc.a_hat, lc.rstd1, lc.a);
    linear(opts.exec, lc.a, params.at(P.wq), params.at(P.bq), d, lc.q, opts.counter);
    linear(opts.exec, lc.a, params.at(P.wk), params.at(P.bk), d, lc.k, opts.counter);
    linear(opts.exec, lc.a, params.at(P.wv), params.at(P.bv), d, lc.v, opts.counter);
    lc.reset = cfg.reset.active(l + 1);
    if (lc.reset) {
      layer_norm(fc.x0, params.at(P.ln1_g), params.at(P.ln1_b), lc.a0_hat, lc.rstd0, lc.a0);
      linear(opts.exec, lc.a0, params.at(P.wk), params.at(P.bk), d, lc.k0, opts.counter);
      linear(opts.exec, lc.a0, params.at(P.wv), params.at(P.bv), d, lc.v0, opts.counter);
      lc.blend.granularity = cfg.reset.granularity;
      const double n = static_cast<double>(plan.n);
      if (cfg.reset.granularity == BlendGranularity::per_query) {
        lc.blend.ratio_by_distance.resize(plan.n + 1);
        for (std::size_t dd = 0; dd <= plan.n; ++dd)
          lc.blend.ratio_by_distance[dd] =
              interpolation_ratio(static_cast<double>(dd), n, cfg.reset.y_min, cfg.reset.y_max);
      } else {
        lc.blend.ratio_by_token.resize(T);
        for (std::size_t s = 0; s < T; ++s)
          lc.blend.ratio_by_token[s] = interpolation_ratio(
              static_cast<double>(plan.target_distance[s]), n, cfg.reset.y_min, cfg.reset.y_max);
      }
    }
    const KeyValueBlend blend = make_blend(lc);
    const AttentionInputs in{lc.q, lc.k, lc.v, lc.reset ? &blend : nullptr};
    AttentionOutput ao = windowed_attention(in, fc.plan, acfg, opts.exec);
    if (opts.counter) opts.counter->attention += ao.attended_pairs * 2 * d;
    lc.attn = std::move(ao.cache);
    lc.attn_out = std::move(ao.out);

    Matrix o;
    linear(opts.exec, lc.attn_out, params.at(P.wo), params.at(P.bo), d, o, opts.counter);
    if (dropout) {
      lc.drop1 = dropout_mask(cfg.dropout, opts.dropout_seed, l, 0, o.size());
      for (std::size_t i = 0; i < o.size(); ++i) o.data()[i] *= lc.drop1[i];
    }
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += o.data()[i];
    lc.x_mid = x;

    layer_norm(x, params.at(P.ln2_g), params.at(P.ln2_b), lc.b_hat, lc.rstd2, lc.b);
    linear(opts.exec, lc.b, params.at(P.w1), params.at(P.b1), f, lc.u, opts.counter);
    lc.g = Matrix(T, f);
    for (std::size_t i = 0; i < lc.u.size(); ++i) lc.g.data()[i] = gelu(lc.u.data()[i]);
    Matrix y;
    linear(opts.exec, lc.g, params.at(P.w2), params.at(P.b2), d, y, opts.counter);
    if (dropout) {
      lc.drop2 = dropout_mask(cfg.dropout, opts.dropout_seed, l, 1, y.size());
      for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] *= lc.drop2[i];
    }
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += y.data()[i];
    check_finite(x, "layer " + std::to_string(l + 1));
    if (opts.keep_hidden) result.hidden.push_back(x);
  }

  const std::size_t S = tp.sum_positions.size();
  fc.final_in = Matrix(S, d);
  for (std::size_t i = 0; i < S; ++i) {
    const auto r = x.row(tp.sum_positions[i]);
    std::copy(r.begin(), r.end(), fc.final_in.row(i).begin());
  }
  layer_norm(fc.final_in, params.at(L.lnf_g), params.at(L.lnf_b), fc.final_hat, fc.final_rstd,
             fc.final_out);
  linear(opts.exec, fc.final_out, params.at(L.w_out), params.at(L.b_out), V, result.sum.logits,
         opts.counter);
  check_finite(result.sum.logits, "output projection");
  if (opts.counter) {
    opts.counter->tokens += T;
    opts.counter->targets += S;
  }
  result.sum.yes.resize(S);
  result.sum.no.resize(S);
  for (std::size_t i = 0; i < S; ++i) {
    result.sum.yes[i] = result.sum.logits(i, Vocabulary::kYes);
    result.sum.no[i] = result.sum.logits(i, Vocabulary::kNo);
  }
  return result;
}

std::string format_layer_attention(const ForwardCache& cache, std::size_t layer, std::size_t head) {
  DTI_CHECK(layer < cache.layers.size(), "format_layer_attention: layer out of range");
  return format_attention_weights(cache.layers[layer].attn, cache.plan, head);
}

double pointwise_score(double logit_yes, double logit_no) {
  const double z = logit_yes - logit_no;
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<double> pointwise_scores(const SumLogits& s) {
  std::vector<double> out(s.yes.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pointwise_score(s.yes[i], s.no[i]);
  return out;
}

namespace {

// Per-row cross-entropy; fills softmax probabilities into `prob` when given.
double row_cross_entropy(std::span<const double> logits, int label, double* prob) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  if (prob)
    for (std::size_t c = 0; c < logits.size(); ++c) prob[c] = std::exp(logits[c] - lse);
  return lse - logits[static_cast<std::size_t>(label)];
}

}  // namespace

double sum_token_loss(const SumLogits& s, std::span<const int> label_ids) {
  const std::size_t S = s.logits.rows();
  DTI_CHECK(label_ids.size() == S, "sum_token_loss: one label per [SUM] required");
  if (S == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < S; ++i) total += row_cross_entropy(s.logits.row(i), label_ids[i], nullptr);
  return total / static_cast<double>(S);
}

namespace {

// Backward through one prompt. `dlogits` is d(loss)/d(logits); gradients are
// accumulated into `grad`.
void backward(const ModelParams& params, const TokenizedPrompt& tp, const ForwardCache& fc,
              const Matrix& dlogits, kernels::Exec exec, double* grad) {
  const ModelConfig& cfg = params.config;
  const ParamLayout& L = params.layout;
  const std::size_t T = tp.size(), d = cfg.d_model, f = cfg.ff_dim, V = cfg.vocab_size;
  const std::size_t S = tp.sum_positions.size();

  Matrix dfinal_out(S, d);
  linear_backward(exec, fc.final_out, params.at(L.w_out), dlogits, grad + L.w_out, grad + L.b_out,
                  &dfinal_out);
  Matrix dfinal_in(S, d);
  layer_norm_backward(dfinal_out, fc.final_hat, fc.final_rstd, params.at(L.lnf_g), grad + L.lnf_g,
                      grad + L.lnf_b, dfinal_in);
  Matrix dx(T, d);
  for (std::size_t i = 0; i < S; ++i) {
    auto src = dfinal_in.row(i);
    auto dst = dx.row(tp.sum_positions[i]);
    for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
  }
  (void)V;

  Matrix dx0(T, d);
  const AttentionConfig acfg = cfg.attention();
  for (std::size_t li = cfg.layers; li-- > 0;) {
    const auto& P = L.layer[li];
    const LayerCache& lc = fc.layers[li];

    Matrix dy = dx;
    if (!lc.drop2.empty())
      for (std::size_t i = 0; i < dy.size(); ++i) dy.data()[i] *= lc.drop2[i];
    Matrix dg(T, f);
    linear_backward(exec, lc.g, params.at(P.w2), dy, grad + P.w2, grad + P.b2, &dg);
    Matrix du(T, f);
    for (std::size_t i = 0; i < du.size(); ++i) du.data()[i] = dg.data()[i] * gelu_grad(lc.u.data()[i]);
    Matrix db(T, d);
    linear_backward(exec, lc.b, params.at(P.w1), du, grad + P.w1, grad + P.b1, &db);
    layer_norm_backward(db, lc.b_hat, lc.rstd2, params.at(P.ln2_g), grad + P.ln2_g, grad + P.ln2_b,
                        dx);

    Matrix dout = dx;
    if (!lc.drop1.empty())
      for (std::size_t i = 0; i < dout.size(); ++i) dout.data()[i] *= lc.drop1[i];
    Matrix dattn(T, d);
    linear_backward(exec, lc.attn_out, params.at(P.wo), dout, grad + P.wo, grad + P.bo, &dattn);

    AttentionGrads ag{Matrix(T, d), Matrix(T, d), Matrix(T, d), Matrix(), Matrix()};
    if (lc.reset) {
      ag.dk0 = Matrix(T, d);
      ag.dv0 = Matrix(T, d);
    }
    const KeyValueBlend blend = make_blend(lc);
    const AttentionInputs in{lc.q, lc.k, lc.v, lc.reset ? &blend : nullptr};
    windowed_attention_backward(in, fc.plan, acfg, lc.attn, dattn, ag, exec);

    Matrix da(T, d);
    linear_backward(exec, lc.a, params.at(P.wq), ag.dq, grad + P.wq, grad + P.bq, &da);
    linear_backward(exec, lc.a, params.at(P.wk), ag.dk, grad + P.wk, grad + P.bk, &da);
    linear_backward(exec, lc.a, params.at(P.wv), ag.dv, grad + P.wv, grad + P.bv, &da);
    layer_norm_backward(da, lc.a_hat, lc.rstd1, params.at(P.ln1_g), grad + P.ln1_g, grad + P.ln1_b,
                        dx);
    if (lc.reset) {
      Matrix da0(T, d);
      linear_backward(exec, lc.a0, params.at(P.wk), ag.dk0, grad + P.wk, grad + P.bk, &da0);
      linear_backward(exec, lc.a0, params.at(P.wv), ag.dv0, grad + P.wv, grad + P.bv, &da0);
      layer_norm_backward(da0, lc.a0_hat, lc.rstd0, params.at(P.ln1_g), grad + P.ln1_g,
                          grad + P.ln1_b, dx0);
    }
  }
  for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] += dx0.data()[i];

  for (std::size_t t = 0; t < T; ++t) {
    auto row = dx.row(t);
    const int p = fc.position_ids[t];
    if (cfg.positional_mode == PositionalMode::absolute && p >= 0) {
      double* pg = grad + L.pos_emb + static_cast<std::size_t>(p) * d;
      for (std::size_t c = 0; c < d; ++c) pg[c] += row[c];
    } else if (cfg.positional_mode == PositionalMode::rope && p >= 0) {
      rope_rotate(row, -static_cast<double>(p), cfg.rope_base);
    }
    double* eg = grad + L.tok_emb + static_cast<std::size_t>(tp.token_ids[t]) * d;
    for (std::size_t c = 0; c < d; ++c) eg[c] += row[c];
  }
}

// Adds one prompt's weighted loss and gradient; returns the weighted loss.
double accumulate_prompt(const ModelParams& params, const PromptExample& ex, double weight,
                         const GradientOptions& opts, std::uint64_t index, MacCounter* counter,
                         double* grad) {
  const TokenizedPrompt& tp = *ex.prompt;
  const std::size_t S = tp.sum_positions.size();
  if (S == 0 || weight == 0.0) return 0.0;
  ForwardOptions fo;
  fo.training = opts.training;
  fo.dropout_seed = splitmix64(opts.dropout_seed ^ splitmix64(index));
  fo.counter = counter;
  fo.exec = kernels::Exec::serial;
  ForwardCache fc;
  const ForwardResult fr = forward(params, tp, *ex.plan, fo, &fc);
  const std::size_t V = params.config.vocab_size;
  Matrix dlogits(S, V);
  double loss = 0.0;
  for (std::size_t i = 0; i < S; ++i) {
    double* prob = dlogits.data() + i * V;
    loss += row_cross_entropy(fr.sum.logits.row(i), tp.sum_label_ids[i], prob);
    prob[tp.sum_label_ids[i]] -= 1.0;
    for (std::size_t c = 0; c < V; ++c) prob[c] *= weight;
  }
  backward(params, tp, fc, dlogits, kernels::Exec::serial, grad);
  return loss * weight;
}

std::vector<double> example_weights(std::span<const PromptExample> batch, LossWeighting w,
                                    double scale) {
  std::size_t prompts = 0, targets = 0;
  for (const auto& ex : batch) {
    const std::size_t S = ex.prompt->sum_positions.size();
    targets += S;
    prompts += S > 0 ? 1 : 0;
  }
  std::vector<double> out(batch.size(), 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t S = batch[i].prompt->sum_positions.size();
    if (S == 0) continue;
    out[i] = w == LossWeighting::per_prompt
                 ? scale / (static_cast<double>(prompts) * static_cast<double>(S))
                 : scale / static_cast<double>(targets);
  }
  return out;
}

void check_finite_grad(const std::vector<double>& g) {
  for (double v : g)
    if (!std::isfinite(v)) throw Error("non-finite gradient");
}

}  // namespace

BatchGradient compute_gradients(const ModelParams& params, std::span<const PromptExample> batch,
                                const GradientOptions& opts) {
  for (const auto& ex : batch)
    DTI_CHECK(ex.prompt && ex.plan, "compute_gradients: example without prompt or plan");
  const std::vector<double> w = example_weights(batch, opts.weighting, opts.loss_scale);
  BatchGradient out;
  out.grad.assign(params.values.size(), 0.0);
  const auto B = static_cast<std::ptrdiff_t>(batch.size());

  if (opts.exec == kernels::Exec::parallel && kernels::max_threads() > 1 && B > 1) {
    const int threads = kernels::max_threads();
    std::vector<std::vector<double>> grads(static_cast<std::size_t>(threads));
    std::vector<double> losses(static_cast<std::size_t>(threads), 0.0);
    std::vector<MacCounter> counters(static_cast<std::size_t>(threads));
    std::string error;
#pragma omp parallel num_threads(threads)
    {
      int tid = 0;
#ifdef DTI_HAVE_OPENMP
      tid = omp_get_thread_num();
#endif
      auto& g = grads[static_cast<std::size_t>(tid)];
      g.assign(params.values.size(), 0.0);
#pragma omp for schedule(static)
      for (std::ptrdiff_t i = 0; i < B; ++i) {
        try {
          const auto u = static_cast<std::size_t>(i);
          losses[static_cast<std::size_t>(tid)] +=
              accumulate_prompt(params, batch[u], w[u], opts, u,
                                opts.counter ? &counters[static_cast<std::size_t>(tid)] : nullptr,
                                g.data());
        } catch (const std::exception& e) {
#pragma omp critical
          error = e.what();
        }
      }
    }
    if (!error.empty()) throw Error(error);
    for (int t = 0; t < threads; ++t) {
      const auto& g = grads[static_cast<std::size_t>(t)];
      for (std::size_t i = 0; i < g.size(); ++i) out.grad[i] += g[i];
      out.loss += losses[static_cast<std::size_t>(t)];
      if (opts.counter) *opts.counter += counters[static_cast<std::size_t>(t)];
    }
  } else {
    for (std::ptrdiff_t i = 0; i < B; ++i) {
      const auto u = static_cast<std::size_t>(i);
      out.loss += accumulate_prompt(params, batch[u], w[u], opts, u, opts.counter, out.grad.data());
    }
  }
  out.loss /= opts.loss_scale == 0.0 ? 1.0 : opts.loss_scale;
  check_finite_grad(out.grad);
  return out;
}

double batch_loss(const ModelParams& params, std::span<const PromptExample> batch,
                  LossWeighting weighting) {
  const std::vector<double> w = example_weights(batch, weighting, 1.0);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (w[i] == 0.0) continue;
    const ForwardResult fr = forward(params, *batch[i].prompt, *batch[i].plan);
    const std::size_t S = batch[i].prompt->sum_positions.size();
    total += sum_token_loss(fr.sum, batch[i].prompt->sum_label_ids) * static_cast<double>(S) * w[i];
  }
  return total;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".bin";
  auto man = stem;
  man += ".json";
  {
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw Error("cannot write '" + bin.string() + "'");
    out.write(reinterpret_cast<const char*>(params.values.data()),
              static_cast<std::streamsize>(params.values.size() * sizeof(double)));
  }
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : params.layout.tensors)
    tensors.push_back({{"name", t.name}, {"offset", t.offset}, {"shape", {t.rows, t.cols}}});
  nlohmann::json j{{"format", "dti-checkpoint-1"},
                   {"dtype", "float64-le"},
                   {"seed", params.seed},
                   {"num_values", params.values.size()},
                   {"config", params.config},
                   {"tensors", tensors}};
  std::ofstream out(man);
  if (!out) throw Error("cannot write '" + man.string() + "'");
  out << j.dump(2) << '\n';
}

ModelParams load_checkpoint(const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".bin";
  auto man = stem;
  man += ".json";
  std::ifstream min(man);
  if (!min) throw Error("cannot open '" + man.string() + "'");
  const nlohmann::json j = nlohmann::json::parse(min);
  ModelParams p;
  p.config = j.at("config").get<ModelConfig>();
  p.config.validate();
  p.layout = ParamLayout::build(p.config);
  p.seed = j.at("seed").get<std::uint64_t>();
  const auto n = j.at("num_values").get<std::size_t>();
  if (n != p.layout.total) throw Error("checkpoint size does not match its config");
  p.values.assign(n, 0.0);
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw Error("cannot open '" + bin.string() + "'");
  in.read(reinterpret_cast<char*>(p.values.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(n * sizeof(double)))
    throw Error("checkpoint blob is truncated");
  return p;
}

}  // namespace dti
