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

#include "dti/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>

#include "dti/common.hpp"
#include "dti/metrics.hpp"

namespace dti {

std::string to_string(Paradigm p) { return p == Paradigm::dti ? "dti" : "sliding_window"; }

Paradigm parse_paradigm(const std::string& s) {
  if (s == "dti") return Paradigm::dti;
  if (s == "sliding_window" || s == "sw") return Paradigm::sliding_window;
  throw ConfigError("paradigm must be sliding_window or dti, got '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0))
    throw ConfigError("train.warmup_ratio must lie in [0, 1]");
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (max_epochs == 0) throw ConfigError("train.max_epochs must be >= 1");
  if (patience == 0) throw ConfigError("train.patience must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("train.epsilon must be > 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"paradigm", to_string(c.paradigm)},
                     {"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"warmup_ratio", c.warmup_ratio},
                     {"batch_size", c.batch_size},
                     {"max_epochs", c.max_epochs},
                     {"patience", c.patience},
                     {"seed", c.seed},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"epsilon", c.epsilon},
                     {"weighting", c.weighting == LossWeighting::per_prompt ? "per_prompt"
                                                                            : "per_target"}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.paradigm = parse_paradigm(j.value("paradigm", to_string(d.paradigm)));
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.warmup_ratio = j.value("warmup_ratio", d.warmup_ratio);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.patience = j.value("patience", d.patience);
  c.seed = j.value("seed", d.seed);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.epsilon = j.value("epsilon", d.epsilon);
  const std::string w = j.value("weighting", std::string("per_prompt"));
  if (w == "per_prompt") c.weighting = LossWeighting::per_prompt;
  else if (w == "per_target") c.weighting = LossWeighting::per_target;
  else throw ConfigError("train.weighting must be per_prompt or per_target, got '" + w + "'");
}

std::size_t PromptSet::num_targets() const {
  std::size_t n = 0;
  for (const auto& p : prompts) n += p.sum_positions.size();
  return n;
}

std::size_t PromptSet::num_tokens() const {
  std::size_t n = 0;
  for (const auto& p : prompts) n += p.size();
  return n;
}

std::vector<PromptExample> PromptSet::examples() const {
  std::vector<PromptExample> out(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) out[i] = PromptExample{&prompts[i], &plans[i]};
  return out;
}

std::vector<int> PromptSet::labels() const {
  std::vector<int> out;
  for (const auto& p : prompts) out.insert(out.end(), p.sum_labels.begin(), p.sum_labels.end());
  return out;
}

PromptSet build_prompt_set(const Dataset& data, const PromptingConfig& cfg, Paradigm paradigm) {
  cfg.validate();
  PromptSet set;
  for (const auto& seq : data.sequences) {
    const auto prompts = paradigm == Paradigm::dti ? build_streaming_prompts(seq, cfg)
                                                   : build_sliding_window_prompts(seq, cfg);
    for (const auto& p : prompts) {
      set.prompts.push_back(tokenize_prompt(p, data.vocabulary, cfg));
      set.plans.push_back(compute_attention_plan(set.prompts.back(), cfg));
    }
  }
  return set;
}

std::size_t warmup_steps(std::size_t total_steps, double warmup_ratio) {
  return static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps) - 1e-9));
}

double scheduled_learning_rate(double base, std::size_t step, std::size_t total_steps,
                               double warmup_ratio) {
  const std::size_t w = warmup_steps(total_steps, warmup_ratio);
  if (step <= w && w > 0) return base * static_cast<double>(step) / static_cast<double>(w);
  if (total_steps <= w) return base;
  const double progress =
      static_cast<double>(step - w) / static_cast<double>(total_steps - w);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress)));
}

AdamW::AdamW(std::size_t size, double beta1, double beta2, double epsilon, double weight_decay)
    : m_(size, 0.0), v_(size, 0.0), beta1_(beta1), beta2_(beta2), eps_(epsilon), wd_(weight_decay) {}

void AdamW::step(std::vector<double>& params, const std::vector<double>& grad, double lr) {
  DTI_CHECK(params.size() == m_.size() && grad.size() == m_.size(), "AdamW: size mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double decay = 1.0 - lr * wd_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] *= decay;
    params[i] -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
  }
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j{{"log_loss", r.log_loss}, {"f1", r.f1}, {"count", r.count}};
  j["auc"] = r.auc ? nlohmann::json(*r.auc) : nlohmann::json("undefined");
  return j;
}

MetricsReport evaluate(const ModelParams& params, const PromptSet& set, kernels::Exec exec) {
  DTI_CHECK(set.size() > 0, "evaluate: empty evaluation set");
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> offset(set.size() + 1, 0);
  for (std::size_t i = 0; i < set.size(); ++i)
    offset[i + 1] = offset[i] + set.prompts[i].sum_positions.size();
  MetricsReport r;
  r.scores.assign(offset.back(), 0.0);
  r.labels = set.labels();
  const auto P = static_cast<std::ptrdiff_t>(set.size());
  std::string error;
  const auto score_one = [&](std::ptrdiff_t i) {
    const auto u = static_cast<std::size_t>(i);
    const ForwardResult fr = forward(params, set.prompts[u], set.plans[u]);
    const auto s = pointwise_scores(fr.sum);
    std::copy(s.begin(), s.end(), r.scores.begin() + static_cast<std::ptrdiff_t>(offset[u]));
  };
  if (exec == kernels::Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t i = 0; i < P; ++i) {
      try {
        score_one(i);
      } catch (const std::exception& e) {
#pragma omp critical
        error = e.what();
      }
    }
    if (!error.empty()) throw Error(error);
  } else {
    for (std::ptrdiff_t i = 0; i < P; ++i) score_one(i);
  }
  r.count = r.scores.size();
  r.auc = auc(r.scores, r.labels);
  r.log_loss = log_loss(r.scores, r.labels);
  r.f1 = f1(r.scores, r.labels);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

namespace {

std::size_t targets_per_prompt(const PromptSet& set) {
  std::size_t best = 1;
  for (const auto& p : set.prompts) best = std::max(best, p.sum_positions.size());
  return best;
}

bool improves(const std::optional<double>& candidate, const std::optional<double>& best) {
  if (!candidate) return false;
  return !best || *candidate > *best;
}

}  // namespace

TrainResult train(const ModelParams& init, const PromptSet& train_set, const PromptSet& val_set,
                  const TrainConfig& cfg, kernels::Exec exec) {
  cfg.validate();
  DTI_CHECK(train_set.size() > 0, "train: empty training set");
  DTI_CHECK(val_set.size() > 0, "train: empty validation set");
  const auto t0 = std::chrono::steady_clock::now();

  const std::size_t k = targets_per_prompt(train_set);
  const std::size_t per_batch = std::max<std::size_t>(1, cfg.batch_size / k);
  const std::size_t P = train_set.size();
  const std::size_t steps_per_epoch = (P + per_batch - 1) / per_batch;
  const std::size_t total_steps = steps_per_epoch * cfg.max_epochs;

  TrainResult res;
  res.params = init;
  res.steps_per_epoch = steps_per_epoch;
  ModelParams current = init;
  AdamW opt(current.values.size(), cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay);
  const auto examples = train_set.examples();
  std::vector<std::size_t> order(P);
  std::size_t bad_epochs = 0;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs && !res.diverged; ++epoch) {
    const auto e0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < P; ++i) order[i] = i;
    std::mt19937_64 rng(cfg.seed * 1000003ULL + epoch);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t loss_steps = 0;
    double lr = 0.0;
    std::vector<PromptExample> batch;
    for (std::size_t b = 0; b < P; b += per_batch) {
      batch.clear();
      for (std::size_t i = b; i < std::min(P, b + per_batch); ++i) {
        batch.push_back(examples[order[i]]);
        res.train_tokens += examples[order[i]].prompt->size();
        res.train_targets += examples[order[i]].prompt->sum_positions.size();
      }
      ++step;
      GradientOptions go;
      go.weighting = cfg.weighting;
      go.training = true;
      go.dropout_seed = cfg.seed ^ (step * 0x9E3779B97F4A7C15ULL);
      go.counter = &res.train_macs;
      go.exec = exec;
      BatchGradient g;
      try {
        g = compute_gradients(current, batch, go);
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        std::clog << "train: step " << step << " failed (" << e.what()
                  << "), keeping the last good checkpoint\n";
        res.diverged = true;
        break;
      }
      if (!std::isfinite(g.loss)) {
        std::clog << "train: loss diverged at step " << step << ", keeping the last good checkpoint\n";
        res.diverged = true;
        break;
      }
      lr = scheduled_learning_rate(cfg.learning_rate, step, total_steps, cfg.warmup_ratio);
      opt.step(current.values, g.grad, lr);
      loss_sum += g.loss;
      ++loss_steps;
    }
    if (res.diverged) break;
    const double step_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - e0).count();

    const MetricsReport val = evaluate(current, val_set, exec);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_steps ? loss_sum / static_cast<double>(loss_steps) : 0.0;
    rec.val_auc = val.auc;
    rec.val_log_loss = val.log_loss;
    rec.val_f1 = val.f1;
    rec.learning_rate = lr;
    rec.seconds = step_seconds;
    res.history.push_back(rec);

    if (improves(val.auc, res.best_val_auc) || res.best_epoch == 0) {
      if (improves(val.auc, res.best_val_auc)) res.best_val_auc = val.auc;
      res.best_epoch = epoch;
      res.params = current;
      bad_epochs = 0;
    } else if (++bad_epochs >= cfg.patience) {
      break;
    }
  }
  res.steps = step;
  res.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "epoch,split,metric,value\n";
  for (const auto& r : history) {
    out << r.epoch << ",train,loss," << format_value(r.train_loss) << '\n';
    out << r.epoch << ",train,learning_rate," << format_value(r.learning_rate) << '\n';
    out << r.epoch << ",val,auc," << (r.val_auc ? format_value(*r.val_auc) : "undefined") << '\n';
    out << r.epoch << ",val,log_loss," << format_value(r.val_log_loss) << '\n';
    out << r.epoch << ",val,f1," << format_value(r.val_f1) << '\n';
  }
}

GradCheckReport finite_difference_check(const ModelParams& params,
                                        std::span<const PromptExample> batch, double eps,
                                        std::size_t per_tensor, std::uint64_t seed) {
  DTI_CHECK(eps > 0.0, "finite_difference_check: eps must be > 0");
  GradientOptions go;
  go.exec = kernels::Exec::serial;
  const BatchGradient g = compute_gradients(params, batch, go);
  std::mt19937_64 rng(seed);
  GradCheckReport rep;
  ModelParams probe = params;
  for (const auto& t : params.layout.tensors) {
    std::vector<std::size_t> nonzero;
    for (std::size_t i = 0; i < t.size(); ++i)
      if (g.grad[t.offset + i] != 0.0) nonzero.push_back(t.offset + i);
    std::vector<std::size_t> picks;
    std::uniform_int_distribution<std::size_t> any(0, t.size() - 1);
    const std::size_t from_nonzero = std::min(nonzero.size(), per_tensor / 2);
    std::shuffle(nonzero.begin(), nonzero.end(), rng);
    picks.assign(nonzero.begin(), nonzero.begin() + static_cast<std::ptrdiff_t>(from_nonzero));
    while (picks.size() < per_tensor) picks.push_back(t.offset + any(rng));

    double worst = 0.0;
    for (std::size_t idx : picks) {
      const double orig = probe.values[idx];
      probe.values[idx] = orig + eps;
      const double up = batch_loss(probe, batch, go.weighting);
      probe.values[idx] = orig - eps;
      const double down = batch_loss(probe, batch, go.weighting);
      probe.values[idx] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = g.grad[idx];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
      ++rep.checked;
    }
    rep.per_tensor[t.name] = worst;
    rep.max_rel_error = std::max(rep.max_rel_error, worst);
  }
  return rep;
}

}  // namespace dti
