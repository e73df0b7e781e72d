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

#include "dti/leakage.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>

#include "dti/common.hpp"

namespace dti {

double SensitivityCurve::max_in(std::size_t lo, std::size_t hi) const {
  double m = 0.0;
  for (std::size_t d = lo + 1; d <= hi && d < by_distance.size(); ++d)
    if (!std::isnan(by_distance[d])) m = std::max(m, by_distance[d]);
  return m;
}

double SensitivityCurve::area_in(std::size_t lo, std::size_t hi) const {
  double a = 0.0;
  for (std::size_t d = lo + 1; d <= hi && d < by_distance.size(); ++d)
    if (!std::isnan(by_distance[d])) a += by_distance[d];
  return a;
}

SensitivityCurve sensitivity_curve(const ModelParams& params, const TokenizedPrompt& tp,
                                   const AttentionPlan& plan, const ProbeConfig& probe) {
  DTI_CHECK(!tp.sum_positions.empty(), "sensitivity_curve: prompt has no [SUM]");
  DTI_CHECK(probe.directions > 0 && probe.eps > 0.0, "sensitivity_curve: bad probe config");
  const std::size_t si =
      probe.sum_index < tp.sum_positions.size() ? probe.sum_index : tp.sum_positions.size() - 1;
  const std::size_t sum_pos = tp.sum_positions[si];
  const int target = tp.owner[sum_pos];
  const std::size_t d_model = params.config.d_model;

  SensitivityCurve curve;
  curve.n = plan.n;
  curve.by_distance.assign(2 * plan.n + 1, std::numeric_limits<double>::quiet_NaN());

  std::mt19937_64 rng(probe.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix delta(tp.size(), d_model);
  ForwardOptions fo;
  fo.embedding_delta = &delta;

  for (std::size_t d = 1; d <= 2 * plan.n; ++d) {
    const int inter = target - static_cast<int>(d);
    if (inter < 0) break;
    double total = 0.0;
    for (std::size_t r = 0; r < probe.directions; ++r) {
      std::vector<double> u(d_model);
      double norm = 0.0;
      for (auto& x : u) {
        x = gauss(rng);
        norm += x * x;
      }
      norm = std::sqrt(norm);
      const auto eval = [&](double e) {
        delta.zero();
        for (std::size_t t = 0; t < tp.size(); ++t)
          if (tp.segment[t] == inter)
            for (std::size_t c = 0; c < d_model; ++c) delta(t, c) = e * u[c] / norm;
        return forward(params, tp, plan, fo).sum.yes[si];
      };
      const double up = eval(probe.eps);
      const double down = eval(-probe.eps);
      total += std::abs(up - down) / (2.0 * probe.eps);
    }
    curve.by_distance[d] = total / static_cast<double>(probe.directions);
  }
  return curve;
}

ProbeReport positional_probe(const ModelParams& params, const Dataset& eval,
                             const PromptingConfig& cfg, std::size_t slots,
                             std::size_t max_prompts) {
  DTI_CHECK(slots >= 1, "positional_probe: slots must be >= 1");
  ProbeReport rep;
  rep.slots = slots;
  std::size_t c = 0;
  for (const auto& seq : eval.sequences) {
    for (const auto& base : build_sliding_window_prompts(seq, cfg)) {
      if (rep.prompts >= max_prompts) return rep;
      c = base.targets.front().descriptor_tokens.size();
      Interaction filler;
      filler.descriptor_tokens.assign(c, std::string(reserved_token_name(Vocabulary::kPad)));
      double first = 0.0;
      for (std::size_t j = 1; j <= slots; ++j) {
        Prompt p = base;
        p.context.insert(p.context.begin(), j - 1, filler);
        const TokenizedPrompt tp = tokenize_prompt(p, eval.vocabulary, cfg);
        const AttentionPlan plan = compute_attention_plan(tp, cfg);
        const ForwardResult fr = forward(params, tp, plan);
        const double s = pointwise_score(fr.sum.yes.back(), fr.sum.no.back());
        if (j == 1) first = s;
        rep.divergence = std::max(rep.divergence, std::abs(s - first));
      }
      ++rep.prompts;
    }
  }
  return rep;
}

std::vector<Variant> standard_variants() {
  return {{"both_fixes", true, true},
          {"positional_fix_only", true, false},
          {"reset_only", false, true},
          {"no_fixes", false, false}};
}

Variant variant_by_name(const std::string& name) {
  for (const auto& v : standard_variants())
    if (v.name == name) return v;
  throw ConfigError("unknown variant '" + name +
                    "' (expected both_fixes|positional_fix_only|reset_only|no_fixes)");
}

ModelConfig apply_variant(ModelConfig base, const Variant& v) {
  if (v.positional_fix) {
    base.positional_mode = PositionalMode::none;
    base.sum_position_free = true;
    base.alibi = AlibiMode::sum_rows;
  } else {
    base.positional_mode = PositionalMode::absolute;
    base.sum_position_free = false;
    base.alibi = AlibiMode::off;
  }
  base.reset.enabled = v.reset;
  return base;
}

const AblationCell& AblationGrid::at(const std::string& variant, std::size_t k) const {
  for (const auto& c : cells)
    if (c.variant == variant && c.k == k) return c;
  throw Error("ablation grid has no cell (" + variant + ", k=" + std::to_string(k) + ")");
}

AblationGrid run_ablation_grid(const DataSplit& split, const ModelConfig& base_model,
                               const PromptingConfig& prompting, const TrainConfig& train_cfg,
                               const std::vector<std::size_t>& k_values,
                               const std::vector<Variant>& variants, std::uint64_t init_seed) {
  AblationGrid grid;
  grid.k_values = k_values;
  for (const auto& v : variants) grid.variants.push_back(v.name);
  const PromptSet val = build_prompt_set(split.val, prompting, Paradigm::sliding_window);
  for (const auto& v : variants) {
    const ModelConfig mc = apply_variant(base_model, v);
    for (std::size_t k : k_values) {
      AblationCell cell;
      cell.variant = v.name;
      cell.k = k;
      try {
        PromptingConfig pc = prompting;
        pc.k = k;
        TrainConfig tc = train_cfg;
        tc.paradigm = Paradigm::dti;
        const PromptSet tr = build_prompt_set(split.train, pc, Paradigm::dti);
        const TrainResult res = train(ModelParams::init(mc, init_seed), tr, val, tc);
        const MetricsReport m = evaluate(res.params, val);
        cell.val_auc = m.auc;
        cell.val_log_loss = m.log_loss;
        cell.val_f1 = m.f1;
        cell.best_epoch = res.best_epoch;
        if (res.diverged) cell.status = "diverged";
      } catch (const std::exception& e) {
        cell.status = "failed";
        cell.error = e.what();
        std::clog << "ablation cell (" << v.name << ", k=" << k << ") failed: " << e.what() << "\n";
      }
      grid.cells.push_back(cell);
    }
  }
  return grid;
}

void write_sensitivity_csv(const std::vector<std::pair<std::string, SensitivityCurve>>& curves,
                           const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "curve,distance,sensitivity\n";
  for (const auto& [name, c] : curves)
    for (std::size_t d = 1; d < c.by_distance.size(); ++d)
      if (!std::isnan(c.by_distance[d]))
        out << name << ',' << d << ',' << format_value(c.by_distance[d]) << '\n';
}

void write_ablation_csv(const AblationGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "variant,k,val_auc,val_log_loss,val_f1,best_epoch,status\n";
  for (const auto& c : grid.cells)
    out << c.variant << ',' << c.k << ',' << (c.val_auc ? format_value(*c.val_auc) : "undefined")
        << ',' << format_value(c.val_log_loss) << ',' << format_value(c.val_f1) << ','
        << c.best_epoch << ',' << c.status << '\n';
}

}  // namespace dti
