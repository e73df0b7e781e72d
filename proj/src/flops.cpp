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

#include "dti/flops.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "dti/common.hpp"

namespace dti {

void CostModelInputs::validate() const {
  if (!(m > 0 && n > 0 && k > 0 && N > 0 && K >= 0 && L > 0 && d > 0))
    throw ConfigError("cost model inputs must be positive");
}

CostModelInputs nominal_token_accounting(double m, double n, double k, double c, double L, double d) {
  return CostModelInputs{m, n, k, n * c, k * c, L, d, c};
}

CostModelInputs exact_token_accounting(double m, double n, double k, double c, double L, double d) {
  const double N = (n + 1.0) * (c + 1.0);
  const double full = n * (c + 1.0) + k * (c + 2.0) - 1.0;
  return CostModelInputs{m, n, k, N, full - N, L, d, c};
}

double sliding_window_flops(const CostModelInputs& in) {
  in.validate();
  return (in.m - in.n) * 2.0 * in.L * (in.N * in.N * in.d + in.N * in.d * in.d);
}

double dti_flops(const CostModelInputs& in, PromptCount count) {
  in.validate();
  const double prompts = count == PromptCount::nominal ? in.m / in.k : std::ceil((in.m - in.n) / in.k);
  const double len = in.N + in.K;
  return prompts * 2.0 * in.L * (len * in.N * in.d + len * in.d * in.d);
}

double reduction_ratio(double N, double K, double k) {
  if (!(N > 0 && K >= 0 && k > 0)) throw ConfigError("reduction_ratio: arguments must be positive");
  return N * k / (N + K);
}

MacCounter measure_forward_macs(const ModelParams& params, const PromptSet& set) {
  MacCounter total;
  for (std::size_t i = 0; i < set.size(); ++i) {
    MacCounter c;
    ForwardOptions fo;
    fo.counter = &c;
    forward(params, set.prompts[i], set.plans[i], fo);
    total += c;
  }
  return total;
}

double training_macs(const MacCounter& forward) { return 2.0 * static_cast<double>(forward.forward()); }

FlopsReport flops_report(std::size_t m, std::size_t n, std::size_t k, std::size_t c,
                         std::size_t layers, std::size_t d_model, std::size_t ff_dim,
                         std::size_t heads, std::uint64_t seed) {
  DTI_CHECK(m > n, "flops_report: need m > n");
  SyntheticConfig sc;
  sc.num_users = 1;
  sc.items_per_user = m;
  sc.tokens_per_interaction = c;
  sc.rng_seed = seed;
  const Dataset data = generate_synthetic_dataset(sc);

  ModelConfig mc;
  mc.layers = layers;
  mc.d_model = d_model;
  mc.heads = heads;
  mc.ff_dim = ff_dim;
  mc.vocab_size = data.vocabulary.size();
  const ModelParams params = ModelParams::init(mc, seed);

  PromptingConfig pc;
  pc.n = n;
  pc.k = k;
  FlopsReport r;
  const double M = static_cast<double>(m), Nn = static_cast<double>(n), Kk = static_cast<double>(k),
               C = static_cast<double>(c), L = static_cast<double>(layers),
               D = static_cast<double>(d_model);
  r.nominal_inputs = nominal_token_accounting(M, Nn, Kk, C, L, D);
  r.exact_inputs = exact_token_accounting(M, Nn, Kk, C, L, D);
  r.analytic_sw = sliding_window_flops(r.nominal_inputs);
  r.analytic_dti = dti_flops(r.nominal_inputs);
  r.analytic_reduction = r.analytic_sw / r.analytic_dti;
  r.formula_reduction = reduction_ratio(r.nominal_inputs.N, r.nominal_inputs.K, Kk);
  r.formula_reduction_exact = reduction_ratio(r.exact_inputs.N, r.exact_inputs.K, Kk);

  r.sw_counter = measure_forward_macs(params, build_prompt_set(data, pc, Paradigm::sliding_window));
  r.dti_counter = measure_forward_macs(params, build_prompt_set(data, pc, Paradigm::dti));
  r.measured_sw = training_macs(r.sw_counter);
  r.measured_dti = training_macs(r.dti_counter);
  r.measured_reduction = r.measured_sw / r.measured_dti;
  r.relative_gap = r.measured_reduction / r.formula_reduction - 1.0;
  r.relative_gap_exact = r.measured_reduction / r.formula_reduction_exact - 1.0;
  r.relative_gap_analytic = r.measured_reduction / r.analytic_reduction - 1.0;
  return r;
}

namespace {
nlohmann::json inputs_json(const CostModelInputs& in) {
  return {{"m", in.m}, {"n", in.n}, {"k", in.k}, {"N", in.N}, {"K", in.K},
          {"L", in.L}, {"d", in.d}, {"c", in.c}};
}
nlohmann::json counter_json(const MacCounter& c) {
  return {{"linear_macs", c.linear}, {"attention_macs", c.attention}, {"tokens", c.tokens},
          {"targets", c.targets}};
}
}  // namespace

nlohmann::json to_json(const FlopsReport& r) {
  return {{"nominal_accounting", inputs_json(r.nominal_inputs)},
          {"exact_accounting", inputs_json(r.exact_inputs)},
          {"analytic_sw", r.analytic_sw},
          {"analytic_dti", r.analytic_dti},
          {"analytic_reduction", r.analytic_reduction},
          {"formula_reduction", r.formula_reduction},
          {"formula_reduction_exact", r.formula_reduction_exact},
          {"measured_sw", r.measured_sw},
          {"measured_dti", r.measured_dti},
          {"measured_reduction", r.measured_reduction},
          {"relative_gap", r.relative_gap},
          {"relative_gap_exact", r.relative_gap_exact},
          {"relative_gap_analytic", r.relative_gap_analytic},
          {"sw_forward", counter_json(r.sw_counter)},
          {"dti_forward", counter_json(r.dti_counter)}};
}

std::string format_flops_table(const FlopsReport& r) {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "quantity                     sliding_window        dti        reduction\n";
  os << "analytic (N=nc, K=kc)     " << std::setw(14) << r.analytic_sw << std::setw(14)
     << r.analytic_dti << std::setw(12) << r.analytic_reduction << '\n';
  os << "measured MACs (2x fwd)    " << std::setw(14) << r.measured_sw << std::setw(14)
     << r.measured_dti << std::setw(12) << r.measured_reduction << '\n';
  os << "N*k/(N+K), N=nc K=kc      " << std::setw(40) << r.formula_reduction << '\n';
  os << "N*k/(N+K), exact tokens   " << std::setw(40) << r.formula_reduction_exact << '\n';
  os << "measured vs N*k/(N+K)     " << std::setw(39) << r.relative_gap * 100.0 << "%\n";
  os << "measured vs exact tokens  " << std::setw(39) << r.relative_gap_exact * 100.0 << "%\n";
  return os.str();
}

}  // namespace dti
