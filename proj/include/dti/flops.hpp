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

// Analytic training-cost formulas for both paradigms and the instrumented
// multiply-accumulate counterpart.

#include <cstddef>
#include <string>

#include "dti/model.hpp"
#include "dti/training.hpp"
#include "json.hpp"

namespace dti {

struct CostModelInputs {
  double m = 0;  // interactions per user
  double n = 0;  // context interactions
  double k = 1;  // targets per streaming prompt
  double N = 0;  // tokens per sliding-window prompt
  double K = 0;  // extra tokens contributed by k targets
  double L = 0;  // layers
  double d = 0;  // hidden size
  double c = 0;  // tokens per interaction

  void validate() const;
};

// N = n*c, K = k*c: separators and [SUM] tokens ignored.
CostModelInputs nominal_token_accounting(double m, double n, double k, double c, double L, double d);
// N and K from the actual tokenised layout: N = (n+1)(c+1), and N + K is the
// length of a full streaming prompt, n(c+1) + k(c+2) - 1.
CostModelInputs exact_token_accounting(double m, double n, double k, double c, double L, double d);

enum class PromptCount { nominal, exact };  // m/k versus ceil((m-n)/k)

double sliding_window_flops(const CostModelInputs& in);
double dti_flops(const CostModelInputs& in, PromptCount count = PromptCount::nominal);
// N*k / (N+K)
double reduction_ratio(double N, double K, double k);

struct FlopsReport {
  CostModelInputs nominal_inputs;
  CostModelInputs exact_inputs;
  double analytic_sw = 0;
  double analytic_dti = 0;
  double analytic_reduction = 0;  // analytic_sw / analytic_dti
  double formula_reduction = 0;        // reduction_ratio under nominal accounting
  double formula_reduction_exact = 0;  // reduction_ratio under exact accounting
  double measured_sw = 0;         // training MACs, 2x forward
  double measured_dti = 0;
  double measured_reduction = 0;
  double relative_gap = 0;        // measured_reduction / formula_reduction - 1
  double relative_gap_exact = 0;  // against formula_reduction_exact
  double relative_gap_analytic = 0;
  MacCounter sw_counter, dti_counter;
};

// Training cost of one pass over `set`: forward MACs doubled for backward.
MacCounter measure_forward_macs(const ModelParams& params, const PromptSet& set);
double training_macs(const MacCounter& forward);

// Builds one synthetic user with m interactions of c tokens, runs both
// paradigms' prompt sets through an instrumented model and reconciles the
// counts with the formulas.
FlopsReport flops_report(std::size_t m, std::size_t n, std::size_t k, std::size_t c,
                         std::size_t layers, std::size_t d_model, std::size_t ff_dim,
                         std::size_t heads = 2, std::uint64_t seed = 0);

nlohmann::json to_json(const FlopsReport& r);
std::string format_flops_table(const FlopsReport& r);

}  // namespace dti
