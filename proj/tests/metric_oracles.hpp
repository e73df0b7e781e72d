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

#include <algorithm>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <span>

#include "dti/metrics.hpp"

namespace dti::test {

// O(P*N) pairwise count with half credit for ties.
inline double brute_force_auc(std::span<const double> s, std::span<const int> y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Clamped binary cross-entropy summed in 50-digit arithmetic.
inline double extended_log_loss(std::span<const double> s, std::span<const int> y) {
  using big = boost::multiprecision::cpp_bin_float_50;
  big total = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const big p = std::clamp(s[i], kLogLossClamp, 1.0 - kLogLossClamp);
    total -= y[i] == 1 ? boost::multiprecision::log(p) : boost::multiprecision::log(big(1) - p);
  }
  return static_cast<double>(total / static_cast<big>(s.size()));
}

}  // namespace dti::test
