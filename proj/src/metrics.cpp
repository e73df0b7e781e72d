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

#include "dti/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <vector>

#include "dti/common.hpp"

namespace dti {

std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
  DTI_CHECK(scores.size() == labels.size(), "auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double pos_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Average 1-based rank of the tie group.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t r = i; r < j; ++r)
      if (labels[order[r]] == 1) {
        pos_rank_sum += rank;
        ++pos;
      }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double P = static_cast<double>(pos), N = static_cast<double>(neg);
  return (pos_rank_sum - P * (P + 1.0) / 2.0) / (P * N);
}

double log_loss(std::span<const double> scores, std::span<const int> labels) {
  DTI_CHECK(scores.size() == labels.size(), "log_loss: scores and labels differ in length");
  DTI_CHECK(!scores.empty(), "log_loss: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    DTI_CHECK(scores[i] >= 0.0 && scores[i] <= 1.0, "log_loss: score outside [0, 1]");
    const double p = std::clamp(scores[i], kLogLossClamp, 1.0 - kLogLossClamp);
    total += labels[i] == 1 ? -std::log(p) : -std::log1p(-p);
  }
  return total / static_cast<double>(scores.size());
}

double f1(std::span<const double> scores, std::span<const int> labels, double threshold) {
  DTI_CHECK(scores.size() == labels.size(), "f1: scores and labels differ in length");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && labels[i] == 1) ++tp;
    else if (pred) ++fp;
    else if (labels[i] == 1) ++fn;
  }
  if (tp + fp == 0) {
    std::clog << "f1: no positive predictions, reporting 0\n";
    return 0.0;
  }
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace dti
