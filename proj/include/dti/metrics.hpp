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

#include <optional>
#include <span>

namespace dti {

// Mann-Whitney AUC with half credit for ties. nullopt when only one class is
// present.
std::optional<double> auc(std::span<const double> scores, std::span<const int> labels);

inline constexpr double kLogLossClamp = 1e-7;

// Mean binary cross-entropy with p clamped to [1e-7, 1 - 1e-7].
double log_loss(std::span<const double> scores, std::span<const int> labels);

// F1 at `threshold` (score >= threshold predicts positive). 0 when nothing is
// predicted positive.
double f1(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

}  // namespace dti
