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

// Dense linear-algebra kernels used by the model.
//
// Every kernel exists twice: a plain serial reference in `serial::` and an
// OpenMP version in `parallel::`. The parallel versions only split the
// outermost output-row loop, so each output element is accumulated in the
// same order as the reference and results are bit-identical. Tests compare
// the two paths directly; bench/ times them.

#include <cstddef>
#include <span>

namespace dti::kernels {

enum class Exec { serial, parallel };

// Parallel when built with OpenMP, serial otherwise.
Exec default_exec();
int max_threads();

namespace serial {
// c[rows x cols] (+)= a[rows x inner] * b[inner x cols]
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t rows, std::size_t inner, std::size_t cols, bool accumulate);
// c[rows x cols] (+)= a[rows x inner] * b[cols x inner]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols, bool accumulate);
// c[inner x cols] += a[rows x inner]^T * b[rows x cols]
void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t rows, std::size_t inner, std::size_t cols);
}  // namespace serial

namespace parallel {
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t rows, std::size_t inner, std::size_t cols, bool accumulate);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols, bool accumulate);
void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t rows, std::size_t inner, std::size_t cols);
}  // namespace parallel

void gemm(Exec exec, std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t rows, std::size_t inner, std::size_t cols, bool accumulate = false);
void gemm_nt(Exec exec, std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t rows, std::size_t inner, std::size_t cols,
             bool accumulate = false);
void gemm_tn_acc(Exec exec, std::span<const double> a, std::span<const double> b,
                 std::span<double> c, std::size_t rows, std::size_t inner, std::size_t cols);

}  // namespace dti::kernels
