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

#include "dti/kernels.hpp"

#include <algorithm>

#include "dti/common.hpp"

#ifdef DTI_HAVE_OPENMP
#include <omp.h>
#endif

namespace dti::kernels {

namespace {

void check_sizes(std::size_t a, std::size_t b, std::size_t c, std::size_t ea, std::size_t eb,
                 std::size_t ec) {
  DTI_CHECK(a >= ea && b >= eb && c >= ec, "gemm: buffer smaller than stated shape");
}

inline void gemm_row(const double* a, const double* b, double* c, std::size_t inner,
                     std::size_t cols, bool accumulate) {
  if (!accumulate) std::fill(c, c + cols, 0.0);
  for (std::size_t p = 0; p < inner; ++p) {
    const double av = a[p];
    const double* brow = b + p * cols;
    for (std::size_t j = 0; j < cols; ++j) c[j] += av * brow[j];
  }
}

inline void gemm_nt_row(const double* a, const double* b, double* c, std::size_t inner,
                        std::size_t cols, bool accumulate) {
  for (std::size_t j = 0; j < cols; ++j) {
    const double* brow = b + j * inner;
    double s = 0.0;
    for (std::size_t p = 0; p < inner; ++p) s += a[p] * brow[p];
    c[j] = accumulate ? c[j] + s : s;
  }
}

// Row p of c accumulates column p of a against all rows of b.
inline void gemm_tn_row(const double* a, const double* b, double* c, std::size_t p,
                        std::size_t rows, std::size_t inner, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double av = a[i * inner + p];
    if (av == 0.0) continue;
    const double* brow = b + i * cols;
    for (std::size_t j = 0; j < cols; ++j) c[j] += av * brow[j];
  }
}

}  // namespace

Exec default_exec() {
#ifdef DTI_HAVE_OPENMP
  return Exec::parallel;
#else
  return Exec::serial;
#endif
}

int max_threads() {
#ifdef DTI_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t rows, std::size_t inner, std::size_t cols, bool accumulate) {
  check_sizes(a.size(), b.size(), c.size(), rows * inner, inner * cols, rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    gemm_row(a.data() + i * inner, b.data(), c.data() + i * cols, inner, cols, accumulate);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols, bool accumulate) {
  check_sizes(a.size(), b.size(), c.size(), rows * inner, cols * inner, rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    gemm_nt_row(a.data() + i * inner, b.data(), c.data() + i * cols, inner, cols, accumulate);
}

void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t rows, std::size_t inner, std::size_t cols) {
  check_sizes(a.size(), b.size(), c.size(), rows * inner, rows * cols, inner * cols);
  for (std::size_t p = 0; p < inner; ++p)
    gemm_tn_row(a.data(), b.data(), c.data() + p * cols, p, rows, inner, cols);
}

}  // namespace serial

namespace parallel {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t rows, std::size_t inner, std::size_t cols, bool accumulate) {
  check_sizes(a.size(), b.size(), c.size(), rows * inner, inner * cols, rows * cols);
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * inner * cols > 32768)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(i);
    gemm_row(a.data() + r * inner, b.data(), c.data() + r * cols, inner, cols, accumulate);
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols, bool accumulate) {
  check_sizes(a.size(), b.size(), c.size(), rows * inner, cols * inner, rows * cols);
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * inner * cols > 32768)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(i);
    gemm_nt_row(a.data() + r * inner, b.data(), c.data() + r * cols, inner, cols, accumulate);
  }
}

void gemm_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t rows, std::size_t inner, std::size_t cols) {
  check_sizes(a.size(), b.size(), c.size(), rows * inner, rows * cols, inner * cols);
  const auto n = static_cast<std::ptrdiff_t>(inner);
#pragma omp parallel for schedule(static) if (rows * inner * cols > 32768)
  for (std::ptrdiff_t p = 0; p < n; ++p) {
    const auto r = static_cast<std::size_t>(p);
    gemm_tn_row(a.data(), b.data(), c.data() + r * cols, r, rows, inner, cols);
  }
}

}  // namespace parallel

void gemm(Exec exec, std::span<const double> a, std::span<const double> b, std::span<double> c,
          std::size_t rows, std::size_t inner, std::size_t cols, bool accumulate) {
  if (exec == Exec::parallel)
    parallel::gemm(a, b, c, rows, inner, cols, accumulate);
  else
    serial::gemm(a, b, c, rows, inner, cols, accumulate);
}

void gemm_nt(Exec exec, std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t rows, std::size_t inner, std::size_t cols,
             bool accumulate) {
  if (exec == Exec::parallel)
    parallel::gemm_nt(a, b, c, rows, inner, cols, accumulate);
  else
    serial::gemm_nt(a, b, c, rows, inner, cols, accumulate);
}

void gemm_tn_acc(Exec exec, std::span<const double> a, std::span<const double> b,
                 std::span<double> c, std::size_t rows, std::size_t inner, std::size_t cols) {
  if (exec == Exec::parallel)
    parallel::gemm_tn_acc(a, b, c, rows, inner, cols);
  else
    serial::gemm_tn_acc(a, b, c, rows, inner, cols);
}

}  // namespace dti::kernels
