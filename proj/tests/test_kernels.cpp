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

#include <random>
#include <vector>

#include "doctest.h"
#include "dti/kernels.hpp"

using namespace dti;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST_CASE("gemm matches a naive triple loop") {
  std::mt19937_64 rng(3);
  const std::size_t r = 7, in = 5, c = 9;
  const auto a = random_vec(r * in, rng);
  const auto b = random_vec(in * c, rng);
  std::vector<double> out(r * c);
  kernels::serial::gemm(a, b, out, r, in, c, false);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < in; ++p) s += a[i * in + p] * b[p * c + j];
      CHECK(out[i * c + j] == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("gemm_nt and gemm_tn_acc agree with explicit transposes") {
  std::mt19937_64 rng(4);
  const std::size_t r = 6, in = 4, c = 3;
  const auto a = random_vec(r * in, rng);
  const auto bt = random_vec(c * in, rng);
  std::vector<double> b(in * c);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t p = 0; p < in; ++p) b[p * c + i] = bt[i * in + p];
  std::vector<double> x(r * c), y(r * c);
  kernels::serial::gemm(a, b, x, r, in, c, false);
  kernels::serial::gemm_nt(a, bt, y, r, in, c, false);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i] == doctest::Approx(y[i]).epsilon(1e-14));

  // a^T * y has shape in x c
  std::vector<double> z(in * c, 1.0);
  kernels::serial::gemm_tn_acc(a, y, z, r, in, c);
  for (std::size_t p = 0; p < in; ++p)
    for (std::size_t j = 0; j < c; ++j) {
      double s = 1.0;
      for (std::size_t i = 0; i < r; ++i) s += a[i * in + p] * y[i * c + j];
      CHECK(z[p * c + j] == doctest::Approx(s).epsilon(1e-13));
    }
}

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
  std::mt19937_64 rng(5);
  for (std::size_t n : {8, 64, 130}) {
    const auto a = random_vec(n * n, rng);
    const auto b = random_vec(n * n, rng);
    std::vector<double> s(n * n), p(n * n);
    kernels::serial::gemm(a, b, s, n, n, n, false);
    kernels::parallel::gemm(a, b, p, n, n, n, false);
    CHECK(s == p);
    kernels::serial::gemm_nt(a, b, s, n, n, n, true);
    kernels::parallel::gemm_nt(a, b, p, n, n, n, true);
    CHECK(s == p);
    kernels::serial::gemm_tn_acc(a, b, s, n, n, n);
    kernels::parallel::gemm_tn_acc(a, b, p, n, n, n);
    CHECK(s == p);
  }
}
