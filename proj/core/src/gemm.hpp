// Copyright 2026 The MTA Attack Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>

// Row-major double GEMM kernels, accumulating into C. Loop orders keep the
// innermost loop contiguous; no blocking, which is plenty at desk scale.
namespace mta::detail {

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace mta::detail
