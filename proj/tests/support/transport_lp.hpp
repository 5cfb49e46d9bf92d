// Copyright 2026 The mvmbound Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <vector>

#include "mvmbound/linprog.hpp"
#include "mvmbound/measures.hpp"

namespace testutil {

// Brute-force optimal transport cost by solving the full transportation LP.
// Independent of the closed-form CDF route used by wasserstein1.
inline double transport_lp_cost(const mvmb::AtomicMeasure& a, const mvmb::AtomicMeasure& b) {
    const int m = static_cast<int>(a.size());
    const int n = static_cast<int>(b.size());
    const int rows = m + n;
    const int cols = m * n;
    std::vector<double> A(rows * cols, 0.0), bb(rows), c(cols);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            const int var = i * n + j;
            A[i * cols + var] = 1.0;
            A[(m + j) * cols + var] = 1.0;
            c[var] = std::abs(a.atom(i) - b.atom(j));
        }
    for (int i = 0; i < m; ++i) bb[i] = a.weight(i);
    for (int j = 0; j < n; ++j) bb[m + j] = b.weight(j);
    auto res = mvmb::DenseLp::solve(rows, cols, A, bb, c);
    if (!res.feasible || !res.bounded) throw std::runtime_error("transport_lp_cost: LP failed");
    return res.objective;
}

}  // namespace testutil
