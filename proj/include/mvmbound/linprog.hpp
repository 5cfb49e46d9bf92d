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
#include <limits>
#include <stdexcept>
#include <vector>

namespace mvmb {

/**
 * Dense two-phase primal simplex with Bland's rule for small problems:
 *
 *     minimise c.x   subject to   A x = b,  x >= 0,
 *
 * with A given row-major (m rows, n columns). Right-hand sides may have any
 * sign (rows are flipped internally). Intended for tiny instances (transport
 * polytopes, envelope support problems); no scaling or sparsity.
 */
class DenseLp {
  public:
    struct Result {
        bool feasible = false;
        bool bounded = true;
        double objective = 0.0;
        std::vector<double> x;
    };

    static Result solve(int m, int n, std::vector<double> a, std::vector<double> b,
                        std::vector<double> c) {
        if (static_cast<int>(a.size()) != m * n || static_cast<int>(b.size()) != m ||
            static_cast<int>(c.size()) != n)
            throw std::invalid_argument("DenseLp: shape mismatch");

        for (int i = 0; i < m; ++i) {
            if (b[i] < 0.0) {
                b[i] = -b[i];
                for (int j = 0; j < n; ++j) a[i * n + j] = -a[i * n + j];
            }
        }

        // Tableau with artificial variables appended: columns [x | art | rhs].
        const int width = n + m + 1;
        std::vector<double> t((m + 1) * width, 0.0);
        auto at = [&](int r, int col) -> double& { return t[r * width + col]; };
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) at(i, j) = a[i * n + j];
            at(i, n + i) = 1.0;
            at(i, n + m) = b[i];
        }
        std::vector<int> basis(m);
        for (int i = 0; i < m; ++i) basis[i] = n + i;

        // Phase 1: minimise the sum of artificials.
        for (int j = 0; j < width; ++j) {
            double s = 0.0;
            for (int i = 0; i < m; ++i) s += at(i, j);
            at(m, j) = (j >= n && j < n + m) ? s - 1.0 : s;
        }
        run_simplex(t, basis, m, width, n + m);
        double art_sum = at(m, n + m);
        if (art_sum > 1e-8) return Result{};  // infeasible

        // Drive any artificial still in the basis out (degenerate rows).
        for (int i = 0; i < m; ++i) {
            if (basis[i] >= n) {
                int piv = -1;
                for (int j = 0; j < n; ++j)
                    if (std::abs(at(i, j)) > 1e-10) {
                        piv = j;
                        break;
                    }
                if (piv >= 0)
                    pivot(t, basis, m, width, i, piv);
                else
                    at(i, n + m) = 0.0;  // redundant row
            }
        }

        // Phase 2 objective row (artificial columns barred by leaving them out).
        for (int j = 0; j < width; ++j) at(m, j) = 0.0;
        for (int j = 0; j < n; ++j) at(m, j) = -c[j];
        for (int i = 0; i < m; ++i) {
            if (basis[i] < n && std::abs(at(m, basis[i])) > 0.0) {
                double f = at(m, basis[i]);
                for (int j = 0; j < width; ++j) at(m, j) -= f * at(i, j);
            }
        }
        bool bounded = run_simplex(t, basis, m, width, n);

        Result res;
        res.feasible = true;
        res.bounded = bounded;
        res.x.assign(n, 0.0);
        for (int i = 0; i < m; ++i)
            if (basis[i] < n) res.x[basis[i]] = at(i, n + m);
        res.objective = 0.0;
        for (int j = 0; j < n; ++j) res.objective += c[j] * res.x[j];
        return res;
    }

  private:
    static void pivot(std::vector<double>& t, std::vector<int>& basis, int m, int width, int row,
                      int col) {
        auto at = [&](int r, int c2) -> double& { return t[r * width + c2]; };
        const double p = at(row, col);
        for (int j = 0; j < width; ++j) at(row, j) /= p;
        for (int r = 0; r <= m; ++r) {
            if (r == row) continue;
            const double f = at(r, col);
            if (f == 0.0) continue;
            for (int j = 0; j < width; ++j) at(r, j) -= f * at(row, j);
        }
        basis[row] = col;
    }

    // Bland's rule on a maximisation tableau (objective row holds -reduced
    // costs so entering columns have a positive entry). Returns false when
    // unbounded. Columns >= limit are excluded.
    static bool run_simplex(std::vector<double>& t, std::vector<int>& basis, int m, int width,
                            int limit) {
        auto at = [&](int r, int c2) -> double& { return t[r * width + c2]; };
        const int rhs = width - 1;
        for (int iter = 0; iter < 100000; ++iter) {
            int col = -1;
            for (int j = 0; j < limit; ++j)
                if (at(m, j) > 1e-11) {
                    col = j;
                    break;
                }
            if (col < 0) return true;
            int row = -1;
            double best = std::numeric_limits<double>::infinity();
            for (int i = 0; i < m; ++i) {
                if (at(i, col) > 1e-11) {
                    double ratio = at(i, rhs) / at(i, col);
                    if (ratio < best - 1e-14 ||
                        (ratio < best + 1e-14 && (row < 0 || basis[i] < basis[row]))) {
                        best = ratio;
                        row = i;
                    }
                }
            }
            if (row < 0) return false;  // unbounded
            pivot(t, basis, m, width, row, col);
        }
        throw std::runtime_error("DenseLp: iteration limit reached");
    }
};

}  // namespace mvmb
