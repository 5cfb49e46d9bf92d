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

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace mvmb {

/**
 * Uniform lattice on the standard simplex {w in R^k_+ : sum w <= 1} with n
 * subdivisions per edge. A node with multi-index (i1..ik) carries the chart
 * weights (i1/n, ..., ik/n); the implied zeroth weight is 1 - sum/n.
 *
 * Node ids are contiguous. For k = 2 the id layout is i-major with j
 * contiguous, which the envelope rasteriser relies on.
 */
class SimplexGrid {
  public:
    SimplexGrid(int k, int n) : k_(k), n_(n) {
        if (k < 0 || k > 3) throw std::invalid_argument("SimplexGrid: k must be in [0, 3]");
        if (k > 0 && n < 1) throw std::invalid_argument("SimplexGrid: n must be >= 1");
        build();
    }

    int k() const { return k_; }
    int n() const { return n_; }
    std::size_t node_count() const { return index_.size(); }

    const std::array<int, 3>& multi_index(std::size_t id) const { return index_[id]; }

    std::size_t id1(int i) const { return static_cast<std::size_t>(i); }
    std::size_t id2(int i, int j) const { return row_start_[i] + static_cast<std::size_t>(j); }
    std::size_t id3(int i, int j, int l) const {
        return plane_start_[i] + row_start3_[i][j] + static_cast<std::size_t>(l);
    }

    /// Chart weights (w_1..w_k) of a node.
    void chart(std::size_t id, double* out) const {
        for (int d = 0; d < k_; ++d) out[d] = static_cast<double>(index_[id][d]) / n_;
    }

    /// Full weight vector (w_0..w_k) of a node.
    void full_weights(std::size_t id, double* out) const {
        int s = 0;
        for (int d = 0; d < k_; ++d) s += index_[id][d];
        out[0] = static_cast<double>(n_ - s) / n_;
        for (int d = 0; d < k_; ++d) out[d + 1] = static_cast<double>(index_[id][d]) / n_;
    }

    /// Sum of multi-index entries (n * (1 - w_0)).
    int level(std::size_t id) const {
        int s = 0;
        for (int d = 0; d < k_; ++d) s += index_[id][d];
        return s;
    }

    bool on_boundary(std::size_t id) const {
        if (k_ == 0) return false;
        if (level(id) == n_) return true;
        for (int d = 0; d < k_; ++d)
            if (index_[id][d] == 0) return true;
        return false;
    }

    /**
     * Piecewise-linear interpolation of nodal values at a chart point
     * (barycentric on the standard triangulation). Exact at nodes. Points
     * outside the simplex by more than a small tolerance are rejected.
     */
    double interpolate(std::span<const double> chart_point, std::span<const double> values) const {
        constexpr double tol = 1e-9;
        if (static_cast<int>(chart_point.size()) != k_)
            throw std::invalid_argument("SimplexGrid::interpolate: wrong chart dimension");
        if (k_ == 0) return values[0];

        double sum = 0.0;
        for (int d = 0; d < k_; ++d) {
            if (chart_point[d] < -tol || chart_point[d] > 1.0 + tol)
                throw std::invalid_argument("SimplexGrid::interpolate: point outside simplex");
            sum += chart_point[d];
        }
        if (sum > 1.0 + tol)
            throw std::invalid_argument("SimplexGrid::interpolate: point outside simplex");

        std::array<double, 3> x{};
        for (int d = 0; d < k_; ++d) x[d] = std::clamp(chart_point[d], 0.0, 1.0) * n_;
        double levels = 0.0;
        for (int d = 0; d < k_; ++d) levels += x[d];
        if (levels > n_) {  // roundoff dust beyond the diagonal face: project
            double scale = n_ / levels;
            for (int d = 0; d < k_; ++d) x[d] *= scale;
        }

        if (k_ == 1) {
            int i = std::min(static_cast<int>(x[0]), n_ - 1);
            double f = x[0] - i;
            return values[id1(i)] * (1.0 - f) + values[id1(i + 1)] * f;
        }
        if (k_ == 2) {
            int i = std::min(static_cast<int>(x[0]), n_ - 1);
            int j = std::min(static_cast<int>(x[1]), n_ - 1);
            while (i + j > n_ - 1) (x[0] - i > x[1] - j ? j : i) -= 1;  // stay in a valid cell
            double fx = x[0] - i, fy = x[1] - j;
            if (i + j == n_ - 1 && fx + fy > 1.0) {
                // roundoff dust past the diagonal face of a boundary cell
                const double s = fx + fy;
                fx /= s;
                fy /= s;
            }
            if (fx + fy <= 1.0)
                return values[id2(i, j)] * (1.0 - fx - fy) + values[id2(i + 1, j)] * fx +
                       values[id2(i, j + 1)] * fy;
            return values[id2(i + 1, j + 1)] * (fx + fy - 1.0) + values[id2(i + 1, j)] * (1.0 - fy) +
                   values[id2(i, j + 1)] * (1.0 - fx);
        }
        // k == 3: lattice-simplex interpolation in full barycentric
        // coordinates y = (slack, x1, x2, x3), sum y = n.
        double y[4] = {n_ - x[0] - x[1] - x[2], x[0], x[1], x[2]};
        int g[4];
        double f[4];
        int m = 0;
        for (int d = 0; d < 4; ++d) {
            g[d] = std::clamp(static_cast<int>(std::floor(y[d])), 0, n_);
            f[d] = y[d] - g[d];
        }
        double fsum = f[0] + f[1] + f[2] + f[3];
        m = static_cast<int>(std::llround(fsum));
        int ord[4] = {0, 1, 2, 3};
        std::sort(ord, ord + 4, [&](int a, int b) { return f[a] > f[b]; });
        auto node_value = [&](int b1, int b2, int b3, int b4) {
            // barycentric (with slack) -> chart multi-index
            (void)b1;
            return values[id3(b2, b3, b4)];
        };
        if (m == 0) return node_value(g[0], g[1], g[2], g[3]);
        if (m == 1) {
            double v = 0.0;
            for (int d = 0; d < 4; ++d) {
                if (f[d] <= 0.0) continue;
                int b[4] = {g[0], g[1], g[2], g[3]};
                b[d] += 1;
                v += f[d] * node_value(b[0], b[1], b[2], b[3]);
            }
            return v;
        }
        if (m == 3) {
            double v = 0.0;
            for (int d = 0; d < 4; ++d) {
                if (1.0 - f[d] <= 0.0) continue;
                int b[4] = {g[0] + 1, g[1] + 1, g[2] + 1, g[3] + 1};
                b[d] -= 1;
                v += (1.0 - f[d]) * node_value(b[0], b[1], b[2], b[3]);
            }
            return v;
        }
        // m == 2: vertices {p1p2, p1p3, p1p4, p2p3} in sorted-fraction order.
        auto pair_value = [&](int a, int b) {
            int c[4] = {g[0], g[1], g[2], g[3]};
            c[a] += 1;
            c[b] += 1;
            return node_value(c[0], c[1], c[2], c[3]);
        };
        double f1 = f[ord[0]], f2 = f[ord[1]], f3 = f[ord[2]], f4 = f[ord[3]];
        double wA = 0.5 * (f1 + f2 - f3 - f4);
        double wB = 0.5 * (f1 - f2 + f3 - f4);
        double wC = f4;
        double wD = 1.0 - f1;
        return wA * pair_value(ord[0], ord[1]) + wB * pair_value(ord[0], ord[2]) +
               wC * pair_value(ord[0], ord[3]) + wD * pair_value(ord[1], ord[2]);
    }

  private:
    void build() {
        if (k_ == 0) {
            index_.push_back({0, 0, 0});
            return;
        }
        if (k_ == 1) {
            for (int i = 0; i <= n_; ++i) index_.push_back({i, 0, 0});
            return;
        }
        if (k_ == 2) {
            row_start_.resize(n_ + 1);
            for (int i = 0; i <= n_; ++i) {
                row_start_[i] = index_.size();
                for (int j = 0; j <= n_ - i; ++j) index_.push_back({i, j, 0});
            }
            return;
        }
        plane_start_.resize(n_ + 1);
        row_start3_.resize(n_ + 1);
        for (int i = 0; i <= n_; ++i) {
            plane_start_[i] = index_.size();
            row_start3_[i].resize(n_ - i + 1);
            for (int j = 0; j <= n_ - i; ++j) {
                row_start3_[i][j] = index_.size() - plane_start_[i];
                for (int l = 0; l <= n_ - i - j; ++l) index_.push_back({i, j, l});
            }
        }
    }

    int k_, n_;
    std::vector<std::array<int, 3>> index_;
    std::vector<std::size_t> row_start_;
    std::vector<std::size_t> plane_start_;
    std::vector<std::vector<std::size_t>> row_start3_;
};

}  // namespace mvmb
