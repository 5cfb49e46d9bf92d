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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "mvmbound/linprog.hpp"
#include "mvmbound/simplex_grid.hpp"

namespace mvmb {

/**
 * Upper concave envelope of nodal values on the 1-d lattice 0..m-1: the
 * smallest concave majorant of the points (i, w[i]), evaluated at the nodes.
 * If support is given, support[i] receives the bracketing hull vertices of
 * node i (both equal to i where the node is itself a vertex).
 */
inline void concave_envelope_1d(const double* w, int m, double* env,
                                std::array<int32_t, 2>* support = nullptr) {
    if (m <= 0) throw std::invalid_argument("concave_envelope_1d: empty input");
    std::vector<int> hull;
    hull.reserve(m);
    for (int i = 0; i < m; ++i) {
        // pop while the previous vertex lies on or below the new chord
        while (hull.size() >= 2) {
            const int a = hull[hull.size() - 2], b = hull.back();
            if ((w[b] - w[a]) * static_cast<double>(i - b) <=
                (w[i] - w[b]) * static_cast<double>(b - a))
                hull.pop_back();
            else
                break;
        }
        hull.push_back(i);
    }
    for (std::size_t s = 0; s + 1 < hull.size(); ++s) {
        const int a = hull[s], b = hull[s + 1];
        const double slope = (w[b] - w[a]) / static_cast<double>(b - a);
        for (int i = a + 1; i < b; ++i) {
            env[i] = w[a] + slope * (i - a);
            if (support) support[i] = {a, b};
        }
    }
    for (int v : hull) {
        env[v] = w[v];
        if (support) support[v] = {v, v};
    }
}

/**
 * Upper concave envelope on the triangular lattice {(i,j) >= 0: i+j <= n}.
 *
 * The envelope is the upward part of the 3-d convex hull of the lifted nodes
 * (i, j, w). A quickhull pass grows the hull from the single facet spanned by
 * the three domain corners, so every intermediate state triangulates the
 * whole domain and coplanar points never become vertices: piecewise-planar
 * inputs, the prevailing case in the solver, cost O(nodes). Nodal values are
 * then the minimum over supporting facet planes, exact for a concave surface.
 *
 * A hinge scan (concavity across every interior lattice edge) runs first and
 * short-circuits inputs that are already concave.
 */
class Envelope2 {
  public:
    struct Facet {
        int32_t v0, v1, v2;  // vertex node ids, CCW in the (i,j) plane
        double A, B, C;      // supporting plane z = A*i + B*j + C
        int32_t nbr[3];      // across edges (v0,v1), (v1,v2), (v2,v0); -1 = boundary
        int32_t head = -1;   // outside-set linked list
        int32_t peak = -1;
        double peak_h = 0.0;
        int32_t stamp = 0;
        bool alive = true;
    };

    explicit Envelope2(const SimplexGrid& grid) : g_(grid) {
        if (g_.k() != 2) throw std::invalid_argument("Envelope2: grid must have k = 2");
        n_ = g_.n();
        next_.resize(g_.node_count());
    }

    /**
     * Computes env (>= w, concave over the lattice). facet_of, when given,
     * receives per node the id of a supporting facet into facets(), or -1
     * where the nodal value did not move. Returns whether any node moved
     * beyond the coplanarity tolerance.
     *
     * The hinge pre-test is sufficient for env == w but not necessary: the
     * hull's facets may cut lattice cells along the other diagonal, in which
     * case exact envelope values fail the fixed-triangulation hinge test
     * even though nothing would move. The hull pass settles those.
     */
    bool run(const double* w, double* env, int32_t* facet_of = nullptr) {
        const std::size_t nn = g_.node_count();
        facets_.clear();
        stamp_ = 0;

        double scale = 1.0;
        for (std::size_t id = 0; id < nn; ++id) scale = std::max(scale, std::abs(w[id]));
        const double eps = 1e-12 * scale;

        if (concave_hinges(w, eps)) {
            std::copy(w, w + nn, env);
            if (facet_of) std::fill(facet_of, facet_of + nn, int32_t{-1});
            return false;
        }
        build_hull(w, eps);
        return rasterize(w, env, facet_of, eps);
    }

    const std::vector<Facet>& facets() const { return facets_; }

  private:
    bool concave_hinges(const double* w, double eps) const {
        for (int i = 0; i < n_; ++i) {
            const std::size_t ri = g_.id2(i, 0);
            const std::size_t ri1 = g_.id2(i + 1, 0);
            const std::size_t rim = i >= 1 ? g_.id2(i - 1, 0) : 0;
            const int jm = n_ - i;
            for (int j = 0; j < jm; ++j) {
                if (i + j + 2 <= n_ &&
                    w[ri + j] + w[ri1 + j + 1] > w[ri1 + j] + w[ri + j + 1] + eps)
                    return false;
                if (j >= 1 && w[ri1 + j - 1] + w[ri + j + 1] > w[ri + j] + w[ri1 + j] + eps)
                    return false;
                if (i >= 1 && i + j + 1 <= n_ &&
                    w[rim + j + 1] + w[ri1 + j] > w[ri + j] + w[ri + j + 1] + eps)
                    return false;
            }
        }
        return true;
    }

    struct XY {
        double x, y;
    };
    XY coords(std::size_t id) const {
        const auto& mi = g_.multi_index(id);
        return {static_cast<double>(mi[0]), static_cast<double>(mi[1])};
    }

    void make_plane(Facet& f, const double* w) const {
        const XY p0 = coords(f.v0), p1 = coords(f.v1), p2 = coords(f.v2);
        const double d1x = p1.x - p0.x, d1y = p1.y - p0.y, d1z = w[f.v1] - w[f.v0];
        const double d2x = p2.x - p0.x, d2y = p2.y - p0.y, d2z = w[f.v2] - w[f.v0];
        const double det = d1x * d2y - d1y * d2x;
        f.A = (d1z * d2y - d2z * d1y) / det;
        f.B = (d1x * d2z - d2x * d1z) / det;
        f.C = w[f.v0] - f.A * p0.x - f.B * p0.y;
    }

    double height(const Facet& f, std::size_t id, const double* w) const {
        const XY p = coords(id);
        return w[id] - (f.A * p.x + f.B * p.y + f.C);
    }

    static int32_t edge_vertex(const Facet& f, int e, int which) {
        const int32_t v[3] = {f.v0, f.v1, f.v2};
        return v[(e + which) % 3];
    }

    void push_outside(int32_t fidx, int32_t p, double h) {
        Facet& f = facets_[fidx];
        next_[p] = f.head;
        f.head = p;
        if (h > f.peak_h) {
            f.peak_h = h;
            f.peak = p;
        }
    }

    void sever(int32_t outer, int32_t a, int32_t b) {
        if (outer < 0) return;
        Facet& of = facets_[outer];
        for (int e = 0; e < 3; ++e) {
            const int32_t ea = edge_vertex(of, e, 0), eb = edge_vertex(of, e, 1);
            if ((ea == a && eb == b) || (ea == b && eb == a)) of.nbr[e] = -1;
        }
    }

    void build_hull(const double* w, double eps) {
        const std::size_t nn = g_.node_count();
        const int32_t c0 = static_cast<int32_t>(g_.id2(0, 0));
        const int32_t c1 = static_cast<int32_t>(g_.id2(n_, 0));
        const int32_t c2 = static_cast<int32_t>(g_.id2(0, n_));

        Facet root;
        root.v0 = c0;
        root.v1 = c1;
        root.v2 = c2;
        root.nbr[0] = root.nbr[1] = root.nbr[2] = -1;
        make_plane(root, w);
        facets_.push_back(root);
        for (std::size_t id = 0; id < nn; ++id) {
            const auto i32 = static_cast<int32_t>(id);
            if (i32 == c0 || i32 == c1 || i32 == c2) continue;
            const double h = height(facets_[0], id, w);
            if (h > eps) push_outside(0, i32, h);
        }

        std::vector<int32_t> stack;
        if (facets_[0].peak >= 0) stack.push_back(0);
        std::vector<int32_t> visible, orphan, created;
        struct EdgeRef {
            int64_t key;
            int32_t facet;
            int side;
        };
        std::vector<EdgeRef> open_edges;

        while (!stack.empty()) {
            const int32_t fi = stack.back();
            stack.pop_back();
            if (!facets_[fi].alive || facets_[fi].peak < 0) continue;
            const int32_t apex = facets_[fi].peak;
            const XY pa = coords(apex);

            // Grow the visible set: facets whose plane passes below the apex.
            ++stamp_;
            visible.clear();
            visible.push_back(fi);
            facets_[fi].stamp = stamp_;
            for (std::size_t qi = 0; qi < visible.size(); ++qi) {
                const Facet& cur = facets_[visible[qi]];
                for (int e = 0; e < 3; ++e) {
                    const int32_t nb = cur.nbr[e];
                    if (nb < 0 || facets_[nb].stamp == stamp_ || !facets_[nb].alive) continue;
                    if (height(facets_[nb], apex, w) > eps) {
                        facets_[nb].stamp = stamp_;
                        visible.push_back(nb);
                    }
                }
            }

            // Horizon edges, orphaned outside points, retire visible facets.
            orphan.clear();
            created.clear();
            open_edges.clear();
            for (const int32_t v : visible)
                for (int32_t p = facets_[v].head; p >= 0; p = next_[p])
                    if (p != apex) orphan.push_back(p);

            for (const int32_t v : visible) {
                const Facet cur = facets_[v];  // copy: nbrs mutate below
                for (int e = 0; e < 3; ++e) {
                    const int32_t nb = cur.nbr[e];
                    if (nb >= 0 && facets_[nb].stamp == stamp_) continue;  // interior edge
                    const int32_t a = edge_vertex(cur, e, 0);
                    const int32_t b = edge_vertex(cur, e, 1);
                    const XY qa = coords(a), qb = coords(b);
                    const double area =
                        (qb.x - qa.x) * (pa.y - qa.y) - (qb.y - qa.y) * (pa.x - qa.x);
                    if (area == 0.0) {
                        // apex collinear with the edge: a side wall, not a facet
                        sever(nb, a, b);
                        continue;
                    }
                    Facet nf;
                    nf.v0 = area > 0.0 ? a : b;
                    nf.v1 = area > 0.0 ? b : a;
                    nf.v2 = apex;
                    make_plane(nf, w);
                    nf.nbr[0] = nb;
                    nf.nbr[1] = nf.nbr[2] = -1;
                    const auto nfi = static_cast<int32_t>(facets_.size());
                    facets_.push_back(nf);
                    created.push_back(nfi);
                    if (nb >= 0) {
                        Facet& of = facets_[nb];
                        for (int oe = 0; oe < 3; ++oe) {
                            const int32_t ea = edge_vertex(of, oe, 0);
                            const int32_t eb = edge_vertex(of, oe, 1);
                            if ((ea == a && eb == b) || (ea == b && eb == a)) of.nbr[oe] = nfi;
                        }
                    }
                    for (int side = 1; side <= 2; ++side) {
                        const int32_t ea = edge_vertex(facets_[nfi], side, 0);
                        const int32_t eb = edge_vertex(facets_[nfi], side, 1);
                        int64_t key = edge_key(ea, eb);
                        bool wired = false;
                        for (auto& oe : open_edges) {
                            if (oe.key == key) {
                                facets_[nfi].nbr[side] = oe.facet;
                                facets_[oe.facet].nbr[oe.side] = nfi;
                                oe.key = -1;
                                wired = true;
                                break;
                            }
                        }
                        if (!wired) open_edges.push_back({key, nfi, side});
                    }
                }
            }
            for (const int32_t v : visible) {
                facets_[v].alive = false;
                facets_[v].head = -1;
                facets_[v].peak = -1;
                facets_[v].peak_h = 0.0;
            }

            for (const int32_t p : orphan) {
                double best_h = eps;
                int32_t best_f = -1;
                for (const int32_t nfi : created) {
                    const double h = height(facets_[nfi], p, w);
                    if (h > best_h) {
                        best_h = h;
                        best_f = nfi;
                    }
                }
                if (best_f >= 0) push_outside(best_f, p, best_h);
            }
            for (const int32_t nfi : created)
                if (facets_[nfi].peak >= 0) stack.push_back(nfi);
        }
    }

    static int64_t edge_key(int32_t a, int32_t b) {
        if (a > b) std::swap(a, b);
        return (static_cast<int64_t>(a) << 32) | static_cast<uint32_t>(b);
    }

    bool rasterize(const double* w, double* env, int32_t* facet_of, double eps) {
        const std::size_t nn = g_.node_count();
        std::fill(env, env + nn, std::numeric_limits<double>::infinity());
        if (facet_of) std::fill(facet_of, facet_of + nn, int32_t{-1});

        for (std::size_t fi = 0; fi < facets_.size(); ++fi) {
            const Facet& f = facets_[fi];
            if (!f.alive) continue;
            const XY p[3] = {coords(f.v0), coords(f.v1), coords(f.v2)};
            const int xmin = static_cast<int>(std::min({p[0].x, p[1].x, p[2].x}));
            const int xmax = static_cast<int>(std::max({p[0].x, p[1].x, p[2].x}));
            for (int i = xmin; i <= xmax; ++i) {
                double ylo = std::numeric_limits<double>::infinity(), yhi = -ylo;
                for (int e = 0; e < 3; ++e) {
                    const XY &a = p[e], &b = p[(e + 1) % 3];
                    if (a.x == b.x) {
                        if (a.x == i) {
                            ylo = std::min({ylo, a.y, b.y});
                            yhi = std::max({yhi, a.y, b.y});
                        }
                        continue;
                    }
                    if ((i < a.x && i < b.x) || (i > a.x && i > b.x)) continue;
                    const double y = a.y + (b.y - a.y) * (i - a.x) / (b.x - a.x);
                    ylo = std::min(ylo, y);
                    yhi = std::max(yhi, y);
                }
                if (!(ylo <= yhi)) continue;
                const int jlo = std::max(0, static_cast<int>(std::ceil(ylo - 1e-9)));
                const int jhi = std::min(n_ - i, static_cast<int>(std::floor(yhi + 1e-9)));
                const std::size_t row = g_.id2(i, 0);
                for (int j = jlo; j <= jhi; ++j) {
                    const double cand = f.A * i + f.B * j + f.C;
                    if (cand < env[row + j]) {
                        env[row + j] = cand;
                        if (facet_of) facet_of[row + j] = static_cast<int32_t>(fi);
                    }
                }
            }
        }
        bool moved = false;
        for (std::size_t id = 0; id < nn; ++id) {
            if (!std::isfinite(env[id]) || env[id] < w[id]) env[id] = w[id];
            if (env[id] > w[id] + eps)
                moved = true;
            else if (facet_of)
                facet_of[id] = -1;
        }
        return moved;
    }

    const SimplexGrid& g_;
    int n_ = 0;
    int32_t stamp_ = 0;
    std::vector<Facet> facets_;
    std::vector<int32_t> next_;
};

/**
 * Upper concave envelope on the tetrahedral lattice (k = 3): one small LP
 * per node over the convex-combination polytope. Exact but O(nodes^2), for
 * coarse grids only. support_of, when given, receives up to four node ids
 * carrying the optimal combination.
 */
inline void concave_envelope_3(const SimplexGrid& g, const double* w, double* env,
                               std::vector<std::array<int32_t, 4>>* support_of = nullptr) {
    if (g.k() != 3) throw std::invalid_argument("concave_envelope_3: grid must have k = 3");
    const int nn = static_cast<int>(g.node_count());
    if (support_of) support_of->assign(nn, {-1, -1, -1, -1});

    // max sum(l_i w_i)  s.t.  sum(l_i p_i) = q, sum(l_i) = 1, l >= 0
    std::vector<double> a(4 * nn), c(nn);
    for (int i = 0; i < nn; ++i) {
        const auto& mi = g.multi_index(i);
        a[0 * nn + i] = mi[0];
        a[1 * nn + i] = mi[1];
        a[2 * nn + i] = mi[2];
        a[3 * nn + i] = 1.0;
        c[i] = -w[i];  // DenseLp minimises
    }
    for (int q = 0; q < nn; ++q) {
        const auto& mi = g.multi_index(q);
        std::vector<double> b = {static_cast<double>(mi[0]), static_cast<double>(mi[1]),
                                 static_cast<double>(mi[2]), 1.0};
        auto res = DenseLp::solve(4, nn, a, b, c);
        if (!res.feasible || !res.bounded)
            throw std::runtime_error("concave_envelope_3: degenerate support problem");
        env[q] = std::max(-res.objective, w[q]);
        if (support_of) {
            int t = 0;
            for (int i = 0; i < nn && t < 4; ++i)
                if (res.x[i] > 1e-12) (*support_of)[q][t++] = i;
        }
    }
}

}  // namespace mvmb
