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

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mvmbound/concave_envelope.hpp"
#include "mvmbound/measures.hpp"
#include "mvmbound/payoffs.hpp"
#include "mvmbound/simplex_grid.hpp"

namespace mvmb {

/**
 * Discretisation of the average-price bound problem. n_time / n_avg /
 * n_simplex are interval counts per axis. The a-grid spans the averages
 * reachable from [a_query_lo, a_query_hi] over the horizon (plus a small
 * pad) unless overridden.
 */
struct SolverConfig {
    int n_time = 100;
    int n_avg = 100;
    int n_simplex = 100;
    double horizon = 1.0;
    TimeWeight weight = TimeWeight::constant();
    double tolerance = 0.0;  // 0: defaults to 5*(dt + da + dxi)
    double a_query_lo = 0.0;
    double a_query_hi = 0.0;
    double a_margin = 0.02;  // relative pad of the a-range
    std::optional<double> a_lo_override;
    std::optional<double> a_hi_override;
    bool allow_negative = false;
    bool store_all_times = false;
    std::vector<double> store_times;  // extra stored rows; t = 0 always kept
    double policy_tolerance = 1e-9;
    int threads = 0;  // 0: MVMB_THREADS env var, else hardware
};

enum class NodeAction : uint8_t { Wait = 0, Diffuse = 1, Terminal = 2 };

struct PolicyNode {
    NodeAction action = NodeAction::Wait;
    std::array<int32_t, 4> support = {-1, -1, -1, -1};  // node ids of the jump targets
};

/** Action map extracted from a solved surface at t = 0. */
struct ExtractedPolicy {
    int n_simplex = 0;
    int k = 0;
    std::vector<PolicyNode> at_start;  // one entry per simplex node
    std::size_t count(NodeAction a) const {
        std::size_t c = 0;
        for (const auto& p : at_start) c += p.action == a;
        return c;
    }
};

namespace detail {

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("MVMB_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

template <typename Fn>
void parallel_rows(int rows, int threads, Fn&& fn) {
    if (threads <= 1 || rows < 4) {
        for (int j = 0; j < rows; ++j) fn(j, 0);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads - 1);
    for (int w = 1; w < threads; ++w)
        pool.emplace_back([&, w] {
            for (int j = w; j < rows; j += threads) fn(j, w);
        });
    for (int j = 0; j < rows; j += threads) fn(j, 0);
    for (auto& th : pool) th.join();
}

}  // namespace detail

/**
 * Solved value surface for one support set: nodal values over (time row,
 * a-node, simplex node) at the stored time rows, plus one lower-dimensional
 * surface per proper sub-support (reached when atoms lose all mass). The
 * terminal row is analytic (the payoff itself) and is not stored.
 */
class ValueSurface {
  public:
    const std::vector<double>& support() const { return support_; }
    const SimplexGrid& grid() const { return *grid_; }
    const Payoff& payoff() const { return payoff_; }
    double horizon() const { return horizon_; }
    double tolerance() const { return tolerance_; }
    int n_time() const { return n_time_; }
    int n_avg() const { return n_avg_; }

    double a_lo() const { return a_node(0); }
    double a_hi() const { return a_node(n_avg_); }
    double a_node(int j) const { return a_anchor_ + (j - j_anchor_) * da_; }
    double t_node(int m) const { return m * dt_; }

    const std::vector<int>& stored_rows() const { return stored_rows_; }
    const std::vector<double>& row(int time_index) const {
        for (std::size_t s = 0; s < stored_rows_.size(); ++s)
            if (stored_rows_[s] == time_index) return rows_[s];
        throw std::invalid_argument("ValueSurface: time row not stored");
    }

    /// Faces keyed by the bitmask of retained support atoms.
    const std::map<uint32_t, std::unique_ptr<ValueSurface>>& faces() const { return faces_; }

    const std::vector<PolicyNode>& start_policy() const { return policy_; }

    const std::vector<std::string>& warnings() const { return warnings_; }

    /**
     * Value at (t, a, weights): linear in t between stored rows (the
     * analytic terminal row backs the last interval), linear in a, and
     * piecewise-linear over the weight simplex. Exact at stored nodes.
     * weights is the full weight vector over support().
     */
    double query(double t, double a, std::span<const double> weights) const {
        if (weights.size() != support_.size())
            throw std::invalid_argument("ValueSurface::query: weight size mismatch");
        if (t < -1e-12 || t > horizon_ + 1e-12)
            throw std::invalid_argument("ValueSurface::query: t outside [0, horizon]");
        if (a < a_lo() - 1e-9 || a > a_hi() + 1e-9)
            throw std::invalid_argument("ValueSurface::query: a outside the grid");
        double mass = 0.0;
        for (double wgt : weights) {
            if (wgt < -1e-9) throw std::invalid_argument("ValueSurface::query: negative weight");
            mass += wgt;
        }
        if (std::abs(mass - 1.0) > 1e-6)
            throw std::invalid_argument("ValueSurface::query: weights must sum to 1");

        t = std::clamp(t, 0.0, horizon_);
        if (analytic_atom_)  // singleton support: exact closed form
            return payoff_(a + weight_.integral(t, horizon_) * *analytic_atom_);
        // locate bracketing stored rows (terminal row handled analytically)
        int lo_idx = -1, hi_idx = -1;
        double tm = t / dt_;
        for (std::size_t s = 0; s < stored_rows_.size(); ++s) {
            if (stored_rows_[s] <= tm + 1e-9) lo_idx = static_cast<int>(s);
        }
        for (std::size_t s = stored_rows_.size(); s-- > 0;) {
            if (stored_rows_[s] >= tm - 1e-9) hi_idx = static_cast<int>(s);
        }
        auto row_value = [&](int sidx) { return row_query(rows_[sidx], a, weights); };
        if (lo_idx < 0 && hi_idx < 0) return terminal_query(t, a, weights);
        if (lo_idx >= 0 && std::abs(stored_rows_[lo_idx] - tm) < 1e-9) return row_value(lo_idx);
        if (hi_idx >= 0 && std::abs(stored_rows_[hi_idx] - tm) < 1e-9) return row_value(hi_idx);
        double t_lo, v_lo, t_hi, v_hi;
        if (lo_idx >= 0) {
            t_lo = stored_rows_[lo_idx] * dt_;
            v_lo = row_value(lo_idx);
        } else {
            throw std::invalid_argument("ValueSurface::query: no stored row at or before t");
        }
        if (hi_idx >= 0) {
            t_hi = stored_rows_[hi_idx] * dt_;
            v_hi = row_value(hi_idx);
        } else {
            t_hi = horizon_;
            v_hi = terminal_query(horizon_, a, weights);
        }
        if (t_hi <= t_lo) return v_lo;
        double u = (t - t_lo) / (t_hi - t_lo);
        return v_lo * (1.0 - u) + v_hi * u;
    }

    /// Convenience: value at t = 0, a = a_query anchor, given full weights.
    double value_at_start(std::span<const double> weights) const {
        return query(0.0, a_anchor_, weights);
    }

  private:
    friend ValueSurface solve(const std::vector<double>&, std::optional<std::vector<double>>,
                              const Payoff&, const SolverConfig&);

    double row_query(const std::vector<double>& r, double a, std::span<const double> weights) const {
        const std::size_t nn = grid_->node_count();
        double pos = (a - a_lo()) / da_;
        int j = std::clamp(static_cast<int>(pos), 0, n_avg_ - 1);
        double f = std::clamp(pos - j, 0.0, 1.0);
        std::array<double, 3> chart{};
        for (std::size_t d = 1; d < support_.size(); ++d) chart[d - 1] = weights[d];
        std::span<const double> cspan(chart.data(), support_.size() - 1);
        double v0 = grid_->interpolate(cspan, std::span<const double>(&r[j * nn], nn));
        if (f == 0.0) return v0;
        double v1 = grid_->interpolate(cspan, std::span<const double>(&r[(j + 1) * nn], nn));
        return v0 * (1.0 - f) + v1 * f;
    }

    double terminal_query(double, double a, std::span<const double>) const { return payoff_(a); }

    std::vector<double> support_;
    Payoff payoff_ = Payoff({0.0}, {0.0, 0.0}, 0.0);
    TimeWeight weight_ = TimeWeight::constant();
    std::optional<double> analytic_atom_;  // set for singleton supports
    std::unique_ptr<SimplexGrid> grid_;
    double horizon_ = 1.0, dt_ = 0.0, da_ = 0.0, tolerance_ = 0.0;
    double a_anchor_ = 0.0;
    int j_anchor_ = 0;
    int n_time_ = 0, n_avg_ = 0;
    std::vector<int> stored_rows_;          // time indices, ascending
    std::vector<std::vector<double>> rows_;  // [a-index * node_count + node]
    std::vector<PolicyNode> policy_;        // per node at t = 0
    std::map<uint32_t, std::unique_ptr<ValueSurface>> faces_;
    std::vector<std::string> warnings_;
};

namespace detail {

struct Layer {
    uint32_t mask = 0;
    std::vector<int> atoms;  // indices into the full support
    std::unique_ptr<SimplexGrid> grid;
    std::vector<double> cur, next;   // [a-index * node_count + node]
    std::vector<double> xbar;        // per node
    std::vector<int> foot_off;       // per node, current step
    std::vector<double> foot_frac;   // per node, current step
    // boundary clamps: parent node -> value source
    struct Clamp {
        std::size_t node;
        int child_layer;  // index into layers, or -1 for singleton
        std::size_t child_node;
        int singleton_atom;  // support index when child_layer == -1
    };
    std::vector<Clamp> clamps;
    std::vector<PolicyNode> policy;  // filled at t = 0
    int k() const { return static_cast<int>(atoms.size()) - 1; }
};

}  // namespace detail

/**
 * Backward semi-Lagrangian solve of the average-price bound on an atomic
 * support (2 to 4 atoms; singletons return the analytic surface).
 *
 * Each backward step applies, per (a-node, sub-support): a transport step
 * along the frozen-measure characteristic da = f(t) xbar dt (linear
 * interpolation at the foot), then the upper concave envelope over the
 * weight simplex with boundary nodes clamped to the sub-support surfaces.
 * The envelope realises the optimal instantaneous diffusion at frozen time;
 * sub-supports are processed first within every step, so absorbed states
 * always read already-updated values. The scheme is monotone and consistent.
 */
inline ValueSurface solve(const std::vector<double>& support,
                          std::optional<std::vector<double>> weights_hint, const Payoff& payoff,
                          const SolverConfig& cfg) {
    const int s = static_cast<int>(support.size());
    if (s < 1 || s > 4)
        throw std::invalid_argument("solve: support must contain 1 to 4 atoms");
    for (int i = 0; i < s; ++i) {
        if (i > 0 && !(support[i] > support[i - 1]))
            throw std::invalid_argument("solve: support atoms must be strictly increasing");
        if (support[i] < 0.0 && !cfg.allow_negative)
            throw std::invalid_argument("solve: negative atom requires allow_negative");
    }
    if (!payoff.is_nonnegative())
        throw std::invalid_argument("solve: payoff must be non-negative");
    if (cfg.n_time < 2 || cfg.n_avg < 2 || cfg.n_simplex < 2)
        throw std::invalid_argument("solve: all grid counts must be >= 2");
    if (weights_hint && static_cast<int>(weights_hint->size()) != s)
        throw std::invalid_argument("solve: weights hint has wrong size");

    const double T = cfg.horizon;
    const int n_t = cfg.n_time, n_a = cfg.n_avg, n_s = cfg.n_simplex;
    const double dt = T / n_t;

    // a-grid: reachable range from the query interval, padded, anchored so
    // a_query_lo sits exactly on a node.
    double lo, hi;
    if (cfg.weight.is_constant_one()) {
        lo = cfg.a_query_lo + T * std::min(0.0, support.front());
        hi = cfg.a_query_hi + T * std::max(0.0, support.back());
    } else {
        const double reach =
            cfg.weight.max_abs() * T * std::max(std::abs(support.front()), std::abs(support.back()));
        lo = cfg.a_query_lo - reach;
        hi = cfg.a_query_hi + reach;
    }
    double pad = cfg.a_margin * (hi - lo + 1.0);
    lo -= pad;
    hi += pad;
    if (cfg.a_lo_override) lo = *cfg.a_lo_override;
    if (cfg.a_hi_override) hi = *cfg.a_hi_override;
    const double da = (hi - lo) / n_a;
    const int j_anchor = static_cast<int>(std::round((cfg.a_query_lo - lo) / da));
    auto a_node = [&](int j) { return cfg.a_query_lo + (j - j_anchor) * da; };

    const double dxi = 1.0 / n_s;
    const double tolerance =
        cfg.tolerance > 0.0 ? cfg.tolerance : 5.0 * (dt + da + dxi);

    ValueSurface out;
    out.support_ = support;
    out.payoff_ = payoff;
    out.weight_ = cfg.weight;
    out.horizon_ = T;
    out.dt_ = dt;
    out.da_ = da;
    out.tolerance_ = tolerance;
    out.a_anchor_ = cfg.a_query_lo;
    out.j_anchor_ = j_anchor;
    out.n_time_ = n_t;
    out.n_avg_ = n_a;

    if (payoff.lipschitz() > 0.0) {
        double min_gap = hi - lo;
        const auto& bps = payoff.breakpoints();
        for (std::size_t i = 1; i < bps.size(); ++i) min_gap = std::min(min_gap, bps[i] - bps[i - 1]);
        if (min_gap < 2.0 * da)
            out.warnings_.push_back("a-grid too coarse to bracket adjacent payoff breakpoints");
    }

    // Singleton support: the surface is analytic, no grid march needed.
    if (s == 1) {
        out.grid_ = std::make_unique<SimplexGrid>(0, 1);
        out.analytic_atom_ = support[0];
        out.stored_rows_ = {0};
        out.rows_.emplace_back(n_a + 1);
        for (int j = 0; j <= n_a; ++j)
            out.rows_[0][j] = payoff(a_node(j) + cfg.weight.integral(0.0, T) * support[0]);
        out.policy_.assign(1, PolicyNode{NodeAction::Wait, {-1, -1, -1, -1}});
        return out;
    }

    // Enumerate sub-supports (layers) in increasing size.
    std::vector<detail::Layer> layers;
    std::vector<int> layer_of_mask(1u << s, -1);
    for (int size = 2; size <= s; ++size) {
        for (uint32_t mask = 1; mask < (1u << s); ++mask) {
            if (__builtin_popcount(mask) != size) continue;
            detail::Layer L;
            L.mask = mask;
            for (int i = 0; i < s; ++i)
                if (mask & (1u << i)) L.atoms.push_back(i);
            L.grid = std::make_unique<SimplexGrid>(size - 1, n_s);
            const std::size_t nn = L.grid->node_count();
            L.cur.assign(static_cast<std::size_t>(n_a + 1) * nn, 0.0);
            L.next.assign(static_cast<std::size_t>(n_a + 1) * nn, 0.0);
            L.xbar.resize(nn);
            L.foot_off.resize(nn);
            L.foot_frac.resize(nn);
            std::vector<double> full(size);
            for (std::size_t id = 0; id < nn; ++id) {
                L.grid->full_weights(id, full.data());
                double xb = 0.0;
                for (int d = 0; d < size; ++d) xb += full[d] * support[L.atoms[d]];
                L.xbar[id] = xb;
            }
            layer_of_mask[mask] = static_cast<int>(layers.size());
            layers.push_back(std::move(L));
        }
    }
    // boundary clamps (needs all layer indices known)
    for (auto& L : layers) {
        const std::size_t nn = L.grid->node_count();
        const int size = static_cast<int>(L.atoms.size());
        for (std::size_t id = 0; id < nn; ++id) {
            const auto& mi = L.grid->multi_index(id);
            int level = 0;
            for (int d = 0; d + 1 < size; ++d) level += mi[d];
            std::vector<int> alive;
            if (n_s - level > 0) alive.push_back(0);
            for (int d = 0; d + 1 < size; ++d)
                if (mi[d] > 0) alive.push_back(d + 1);
            if (static_cast<int>(alive.size()) == size) continue;  // interior node
            detail::Layer::Clamp c;
            c.node = id;
            if (alive.size() == 1) {
                c.child_layer = -1;
                c.child_node = 0;
                c.singleton_atom = L.atoms[alive[0]];
            } else {
                uint32_t cmask = 0;
                for (int d : alive) cmask |= 1u << L.atoms[d];
                c.child_layer = layer_of_mask[cmask];
                c.singleton_atom = -1;
                // child multi-index: integer weights of the child's chart atoms
                const auto& C = layers[c.child_layer];
                int ci[3] = {0, 0, 0};
                for (std::size_t d = 1; d < C.atoms.size(); ++d) {
                    // weight of atom C.atoms[d] inside L
                    int pos = -1;
                    for (int q = 0; q < size; ++q)
                        if (L.atoms[q] == C.atoms[d]) pos = q;
                    int wint = pos == 0 ? n_s - level : mi[pos - 1];
                    ci[d - 1] = wint;
                }
                c.child_node = C.grid->k() == 1
                                   ? C.grid->id1(ci[0])
                                   : (C.grid->k() == 2 ? C.grid->id2(ci[0], ci[1])
                                                       : C.grid->id3(ci[0], ci[1], ci[2]));
            }
            L.clamps.push_back(c);
        }
    }

    // time rows to store
    std::vector<char> store(n_t + 1, 0);
    store[0] = 1;
    if (cfg.store_all_times)
        for (int m = 0; m <= n_t; ++m) store[m] = 1;
    for (double ts : cfg.store_times) {
        int m = static_cast<int>(std::round(ts / dt));
        if (m >= 0 && m <= n_t) store[m] = 1;
    }
    store[n_t] = 0;  // terminal row is analytic

    const std::size_t top_nn = layers.back().grid->node_count();
    {
        // memory guard for stored rows of the top layer
        std::size_t nrows = 0;
        for (int m = 0; m <= n_t; ++m) nrows += store[m];
        const double bytes = static_cast<double>(nrows) * (n_a + 1) * top_nn * 8.0;
        if (bytes > 3.5e9)
            throw std::invalid_argument(
                "solve: stored rows exceed the memory budget; reduce store_times/store_all_times");
    }

    // terminal condition
    for (auto& L : layers) {
        const std::size_t nn = L.grid->node_count();
        for (int j = 0; j <= n_a; ++j) {
            const double fa = payoff(a_node(j));
            double* rowp = &L.cur[static_cast<std::size_t>(j) * nn];
            std::fill(rowp, rowp + nn, fa);
        }
    }

    const int threads = detail::resolve_threads(cfg.threads);
    std::vector<std::vector<double>> scratch(threads);
    std::vector<std::vector<int32_t>> facet_scratch(threads);
    std::vector<std::vector<std::array<int32_t, 2>>> support1(threads);
    for (int w = 0; w < threads; ++w) {
        scratch[w].resize(top_nn);
        facet_scratch[w].resize(top_nn);
        support1[w].resize(n_s + 1);
    }

    std::map<int, std::vector<std::vector<double>>> stored;  // time index -> per-layer rows

    // closed-form singleton value
    std::vector<double> phi(n_t + 1);
    for (int m = 0; m <= n_t; ++m) phi[m] = cfg.weight.integral(m * dt, T);

    // reachable-average cap: V(t, a, .) <= max F over the terminal averages
    // attainable from (t, a); keeps the grid-edge extension honest
    std::vector<double> phi_abs(n_t + 1);
    for (int m = 0; m <= n_t; ++m)
        phi_abs[m] = cfg.weight.is_constant_one() ? phi[m]
                                                  : cfg.weight.max_abs() * (T - m * dt);
    auto reach_cap = [&](int m, double aj, double x_lo, double x_hi) {
        double lo, hi;
        if (cfg.weight.is_constant_one()) {
            lo = aj + phi[m] * x_lo;
            hi = aj + phi[m] * x_hi;
        } else {
            const double span = phi_abs[m] * std::max(std::abs(x_lo), std::abs(x_hi));
            lo = aj - span;
            hi = aj + span;
        }
        return payoff.max_on(lo, hi);
    };

    // one Envelope2 per thread per 2d layer (3-atom faces of a 4-atom solve)
    std::map<uint32_t, std::vector<std::unique_ptr<Envelope2>>> env2_by_mask;
    for (auto& L : layers)
        if (L.k() == 2) {
            auto& v = env2_by_mask[L.mask];
            v.resize(threads);
            for (int w = 0; w < threads; ++w) v[w] = std::make_unique<Envelope2>(*L.grid);
        }

    for (int m = n_t - 1; m >= 0; --m) {
        const double step_drift = cfg.weight.integral(m * dt, (m + 1) * dt);
        const bool record_policy = (m == 0);

        for (auto& L : layers) {
            const std::size_t nn = L.grid->node_count();
            std::swap(L.cur, L.next);
            for (std::size_t id = 0; id < nn; ++id) {
                const double sft = step_drift * L.xbar[id] / da;
                const double off = std::floor(sft);
                L.foot_off[id] = static_cast<int>(off);
                L.foot_frac[id] = sft - off;
            }
            if (record_policy) L.policy.assign(nn, PolicyNode{});

            auto process_row = [&](int j, int worker) {
                double* W = scratch[worker].data();
                const double aj = a_node(j);
                // Transport step along the frozen-measure characteristic. The
                // freeze-to-maturity control is admissible and its value
                // F(a + Phi(t) xbar) is exact on this grid, so the wait value
                // takes the max with it; that pins the scheme to the exact
                // value wherever pure waiting is optimal and removes the
                // interpolation smearing that otherwise accumulates there.
                for (std::size_t id = 0; id < nn; ++id) {
                    const int base = j + L.foot_off[id];
                    double v;
                    if (base < 0)
                        v = L.next[id];
                    else if (base >= n_a)
                        v = L.next[static_cast<std::size_t>(n_a) * nn + id];
                    else {
                        const double* r0 = &L.next[static_cast<std::size_t>(base) * nn];
                        const double* r1 = r0 + nn;
                        v = r0[id] + L.foot_frac[id] * (r1[id] - r0[id]);
                    }
                    const double frozen = payoff(aj + phi[m] * L.xbar[id]);
                    W[id] = std::max(v, frozen);
                }
                // absorbed states read the already-updated sub-support values
                for (const auto& c : L.clamps)
                    W[c.node] = c.child_layer < 0
                                    ? payoff(aj + phi[m] * support[c.singleton_atom])
                                    : layers[c.child_layer]
                                          .cur[static_cast<std::size_t>(j) *
                                                   layers[c.child_layer].grid->node_count() +
                                               c.child_node];

                double* outrow = &L.cur[static_cast<std::size_t>(j) * nn];
                if (L.k() == 1) {
                    auto* sup = support1[worker].data();
                    concave_envelope_1d(W, static_cast<int>(nn), outrow,
                                        record_policy && j == j_anchor ? sup : nullptr);
                    if (record_policy && j == j_anchor) {
                        for (std::size_t id = 0; id < nn; ++id) {
                            auto& p = L.policy[id];
                            if (outrow[id] > W[id] + cfg.policy_tolerance) {
                                p.action = NodeAction::Diffuse;
                                p.support = {sup[id][0], sup[id][1], -1, -1};
                            }
                        }
                    }
                } else if (L.k() == 2) {
                    Envelope2& env = *env2_by_mask[L.mask][worker];
                    int32_t* fo = facet_scratch[worker].data();
                    env.run(W, outrow, record_policy && j == j_anchor ? fo : nullptr);
                    if (record_policy && j == j_anchor) {
                        for (std::size_t id = 0; id < nn; ++id) {
                            auto& p = L.policy[id];
                            if (outrow[id] > W[id] + cfg.policy_tolerance && fo[id] >= 0) {
                                const auto& f = env.facets()[fo[id]];
                                p.action = NodeAction::Diffuse;
                                p.support = {f.v0, f.v1, f.v2, -1};
                            }
                        }
                    }
                } else {
                    concave_envelope_3(*L.grid, W, outrow);
                    if (record_policy && j == j_anchor) {
                        for (std::size_t id = 0; id < nn; ++id)
                            if (outrow[id] > W[id] + cfg.policy_tolerance)
                                L.policy[id].action = NodeAction::Diffuse;
                    }
                }
                // keep the boundary exactly equal to the sub-support surfaces
                for (const auto& c : L.clamps) outrow[c.node] = W[c.node];
                // reachability cap (a no-op away from the grid edges)
                const double cap =
                    reach_cap(m, aj, support[L.atoms.front()], support[L.atoms.back()]);
                for (std::size_t id = 0; id < nn; ++id)
                    if (outrow[id] > cap) outrow[id] = cap;
            };

            if (&L == &layers.back())
                detail::parallel_rows(n_a + 1, threads, process_row);
            else
                for (int j = 0; j <= n_a; ++j) process_row(j, 0);
        }

        if (store[m]) {
            auto& rows = stored[m];
            rows.reserve(layers.size());
            for (auto& L : layers) rows.push_back(L.cur);
        }
    }

    // Boundary nodes inherit the action of the sub-support they live on:
    // diffusion on a face is the face's own policy, with its jump targets
    // remapped into the parent's node ids. Vertices stay Wait.
    for (auto& L : layers) {
        if (L.policy.empty()) continue;
        for (const auto& c : L.clamps) {
            if (c.child_layer < 0) {
                L.policy[c.node] = PolicyNode{};
                continue;
            }
            const auto& C = layers[c.child_layer];
            if (C.policy.empty()) continue;
            PolicyNode p = C.policy[c.child_node];
            if (p.action == NodeAction::Diffuse) {
                for (int q = 0; q < 4; ++q) {
                    if (p.support[q] < 0) continue;
                    // child node multi-index -> parent multi-index (zeros kept)
                    const auto& cmi = C.grid->multi_index(p.support[q]);
                    int clevel = 0;
                    for (int d = 0; d + 1 < static_cast<int>(C.atoms.size()); ++d)
                        clevel += cmi[d];
                    int pmi[3] = {0, 0, 0};
                    for (std::size_t d = 0; d < C.atoms.size(); ++d) {
                        const int wint = d == 0 ? n_s - clevel : cmi[d - 1];
                        int pos = -1;
                        for (std::size_t q2 = 0; q2 < L.atoms.size(); ++q2)
                            if (L.atoms[q2] == C.atoms[d]) pos = static_cast<int>(q2);
                        if (pos > 0) pmi[pos - 1] = wint;
                    }
                    p.support[q] = static_cast<int32_t>(
                        L.grid->k() == 1
                            ? L.grid->id1(pmi[0])
                            : (L.grid->k() == 2 ? L.grid->id2(pmi[0], pmi[1])
                                                : L.grid->id3(pmi[0], pmi[1], pmi[2])));
                }
            }
            L.policy[c.node] = p;
        }
    }

    // assemble the output surface tree
    auto finish = [&](ValueSurface& vs, int layer_idx) {
        auto& L = layers[layer_idx];
        vs.support_.clear();
        for (int ai : L.atoms) vs.support_.push_back(support[ai]);
        vs.payoff_ = payoff;
        vs.weight_ = cfg.weight;
        vs.horizon_ = T;
        vs.dt_ = dt;
        vs.da_ = da;
        vs.tolerance_ = tolerance;
        vs.a_anchor_ = cfg.a_query_lo;
        vs.j_anchor_ = j_anchor;
        vs.n_time_ = n_t;
        vs.n_avg_ = n_a;
        vs.grid_ = std::make_unique<SimplexGrid>(L.grid->k(), n_s);
        for (auto& [midx, rows] : stored) {
            vs.stored_rows_.push_back(midx);
            vs.rows_.push_back(std::move(rows[layer_idx]));
        }
        vs.policy_ = L.policy;
    };

    finish(out, static_cast<int>(layers.size()) - 1);
    for (std::size_t li = 0; li + 1 < layers.size(); ++li) {
        auto sub = std::make_unique<ValueSurface>();
        finish(*sub, static_cast<int>(li));
        out.faces_.emplace(layers[li].mask, std::move(sub));
    }
    // singleton faces: analytic surfaces
    for (int i = 0; i < s; ++i) {
        auto sub = std::make_unique<ValueSurface>();
        sub->support_ = {support[i]};
        sub->payoff_ = payoff;
        sub->weight_ = cfg.weight;
        sub->analytic_atom_ = support[i];
        sub->grid_ = std::make_unique<SimplexGrid>(0, 1);
        sub->horizon_ = T;
        sub->dt_ = dt;
        sub->da_ = da;
        sub->tolerance_ = tolerance;
        sub->a_anchor_ = cfg.a_query_lo;
        sub->j_anchor_ = j_anchor;
        sub->n_time_ = n_t;
        sub->n_avg_ = n_a;
        out.faces_.emplace(1u << i, std::move(sub));
    }
    (void)weights_hint;
    return out;
}

inline ExtractedPolicy extract_policy(const ValueSurface& surface) {
    ExtractedPolicy p;
    p.k = surface.grid().k();
    p.n_simplex = surface.grid().n();
    p.at_start = surface.start_policy();
    return p;
}

struct ConvergenceRow {
    int n_time, n_avg, n_simplex;
    double max_error;
};

/**
 * Solve at a sequence of resolutions and report the maximum error of the
 * start row (t = 0, anchored a) against a reference value per simplex node.
 */
inline std::vector<ConvergenceRow> convergence_study(
    const std::vector<double>& support, const Payoff& payoff,
    const std::vector<SolverConfig>& cfgs,
    const std::function<double(std::span<const double>)>& reference) {
    std::vector<ConvergenceRow> rows;
    for (const auto& cfg : cfgs) {
        ValueSurface vs = solve(support, std::nullopt, payoff, cfg);
        const auto& g = vs.grid();
        std::vector<double> full(support.size());
        double max_err = 0.0;
        for (std::size_t id = 0; id < g.node_count(); ++id) {
            g.full_weights(id, full.data());
            double got = vs.query(0.0, cfg.a_query_lo, full);
            double want = reference(std::span<const double>(full.data(), full.size()));
            max_err = std::max(max_err, std::abs(got - want));
        }
        rows.push_back({cfg.n_time, cfg.n_avg, cfg.n_simplex, max_err});
    }
    return rows;
}

}  // namespace mvmb
