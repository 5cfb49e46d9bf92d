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
#include <stdexcept>
#include <string>

#include "mvmbound/measures.hpp"
#include "mvmbound/payoffs.hpp"

namespace mvmb {

/**
 * Closed-form value of the average-price bound for a convex Lipschitz
 * payoff: the optimal model jumps to the terminal distribution at once, so
 *
 *     U(t, xi, a) = sum_i xi_i F(a + (T - t) x_i).
 */
inline double convex_value(const AtomicMeasure& m, double t, double a, const Payoff& p,
                           double horizon) {
    if (!p.is_convex()) throw std::invalid_argument("convex_value: payoff is not convex");
    if (!(t <= horizon)) throw std::invalid_argument("convex_value: t > horizon");
    double v = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i)
        v += m.weight(i) * p(a + (horizon - t) * m.atom(i));
    return v;
}

/**
 * State of the call-spread bound problem on the support {-1, 0, 1}:
 * beta and gamma are the weights at 0 and 1 (the weight at -1 is implied),
 * a the running average and (k1, k2) the spread strikes.
 */
struct SpreadState {
    double t = 0.0;
    double a = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
    double k1 = 0.0;
    double k2 = 0.0;
    double horizon = 1.0;

    void validate() const {
        if (!(beta >= 0.0 && gamma >= 0.0 && beta + gamma <= 1.0 + 1e-12))
            throw std::invalid_argument("SpreadState: (beta, gamma) outside the simplex");
        if (!(t <= horizon)) throw std::invalid_argument("SpreadState: t > horizon");
        if (!(k1 < k2)) throw std::invalid_argument("SpreadState: requires K1 < K2");
        if (!std::isfinite(k1) || !std::isfinite(k2))
            throw std::invalid_argument("SpreadState: non-finite strike");
    }
};

enum class Region { i, ii, iii, iv, v, vi, vii };

inline const char* region_name(Region r) {
    switch (r) {
        case Region::i: return "i";
        case Region::ii: return "ii";
        case Region::iii: return "iii";
        case Region::iv: return "iv";
        case Region::v: return "v";
        case Region::vi: return "vi";
        case Region::vii: return "vii";
    }
    return "?";
}

namespace detail {

// Reachable-average levels: a_lo/a_mid/a_hi are the averages locked in by
// freezing at -1, 0, 1; a_all uses the full drift 2*gamma + beta - 1 and
// a_pair the drift of the {0,1} block. When beta + gamma = 0 the pair drift
// is taken to be k2 by convention, which keeps the classification exhaustive.
struct SpreadLevels {
    double tt;      // horizon - t
    double a_lo;    // a - tt
    double a_mid;   // a
    double a_hi;    // a + tt
    double a_all;   // a + (2*gamma + beta - 1) * tt
    double a_pair;  // a + gamma/(gamma+beta) * tt
    double drift;   // 2*gamma + beta - 1
};

inline SpreadLevels spread_levels(const SpreadState& s) {
    SpreadLevels l;
    l.tt = s.horizon - s.t;
    l.a_lo = s.a - l.tt;
    l.a_mid = s.a;
    l.a_hi = s.a + l.tt;
    l.drift = 2.0 * s.gamma + s.beta - 1.0;
    l.a_all = s.a + l.drift * l.tt;
    double pair_drift = (s.beta + s.gamma > 0.0) ? s.gamma / (s.gamma + s.beta) : s.k2;
    l.a_pair = s.a + pair_drift * l.tt;
    return l;
}

}  // namespace detail

/**
 * Region of the seven-branch closed form. The inequalities below (strict
 * versus non-strict) partition the state space exactly; the first matching
 * branch is returned, which makes boundary ties deterministic.
 */
inline Region classify_region(const SpreadState& s) {
    s.validate();
    const auto l = detail::spread_levels(s);
    if (s.k2 <= l.a_all) return Region::i;
    if (s.k1 <= l.a_lo) return Region::ii;  // here a_all < k2
    if (s.k1 > l.a_lo && s.k2 <= l.a_pair) return Region::iii;
    if (s.k1 > l.a_lo && s.k1 <= l.a_mid) return Region::iv;  // here a_pair < k2
    if (s.k1 > l.a_mid && s.k2 <= l.a_hi) return Region::v;
    if (s.k1 > l.a_mid && s.k1 <= l.a_hi) return Region::vi;  // here a_hi < k2
    return Region::vii;                                       // a_hi < k1
}

/// The printed formula of one region, evaluated regardless of where the
/// state actually lies. Exposed for boundary-continuity checks.
inline double spread_branch_value(const SpreadState& s, Region r) {
    const auto l = detail::spread_levels(s);
    const double spread_cap = s.k2 - s.k1;
    switch (r) {
        case Region::i:
            return spread_cap;
        case Region::ii:
            return l.drift * l.tt + s.a - s.k1;
        case Region::iii: {
            double denom = 1.0 + (s.k2 - s.a) / l.tt;
            if (!(denom > 0.0))
                throw std::logic_error("spread_branch_value: degenerate denominator in region iii");
            return (2.0 * s.gamma + s.beta) * spread_cap / denom;
        }
        case Region::iv:
            return s.gamma * l.tt - (s.gamma + s.beta) * (s.k1 - s.a);
        case Region::v:
            if (!(s.k2 > s.a))
                throw std::logic_error("spread_branch_value: K2 <= a cannot happen in region v");
            return s.gamma * l.tt / (s.k2 - s.a) * spread_cap;
        case Region::vi:
            return s.gamma * (l.tt - (s.k1 - s.a));
        case Region::vii:
            return 0.0;
    }
    return 0.0;
}

/**
 * The seven-region closed-form upper bound for the call-spread payoff on
 * {-1, 0, 1}. Values lie in [0, K2 - K1]. States at t = horizon short-circuit
 * to the terminal payoff before any classification.
 */
inline double spread_value(const SpreadState& s) {
    s.validate();
    if (s.t == s.horizon)
        return std::min(std::max(s.a - s.k1, 0.0), s.k2 - s.k1);
    return spread_branch_value(s, classify_region(s));
}

/**
 * Closed-form drift residual V_t + s V_a of the region containing the state,
 * where s = 2*gamma + beta - 1. Zero in regions (i), (ii), (vii) and
 * non-positive elsewhere. States within boundary_tol of a region boundary
 * are rejected: one-sided derivatives differ there.
 */
inline double spread_drift_residual(const SpreadState& s, double boundary_tol = 1e-9) {
    s.validate();
    if (!(s.t < s.horizon))
        throw std::invalid_argument("spread_drift_residual: needs t < horizon");
    const auto l = detail::spread_levels(s);
    const Region r = classify_region(s);

    // Distance of the state from every region boundary, in payoff units.
    double margin = std::numeric_limits<double>::infinity();
    auto upd = [&](double d) { margin = std::min(margin, std::abs(d)); };
    upd(s.k2 - l.a_all);
    upd(s.k1 - l.a_lo);
    upd(s.k2 - l.a_pair);
    upd(s.k1 - l.a_mid);
    upd(s.k2 - l.a_hi);
    upd(s.k1 - l.a_hi);
    if (margin <= boundary_tol)
        throw std::invalid_argument("spread_drift_residual: state is on a region boundary");

    switch (r) {
        case Region::i:
        case Region::ii:
        case Region::vii:
            return 0.0;
        case Region::iii: {
            double denom = 1.0 + (s.k2 - s.a) / l.tt;
            return (s.k2 - s.k1) * (2.0 * s.gamma + s.beta) / (denom * denom) *
                   (-(s.k2 - s.a) / (l.tt * l.tt) + l.drift / l.tt);
        }
        case Region::iv:
            return -s.gamma + l.drift * (s.gamma + s.beta);
        case Region::v:
            return -s.gamma * (s.k2 - s.k1) / ((s.k2 - s.a) * (s.k2 - s.a)) *
                   (s.k2 - s.a - l.drift * l.tt);
        case Region::vi:
            return 2.0 * s.gamma * (s.gamma + 0.5 * s.beta - 1.0);
    }
    return 0.0;
}

/**
 * Two-atom reduction on {-1, 1} with strikes K1 = 0, K2 = 1/2: gamma is the
 * weight at 1. Exact where the average cannot yet have locked in either
 * strike from below (in particular everywhere at t = a = 0, where it equals
 * min(1/2, 2*gamma/3) for horizon 1).
 */
inline double two_atom_value(double t, double a, double gamma, double horizon) {
    if (!(gamma >= 0.0 && gamma <= 1.0))
        throw std::invalid_argument("two_atom_value: gamma outside [0, 1]");
    if (!(t <= horizon)) throw std::invalid_argument("two_atom_value: t > horizon");
    if (t == horizon) return std::min(std::max(a, 0.0), 0.5);
    double ratio = (0.5 - a) / (horizon - t);
    if (2.0 * gamma - 1.0 > ratio) return 0.5;
    return gamma / (1.0 + ratio);
}

}  // namespace mvmb
