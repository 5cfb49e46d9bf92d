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
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvmb {

constexpr double kWeightSumTol = 1e-12;
constexpr double kMarginalTol = 1e-10;

/**
 * A probability measure with finite support on the real line.
 *
 * Atoms are strictly increasing; weights are non-negative and sum to one
 * (renormalised once on construction, never afterwards). Zero-weight atoms
 * are kept: they index faces of the weight simplex and may only lose mass,
 * never regain it, under martingale dynamics.
 *
 * By default all atoms must be >= 0. Supports containing negative points
 * must be requested explicitly with allow_negative.
 */
class AtomicMeasure {
  public:
    AtomicMeasure(std::vector<double> atoms, std::vector<double> weights,
                  bool allow_negative = false)
        : atoms_(std::move(atoms)), weights_(std::move(weights)) {
        if (atoms_.empty() || atoms_.size() != weights_.size())
            throw std::invalid_argument("AtomicMeasure: atoms/weights size mismatch");
        for (std::size_t i = 0; i < atoms_.size(); ++i) {
            if (!std::isfinite(atoms_[i]))
                throw std::invalid_argument("AtomicMeasure: non-finite atom");
            if (!allow_negative && atoms_[i] < 0.0)
                throw std::invalid_argument("AtomicMeasure: negative atom without allow_negative");
            if (i > 0 && !(atoms_[i] > atoms_[i - 1]))
                throw std::invalid_argument("AtomicMeasure: atoms must be strictly increasing");
            if (!(weights_[i] >= 0.0))
                throw std::invalid_argument("AtomicMeasure: negative weight");
        }
        double total = 0.0;
        for (double w : weights_) total += w;
        if (std::abs(total - 1.0) > kWeightSumTol)
            throw std::invalid_argument("AtomicMeasure: weights sum to " + std::to_string(total));
        // One-time renormalisation; exactness is asserted by tests downstream.
        if (total != 1.0) {
            for (double& w : weights_) w /= total;
        }
    }

    static AtomicMeasure dirac(double x, bool allow_negative = false) {
        return AtomicMeasure({x}, {1.0}, allow_negative);
    }

    const std::vector<double>& atoms() const { return atoms_; }
    const std::vector<double>& weights() const { return weights_; }
    std::size_t size() const { return atoms_.size(); }

    double atom(std::size_t i) const { return atoms_[i]; }
    double weight(std::size_t i) const { return weights_[i]; }

    /// Whether atom i currently carries mass. Zero-weight atoms are inactive
    /// but retained in the support.
    bool active(std::size_t i) const { return weights_[i] > 0.0; }

    double min_atom() const { return atoms_.front(); }
    double max_atom() const { return atoms_.back(); }

    double mean() const {
        double m = 0.0;
        for (std::size_t i = 0; i < atoms_.size(); ++i) m += weights_[i] * atoms_[i];
        return m;
    }

    /// CDF evaluated with the right-continuous convention.
    double cdf(double x) const {
        double s = 0.0;
        for (std::size_t i = 0; i < atoms_.size() && atoms_[i] <= x; ++i) s += weights_[i];
        return s;
    }

    bool operator==(const AtomicMeasure& o) const {
        return atoms_ == o.atoms_ && weights_ == o.weights_;
    }

  private:
    std::vector<double> atoms_;
    std::vector<double> weights_;
};

inline double mean(const AtomicMeasure& m) { return m.mean(); }

/**
 * A coupling of two atomic measures: mass[i*n2 + j] moved from source atom i
 * to target atom j. Row sums match the source weights and column sums the
 * target weights, both within kMarginalTol.
 */
struct TransportPlan {
    AtomicMeasure source;
    AtomicMeasure target;
    std::vector<double> mass;  // row-major, size() == source.size()*target.size()

    double at(std::size_t i, std::size_t j) const { return mass[i * target.size() + j]; }

    double cost() const {
        double c = 0.0;
        for (std::size_t i = 0; i < source.size(); ++i)
            for (std::size_t j = 0; j < target.size(); ++j)
                c += at(i, j) * std::abs(source.atom(i) - target.atom(j));
        return c;
    }

    double row_sum(std::size_t i) const {
        double s = 0.0;
        for (std::size_t j = 0; j < target.size(); ++j) s += at(i, j);
        return s;
    }

    double col_sum(std::size_t j) const {
        double s = 0.0;
        for (std::size_t i = 0; i < source.size(); ++i) s += at(i, j);
        return s;
    }

    void validate() const {
        if (mass.size() != source.size() * target.size())
            throw std::invalid_argument("TransportPlan: mass matrix has wrong shape");
        for (double g : mass)
            if (!(g >= 0.0)) throw std::invalid_argument("TransportPlan: negative mass");
        for (std::size_t i = 0; i < source.size(); ++i)
            if (std::abs(row_sum(i) - source.weight(i)) > kMarginalTol)
                throw std::invalid_argument("TransportPlan: row marginal mismatch at " +
                                            std::to_string(i));
        for (std::size_t j = 0; j < target.size(); ++j)
            if (std::abs(col_sum(j) - target.weight(j)) > kMarginalTol)
                throw std::invalid_argument("TransportPlan: column marginal mismatch at " +
                                            std::to_string(j));
    }
};

/**
 * Wasserstein-1 distance between two measures on the line, computed in
 * closed form as the L1 distance between their CDFs.
 */
inline double wasserstein1_distance(const AtomicMeasure& a, const AtomicMeasure& b) {
    // Sweep the merged support; between consecutive points both CDFs are flat.
    double d = 0.0;
    double fa = 0.0, fb = 0.0;
    std::size_t ia = 0, ib = 0;
    double prev = std::min(a.min_atom(), b.min_atom());
    while (ia < a.size() || ib < b.size()) {
        double xa = ia < a.size() ? a.atom(ia) : std::numeric_limits<double>::infinity();
        double xb = ib < b.size() ? b.atom(ib) : std::numeric_limits<double>::infinity();
        double x = std::min(xa, xb);
        d += std::abs(fa - fb) * (x - prev);
        if (xa == x) fa += a.weight(ia++);
        if (xb == x) fb += b.weight(ib++);
        prev = x;
    }
    return d;
}

struct W1Result {
    double distance;
    TransportPlan plan;
};

/**
 * Wasserstein-1 distance together with an optimal plan. The plan is the
 * monotone (quantile) coupling, which is optimal in one dimension; its cost
 * reproduces the CDF-difference distance up to roundoff.
 */
inline W1Result wasserstein1(const AtomicMeasure& a, const AtomicMeasure& b) {
    std::vector<double> mass(a.size() * b.size(), 0.0);
    std::size_t i = 0, j = 0;
    double ra = a.weight(0), rb = b.weight(0);
    // Northwest-corner sweep over sorted atoms = quantile coupling.
    while (i < a.size() && j < b.size()) {
        double moved = std::min(ra, rb);
        mass[i * b.size() + j] += moved;
        ra -= moved;
        rb -= moved;
        if (ra <= 0.0) {
            if (++i < a.size()) ra = a.weight(i);
        }
        if (rb <= 0.0) {
            if (++j < b.size()) rb = b.weight(j);
        }
    }
    TransportPlan plan{a, b, std::move(mass)};
    return W1Result{wasserstein1_distance(a, b), std::move(plan)};
}

/** Disintegration of a plan into a kernel: one conditional measure per source atom. */
struct DisintegrationKernel {
    std::vector<AtomicMeasure> rows;
    std::vector<bool> degenerate;  // true where the source weight was zero

    /// Recompose the kernel against the plan's source weights; returns the
    /// target marginal exactly when the plan was valid.
    AtomicMeasure recompose(const AtomicMeasure& source) const {
        std::vector<double> w(rows.front().size(), 0.0);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < w.size(); ++j)
                w[j] += source.weight(i) * rows[i].weight(j);
        bool neg = rows.front().min_atom() < 0.0;
        return AtomicMeasure(rows.front().atoms(), std::move(w), neg);
    }
};

inline DisintegrationKernel disintegrate(const TransportPlan& plan) {
    plan.validate();
    DisintegrationKernel k;
    bool neg = plan.target.min_atom() < 0.0;
    for (std::size_t i = 0; i < plan.source.size(); ++i) {
        double wi = plan.source.weight(i);
        if (wi > 0.0) {
            std::vector<double> row(plan.target.size());
            for (std::size_t j = 0; j < plan.target.size(); ++j) row[j] = plan.at(i, j) / wi;
            double s = 0.0;
            for (double v : row) s += v;
            for (double& v : row) v /= s;
            k.rows.emplace_back(plan.target.atoms(), std::move(row), neg);
            k.degenerate.push_back(false);
        } else {
            // No mass to condition on: fixed singleton at the first target atom.
            std::vector<double> row(plan.target.size(), 0.0);
            row[0] = 1.0;
            k.rows.emplace_back(plan.target.atoms(), std::move(row), neg);
            k.degenerate.push_back(true);
        }
    }
    return k;
}

/**
 * Lipschitz modulus bound: |U(t,m1,a) - U(t,m2,a)| <= zeta * (T-t) * W1(m1,m2)
 * for any value function with payoff Lipschitz constant zeta.
 */
inline double value_modulus(const AtomicMeasure& m1, const AtomicMeasure& m2, double lipschitz,
                            double horizon_remaining) {
    if (lipschitz < 0.0 || horizon_remaining < 0.0)
        throw std::invalid_argument("value_modulus: negative lipschitz or horizon");
    return lipschitz * horizon_remaining * wasserstein1_distance(m1, m2);
}

/** Specification of a continuous law by its CDF, for quantisation. */
struct CdfSpec {
    std::function<double(double)> cdf;
    double support_lo = 0.0;
    double support_hi = std::numeric_limits<double>::infinity();
    std::optional<std::function<double(double)>> quantile;  // optional exact inverse
    std::optional<double> mean;                             // optional exact mean
};

namespace detail {

inline double cdf_quantile(const CdfSpec& spec, double p) {
    if (spec.quantile) return (*spec.quantile)(p);
    double lo = spec.support_lo;
    double hi = spec.support_hi;
    if (!std::isfinite(hi)) {
        hi = std::max(1.0, lo + 1.0);
        int guard = 0;
        while (spec.cdf(hi) < p) {
            hi = lo + 2.0 * (hi - lo);
            if (++guard > 400) throw std::invalid_argument("quantize: CDF tail does not reach p");
        }
    }
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (spec.cdf(mid) < p)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

// Mean of a non-negative law as the integral of the survival function.
// Divergence is flagged when x * (1 - F(x)) fails to vanish far out in the
// tail, which a finite-mean law cannot sustain.
inline double cdf_mean(const CdfSpec& spec) {
    if (spec.mean) return *spec.mean;
    double total = 0.0;
    double x = std::max(0.0, spec.support_lo);
    double step = 0.5;
    double prev_contrib = std::numeric_limits<double>::infinity();
    int slow_decay = 0;
    while (true) {
        double hi = std::isfinite(spec.support_hi) ? std::min(x + step, spec.support_hi)
                                                   : x + step;
        // Simpson on [x, hi] of (1 - F).
        double f0 = 1.0 - spec.cdf(x);
        double fm = 1.0 - spec.cdf(0.5 * (x + hi));
        double f1 = 1.0 - spec.cdf(hi);
        double contrib = (hi - x) / 6.0 * (f0 + 4.0 * fm + f1);
        total += contrib;
        x = hi;
        if (std::isfinite(spec.support_hi) && x >= spec.support_hi) break;
        if (x * f1 <= 1e-10 * (1.0 + total)) break;
        // With geometric blocks the contributions of a finite-mean tail must
        // shrink; a sustained flat sequence means the mean diverges.
        if (x > 64.0 && contrib > 1e-12 * (1.0 + total) && contrib > 0.98 * prev_contrib)
            ++slow_decay;
        else
            slow_decay = 0;
        if (slow_decay >= 8 || total > 1e12 || x > 1e30)
            throw std::invalid_argument("quantize: CDF has an infinite (or huge) mean");
        prev_contrib = contrib;
        step *= 1.5;
    }
    return total;
}

}  // namespace detail

/**
 * Equal-weight quantisation of a continuous law: atoms at the quantile
 * midpoints q((k+1/2)/n). With mean_correct the atoms are rigidly shifted
 * (or, if a shift would go negative, scaled) so the atomic mean matches the
 * continuous mean exactly.
 */
inline AtomicMeasure quantize(const CdfSpec& spec, int n_atoms, bool mean_correct = false) {
    if (n_atoms < 1) throw std::invalid_argument("quantize: n_atoms must be >= 1");
    std::vector<double> atoms;
    atoms.reserve(n_atoms);
    for (int k = 0; k < n_atoms; ++k)
        atoms.push_back(detail::cdf_quantile(spec, (k + 0.5) / n_atoms));

    // Merge coincident quantiles (point masses in the law).
    std::vector<double> xs, ws;
    for (int k = 0; k < n_atoms; ++k) {
        if (!xs.empty() && atoms[k] - xs.back() <= 1e-12 * (1.0 + std::abs(xs.back())))
            ws.back() += 1.0 / n_atoms;
        else {
            xs.push_back(atoms[k]);
            ws.push_back(1.0 / n_atoms);
        }
    }

    if (mean_correct) {
        double target = detail::cdf_mean(spec);
        double have = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) have += xs[i] * ws[i];
        double shift = target - have;
        if (xs.front() + shift >= 0.0) {
            for (double& x : xs) x += shift;
        } else if (have > 0.0) {
            double scale = target / have;
            for (double& x : xs) x *= scale;
        } else {
            throw std::invalid_argument("quantize: cannot mean-correct a zero-mean quantisation");
        }
    } else {
        detail::cdf_mean(spec);  // still reject infinite-mean inputs
    }
    return AtomicMeasure(std::move(xs), std::move(ws));
}

/// W1 distance between an atomic measure and a continuous law given by its
/// CDF, as the L1 distance between the two CDFs on [lo, hi].
inline double wasserstein1_to_cdf(const AtomicMeasure& m, const std::function<double(double)>& cdf,
                                  double lo, double hi) {
    std::vector<double> cuts{lo};
    for (double x : m.atoms())
        if (x > lo && x < hi) cuts.push_back(x);
    cuts.push_back(hi);
    std::sort(cuts.begin(), cuts.end());

    double total = 0.0;
    for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
        double level = m.cdf(0.5 * (cuts[s] + cuts[s + 1]));
        // Adaptive Simpson of |F(x) - level| on the segment.
        std::function<double(double, double, double, double, double, int)> rec =
            [&](double a, double b, double fa, double fb, double whole, int depth) -> double {
            double mid = 0.5 * (a + b);
            double fm = std::abs(cdf(mid) - level);
            double l = (mid - a) / 6.0 * (fa + 4.0 * std::abs(cdf(0.5 * (a + mid)) - level) + fm);
            double r = (b - mid) / 6.0 * (fm + 4.0 * std::abs(cdf(0.5 * (mid + b)) - level) + fb);
            if (depth > 24 || std::abs(l + r - whole) < 1e-12) return l + r;
            return rec(a, mid, fa, fm, l, depth + 1) + rec(mid, b, fm, fb, r, depth + 1);
        };
        double a = cuts[s], b = cuts[s + 1];
        double fa = std::abs(cdf(a) - level), fb = std::abs(cdf(b) - level);
        double whole = (b - a) / 6.0 * (fa + 4.0 * std::abs(cdf(0.5 * (a + b)) - level) + fb);
        total += rec(a, b, fa, fb, whole, 0);
    }
    return total;
}

/** Market call quotes: strikes (first one must be 0) and prices. */
struct CallQuoteCurve {
    std::vector<double> strikes;
    std::vector<double> prices;
};

struct CalibrationError : std::runtime_error {
    std::size_t index;
    CalibrationError(const std::string& what, std::size_t idx)
        : std::runtime_error(what + " (index " + std::to_string(idx) + ")"), index(idx) {}
};

/// Call prices E(S-K)+ of an atomic measure at the given strikes.
inline std::vector<double> price_calls(const AtomicMeasure& m, const std::vector<double>& strikes) {
    std::vector<double> out;
    out.reserve(strikes.size());
    for (double k : strikes) {
        double c = 0.0;
        for (std::size_t i = 0; i < m.size(); ++i)
            c += m.weight(i) * std::max(m.atom(i) - k, 0.0);
        out.push_back(c);
    }
    return out;
}

/**
 * Discrete Breeden–Litzenberger calibration: the measure supported on the
 * strike grid whose call prices interpolate the quotes. Interior weights are
 * the second differences of the price curve; boundary mass goes to the
 * outermost strikes, which keeps the support inside the quoted range. The
 * result round-trips price_calls exactly whenever the quotes came from an
 * atomic measure on the same grid.
 */
inline AtomicMeasure calibrate_from_calls(const CallQuoteCurve& curve) {
    const auto& K = curve.strikes;
    const auto& C = curve.prices;
    if (K.size() != C.size() || K.size() < 2)
        throw CalibrationError("calibrate: need at least two quotes", 0);
    if (K.front() != 0.0) throw CalibrationError("calibrate: first strike must be 0", 0);
    for (std::size_t i = 0; i < K.size(); ++i) {
        if (i > 0 && !(K[i] > K[i - 1]))
            throw CalibrationError("calibrate: strikes must increase", i);
        if (!(C[i] >= 0.0)) throw CalibrationError("calibrate: negative price", i);
    }

    const std::size_t m = K.size() - 1;
    std::vector<double> slope(m);
    for (std::size_t i = 0; i < m; ++i) {
        slope[i] = (C[i + 1] - C[i]) / (K[i + 1] - K[i]);
        if (slope[i] > 1e-12) throw CalibrationError("calibrate: prices increase in strike", i);
        if (slope[i] < -1.0 - 1e-12)
            throw CalibrationError("calibrate: slope below -1 (mass above 1)", i);
        if (i > 0 && slope[i] - slope[i - 1] < -kMarginalTol)
            throw CalibrationError("calibrate: curve not convex", i);
    }
    if (C.back() > 1e-9 * (1.0 + C.front()))
        throw CalibrationError("calibrate: last quote leaves mass beyond the final strike",
                               K.size() - 1);

    std::vector<double> w(K.size(), 0.0);
    w[0] = 1.0 + slope[0];
    for (std::size_t i = 1; i < m; ++i) w[i] = slope[i] - slope[i - 1];
    w[m] = -slope[m - 1];
    for (double& x : w) x = std::max(x, 0.0);

    AtomicMeasure out(K, std::move(w));
    if (std::abs(out.mean() - C.front()) > 1e-9 * (1.0 + C.front()))
        throw CalibrationError("calibrate: recovered mean disagrees with the strike-0 price", 0);
    return out;
}

}  // namespace mvmb
