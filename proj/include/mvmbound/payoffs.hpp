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
#include <stdexcept>
#include <vector>

namespace mvmb {

/**
 * A continuous piecewise-linear payoff of the running average.
 *
 * Represented by its breakpoints, the slope of each segment (one more slope
 * than breakpoints: the first slope applies left of the first breakpoint)
 * and the value at the first breakpoint. Evaluation is defined on the whole
 * real line; the outermost slopes extend indefinitely.
 *
 * Convexity, boundedness, non-negativity and the Lipschitz constant are
 * derived exactly from the slopes at construction.
 */
class Payoff {
  public:
    Payoff(std::vector<double> breakpoints, std::vector<double> slopes,
           double value_at_first_breakpoint)
        : breakpoints_(std::move(breakpoints)), slopes_(std::move(slopes)) {
        if (breakpoints_.empty() || slopes_.size() != breakpoints_.size() + 1)
            throw std::invalid_argument("Payoff: need n breakpoints and n+1 slopes");
        for (std::size_t i = 1; i < breakpoints_.size(); ++i)
            if (!(breakpoints_[i] > breakpoints_[i - 1]))
                throw std::invalid_argument("Payoff: breakpoints must increase");

        values_.resize(breakpoints_.size());
        values_[0] = value_at_first_breakpoint;
        for (std::size_t i = 1; i < breakpoints_.size(); ++i)
            values_[i] =
                values_[i - 1] + slopes_[i] * (breakpoints_[i] - breakpoints_[i - 1]);

        lipschitz_ = 0.0;
        convex_ = true;
        for (std::size_t i = 0; i < slopes_.size(); ++i) {
            lipschitz_ = std::max(lipschitz_, std::abs(slopes_[i]));
            if (i > 0 && slopes_[i] < slopes_[i - 1]) convex_ = false;
        }
        bounded_ = slopes_.front() == 0.0 && slopes_.back() == 0.0;

        nonnegative_ = slopes_.front() <= 0.0 && slopes_.back() >= 0.0;
        for (double v : values_)
            if (v < 0.0) nonnegative_ = false;
    }

    double operator()(double a) const {
        auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), a);
        std::size_t seg = static_cast<std::size_t>(it - breakpoints_.begin());
        std::size_t anchor = seg == 0 ? 0 : seg - 1;
        return values_[anchor] + slopes_[seg] * (a - breakpoints_[anchor]);
    }

    const std::vector<double>& breakpoints() const { return breakpoints_; }
    const std::vector<double>& slopes() const { return slopes_; }
    const std::vector<double>& breakpoint_values() const { return values_; }

    double lipschitz() const { return lipschitz_; }
    bool is_convex() const { return convex_; }
    bool is_bounded() const { return bounded_; }
    bool is_nonnegative() const { return nonnegative_; }

    /// Largest payoff value attainable on [lo, hi]; exact for piecewise-linear.
    double max_on(double lo, double hi) const {
        double m = std::max((*this)(lo), (*this)(hi));
        for (double b : breakpoints_)
            if (b > lo && b < hi) m = std::max(m, (*this)(b));
        return m;
    }

    double min_on(double lo, double hi) const {
        double m = std::min((*this)(lo), (*this)(hi));
        for (double b : breakpoints_)
            if (b > lo && b < hi) m = std::min(m, (*this)(b));
        return m;
    }

  private:
    std::vector<double> breakpoints_;
    std::vector<double> slopes_;
    std::vector<double> values_;
    double lipschitz_;
    bool convex_, bounded_, nonnegative_;
};

/// (a - K)+. The strike may be negative: shifted calls arise as limits of
/// spreads on supports containing negative points.
inline Payoff call(double strike) {
    if (!std::isfinite(strike)) throw std::invalid_argument("call: non-finite strike");
    return Payoff({strike}, {0.0, 1.0}, 0.0);
}

/// (a - K1)+ - (a - K2)+, bounded by K2 - K1. Not convex.
inline Payoff call_spread(double k1, double k2) {
    if (!(k1 < k2)) throw std::invalid_argument("call_spread: requires K1 < K2");
    return Payoff({k1, k2}, {0.0, 1.0, 0.0}, 0.0);
}

inline bool is_convex(const Payoff& p) { return p.is_convex(); }
inline double eval(const Payoff& p, double a) { return p(a); }

/**
 * Time weighting f(t) for weighted-average payoffs. Either the constant 1
 * or a continuous piecewise-linear function sampled on [0, T].
 */
class TimeWeight {
  public:
    static TimeWeight constant() { return TimeWeight(); }

    static TimeWeight piecewise(std::vector<double> times, std::vector<double> values) {
        TimeWeight w;
        if (times.size() != values.size() || times.size() < 2)
            throw std::invalid_argument("TimeWeight: need >= 2 samples");
        for (std::size_t i = 1; i < times.size(); ++i)
            if (!(times[i] > times[i - 1]))
                throw std::invalid_argument("TimeWeight: times must increase");
        w.times_ = std::move(times);
        w.values_ = std::move(values);
        return w;
    }

    bool is_constant_one() const { return times_.empty(); }

    double operator()(double t) const {
        if (times_.empty()) return 1.0;
        if (t <= times_.front()) return values_.front();
        if (t >= times_.back()) return values_.back();
        auto it = std::upper_bound(times_.begin(), times_.end(), t);
        std::size_t i = static_cast<std::size_t>(it - times_.begin());
        double u = (t - times_[i - 1]) / (times_[i] - times_[i - 1]);
        return values_[i - 1] + u * (values_[i] - values_[i - 1]);
    }

    /// Exact integral of f over [t0, t1] (trapezoid on each linear piece).
    double integral(double t0, double t1) const {
        if (times_.empty()) return t1 - t0;
        if (t1 < t0) return -integral(t1, t0);
        double total = 0.0;
        double cur = t0;
        for (std::size_t i = 0; i < times_.size() && cur < t1; ++i) {
            if (times_[i] <= cur) continue;
            double hi = std::min(times_[i], t1);
            total += 0.5 * ((*this)(cur) + (*this)(hi)) * (hi - cur);
            cur = hi;
        }
        if (cur < t1) total += 0.5 * ((*this)(cur) + (*this)(t1)) * (t1 - cur);
        return total;
    }

    double max_abs() const {
        if (times_.empty()) return 1.0;
        double m = 0.0;
        for (double v : values_) m = std::max(m, std::abs(v));
        return m;
    }

  private:
    TimeWeight() = default;
    std::vector<double> times_;
    std::vector<double> values_;
};

}  // namespace mvmb
