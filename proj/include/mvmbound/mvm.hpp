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
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mvmbound/hjb.hpp"
#include "mvmbound/measures.hpp"
#include "mvmbound/oracle.hpp"
#include "mvmbound/payoffs.hpp"
#include "mvmbound/rng.hpp"

namespace mvmb {

/**
 * State of the simulated weight process: the weights over a fixed support,
 * the real clock t (advances at rate lambda), the running average a, and
 * the artificial clock r that drives the diffusion. Coordinates absorbed at
 * 0 or 1 are frozen and can never move again.
 */
struct MvmState {
    std::vector<double> weights;
    std::vector<uint8_t> frozen;
    double t = 0.0;
    double a = 0.0;
    double r = 0.0;
    double horizon = 1.0;

    bool singular() const {
        for (double w : weights)
            if (w == 1.0) return true;
        return false;
    }
    int singular_atom() const {
        for (std::size_t i = 0; i < weights.size(); ++i)
            if (weights[i] == 1.0) return static_cast<int>(i);
        return -1;
    }
    bool terminated() const { return t >= horizon && singular(); }
};

/** One-step control: time-advance rate and diffusion direction (full length,
 * entries summing to zero, zero at frozen coordinates). The chart norm
 * (all entries but the first) satisfies |w|^2 + lambda = 1 until the state
 * is singular and matured. */
struct Control {
    double lambda = 1.0;
    std::vector<double> w;
};

namespace detail {

// Force the unfrozen block to carry exactly the mass left over by the
// frozen coordinates.
inline void fix_mass(std::vector<double>& w, const std::vector<uint8_t>& frozen) {
    double frozen_mass = 0.0, cur = 0.0;
    int biggest = -1;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (frozen[i])
            frozen_mass += w[i];
        else {
            cur += w[i];
            if (biggest < 0 || w[i] > w[biggest]) biggest = static_cast<int>(i);
        }
    }
    const double target = 1.0 - frozen_mass;
    if (biggest < 0) {
        if (std::abs(target) > 1e-9)
            throw std::runtime_error("mvm: all coordinates frozen with mass != 1");
        return;
    }
    if (cur <= 0.0) throw std::runtime_error("mvm: diffusion wiped out the unfrozen block");
    const double scale = target / cur;
    for (std::size_t i = 0; i < w.size(); ++i)
        if (!frozen[i]) w[i] = std::min(std::max(w[i] * scale, 0.0), 1.0);
    for (int guard = 0; guard < 8; ++guard) {
        double total = 0.0;
        for (double v : w) total += v;
        if (total == 1.0) return;
        w[biggest] += 1.0 - total;
        w[biggest] = std::min(std::max(w[biggest], 0.0), 1.0);
    }
}

inline double chart_norm2(const std::vector<double>& w) {
    double n2 = 0.0;
    for (std::size_t i = 1; i < w.size(); ++i) n2 += w[i] * w[i];
    return n2;
}

inline double mean_of(const std::vector<double>& weights, const std::vector<double>& atoms) {
    double m = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) m += weights[i] * atoms[i];
    return m;
}

}  // namespace detail

/**
 * Euler step of the controlled weight process:
 *   weights += w sqrt(dt) noise, projected onto [0,1], the unfrozen block
 *   renormalised to exact unit mass, coordinates reaching 0/1 frozen;
 *   t advances by lambda dt (clamped at the horizon) and the average by
 *   xbar(old weights) times the real-time increment.
 */
inline MvmState step(const MvmState& state, const std::vector<double>& atoms, const Control& c,
                     double dt_r, double noise) {
    const std::size_t n = state.weights.size();
    if (c.w.size() != n) throw std::invalid_argument("step: control dimension mismatch");
    if (!(dt_r > 0.0)) throw std::invalid_argument("step: dt must be positive");
    if (!(c.lambda >= 0.0 && c.lambda <= 1.0))
        throw std::invalid_argument("step: lambda outside [0, 1]");
    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (state.frozen[i] && c.w[i] != 0.0)
            throw std::invalid_argument("step: control moves an absorbed coordinate");
        wsum += c.w[i];
    }
    if (std::abs(wsum) > 1e-9)
        throw std::invalid_argument("step: diffusion direction must sum to zero");
    const double norm2 = detail::chart_norm2(c.w);
    if (state.terminated()) {
        if (norm2 + c.lambda > 1e-9)
            throw std::invalid_argument("step: terminated state admits only the null control");
    } else if (std::abs(norm2 + c.lambda - 1.0) > 1e-6) {
        throw std::invalid_argument("step: control violates |w|^2 + lambda = 1");
    }

    MvmState out = state;
    constexpr double kSnap = 1e-12;
    const double sq = std::sqrt(dt_r) * noise;
    for (std::size_t i = 0; i < n; ++i) {
        if (state.frozen[i]) continue;
        double v = out.weights[i] + c.w[i] * sq;
        if (v < kSnap) v = 0.0;
        if (v > 1.0 - kSnap) v = 1.0;
        out.weights[i] = v;
    }
    detail::fix_mass(out.weights, out.frozen);
    for (std::size_t i = 0; i < n; ++i)
        if (out.weights[i] == 0.0 || out.weights[i] == 1.0) out.frozen[i] = 1;

    const double dt_real = std::min(c.lambda * dt_r, state.horizon - state.t);
    out.a += detail::mean_of(state.weights, atoms) * dt_real;
    out.t += dt_real;
    out.r += dt_r;
    return out;
}

class PathController {
  public:
    virtual ~PathController() = default;
    virtual Control next(const MvmState& state, Philox& rng) = 0;
    /// Post-step hook; may overwrite `after` (e.g. exact absorption at a
    /// split target decided by a Brownian-bridge crossing test).
    virtual void observe(const MvmState& before, MvmState& after, const Control& c, double dt_r,
                         double noise, Philox& rng) {
        (void)before;
        (void)after;
        (void)c;
        (void)dt_r;
        (void)noise;
        (void)rng;
    }
};

/** Factory of per-path controllers; implementations are immutable. */
class ControlPolicy {
  public:
    virtual ~ControlPolicy() = default;
    virtual std::string name() const = 0;
    virtual std::unique_ptr<PathController> start_path(const AtomicMeasure& m,
                                                       double horizon) const = 0;
};

namespace detail {

/**
 * Drives the weights along the fixed segment between two target measures:
 * current = p * left + (1-p) * right. The position performs an exact
 * Brownian walk; overshoot and a bridge crossing test absorb the path at a
 * target exactly, so split probabilities carry no discretisation bias.
 */
class SplitDriver {
  public:
    SplitDriver(std::vector<double> left, std::vector<double> right, double p)
        : left_(std::move(left)), right_(std::move(right)), p_(p) {
        double n2 = 0.0;
        for (std::size_t i = 1; i < left_.size(); ++i) {
            const double d = left_[i] - right_[i];
            n2 += d * d;
        }
        chart_norm_ = std::sqrt(n2);
        if (!(chart_norm_ > 0.0))
            throw std::invalid_argument("SplitDriver: coincident split targets");
    }

    Control control(const MvmState& state) const {
        Control c;
        c.lambda = 0.0;
        c.w.resize(state.weights.size());
        for (std::size_t i = 0; i < c.w.size(); ++i)
            c.w[i] = (left_[i] - right_[i]) / chart_norm_;
        // absorbed coordinates do not move along this segment anyway
        for (std::size_t i = 0; i < c.w.size(); ++i)
            if (state.frozen[i] && std::abs(c.w[i]) < 1e-14) c.w[i] = 0.0;
        return c;
    }

    // Returns +1 when absorbed at left, -1 at right, 0 still inside. The
    // state after the raw Euler step is overridden with the exact segment
    // point (or target), so overshoot clipping inside step() leaves no
    // trace; the frozen set is rebuilt from the pre-step state plus any
    // coordinates the override itself pins at 0 or 1.
    int after_step(const MvmState& before, MvmState& after, double dt_r, double noise,
                   Philox& rng) {
        const double h = std::sqrt(dt_r) / chart_norm_;
        const double p_raw = p_ + noise * h;
        int hit = 0;
        if (p_raw >= 1.0)
            hit = 1;
        else if (p_raw <= 0.0)
            hit = -1;
        else {
            const double p_hit_left = std::exp(-2.0 * (1.0 - p_) * (1.0 - p_raw) / (h * h));
            const double p_hit_right = std::exp(-2.0 * p_ * p_raw / (h * h));
            const double u = rng.uniform();
            if (u < p_hit_left)
                hit = 1;
            else if (u < p_hit_left + p_hit_right)
                hit = -1;
        }
        const std::vector<double>* target = hit == 1 ? &left_ : (hit == -1 ? &right_ : nullptr);
        if (target) {
            after.weights = *target;
        } else {
            p_ = p_raw;
            for (std::size_t i = 0; i < after.weights.size(); ++i)
                after.weights[i] = p_ * left_[i] + (1.0 - p_) * right_[i];
        }
        for (std::size_t i = 0; i < after.weights.size(); ++i) {
            if (after.weights[i] <= 0.0) after.weights[i] = 0.0;
            if (after.weights[i] >= 1.0) after.weights[i] = 1.0;
            after.frozen[i] =
                before.frozen[i] || after.weights[i] == 0.0 || after.weights[i] == 1.0;
        }
        fix_mass(after.weights, after.frozen);
        return hit;
    }

  private:
    std::vector<double> left_, right_;
    double p_;
    double chart_norm_;
};

// Sequential absorber: repeatedly splits off the lowest unfrozen coordinate
// until the state is singular. Embeds the current conditional law exactly.
class VertexAbsorber {
  public:
    // returns false when the state is already singular
    bool ensure_driver(const MvmState& state) {
        if (driver_) return true;
        int pick = -1;
        for (std::size_t i = 0; i < state.weights.size(); ++i)
            if (!state.frozen[i] && state.weights[i] > 0.0 && state.weights[i] < 1.0) {
                pick = static_cast<int>(i);
                break;
            }
        if (pick < 0) return false;
        const std::size_t n = state.weights.size();
        std::vector<double> left(n, 0.0), right(n, 0.0);
        left[pick] = 1.0;
        const double p = state.weights[pick];
        for (std::size_t i = 0; i < n; ++i)
            if (static_cast<int>(i) != pick) right[i] = state.weights[i] / (1.0 - p);
        std::vector<uint8_t> rf(n, 0);
        for (std::size_t i = 0; i < n; ++i) rf[i] = right[i] == 0.0 || right[i] == 1.0;
        fix_mass(right, rf);
        driver_.emplace(std::move(left), std::move(right), p);
        return true;
    }

    Control control(const MvmState& state, Philox&) { return driver_->control(state); }

    void observe(const MvmState& before, MvmState& after, double dt_r, double noise,
                 Philox& rng) {
        if (!driver_) return;
        if (driver_->after_step(before, after, dt_r, noise, rng) != 0) driver_.reset();
    }

  private:
    std::optional<SplitDriver> driver_;
};

}  // namespace detail

/**
 * The optimal model for convex payoffs: diffuse to the terminal distribution
 * at once (a price jump at t = 0), then let real time run to maturity.
 */
class ConvexOptimalPolicy : public ControlPolicy {
  public:
    std::string name() const override { return "convex"; }

    std::unique_ptr<PathController> start_path(const AtomicMeasure&, double) const override {
        struct Ctl : PathController {
            detail::VertexAbsorber absorber;
            Control next(const MvmState& s, Philox& rng) override {
                if (!s.singular() && absorber.ensure_driver(s)) return absorber.control(s, rng);
                Control c;
                c.lambda = s.terminated() ? 0.0 : 1.0;
                c.w.assign(s.weights.size(), 0.0);
                return c;
            }
            void observe(const MvmState& before, MvmState& after, const Control& c,
                         double dt_r, double noise, Philox& rng) override {
                if (c.lambda == 0.0) absorber.observe(before, after, dt_r, noise, rng);
            }
        };
        return std::make_unique<Ctl>();
    }
};

/**
 * The optimal model for the call-spread payoff on the support {-1, 0, 1}:
 * at t = 0 the measure splits into branch targets dictated by the region of
 * the start state (a frozen branch pinning the average at K2 plus vertex
 * branches), real time then runs to maturity, and whatever conditional law
 * remains is embedded by a terminal jump.
 */
class SpreadOptimalPolicy : public ControlPolicy {
  public:
    SpreadOptimalPolicy(double beta, double gamma, double k1, double k2)
        : beta_(beta), gamma_(gamma), k1_(k1), k2_(k2) {
        SpreadState s;
        s.beta = beta;
        s.gamma = gamma;
        s.k1 = k1;
        s.k2 = k2;
        s.validate();
        if (!(k1 > -1.0 && k1 < 1.0))
            throw std::invalid_argument("SpreadOptimalPolicy: K1 outside (-1, 1)");
        if (!(k2 > 0.0)) throw std::invalid_argument("SpreadOptimalPolicy: K2 must be positive");
    }

    std::string name() const override { return "spread"; }

    std::unique_ptr<PathController> start_path(const AtomicMeasure& m,
                                               double horizon) const override {
        if (m.size() != 3 || m.atom(0) != -1.0 || m.atom(1) != 0.0 || m.atom(2) != 1.0)
            throw std::invalid_argument("SpreadOptimalPolicy: support must be {-1, 0, 1}");
        if (std::abs(m.weight(1) - beta_) > 1e-12 || std::abs(m.weight(2) - gamma_) > 1e-12)
            throw std::invalid_argument("SpreadOptimalPolicy: measure disagrees with (beta,gamma)");

        struct Ctl : PathController {
            // plan: stack of splits, executed at t = 0
            std::vector<detail::SplitDriver> plan;
            std::size_t stage = 0;
            detail::VertexAbsorber absorber;

            Control next(const MvmState& s, Philox& rng) override {
                if (s.t == 0.0 && stage < plan.size()) return plan[stage].control(s);
                if (s.t >= s.horizon && !s.singular()) {
                    absorber.ensure_driver(s);
                    return absorber.control(s, rng);
                }
                Control c;
                c.lambda = s.terminated() ? 0.0 : 1.0;
                c.w.assign(s.weights.size(), 0.0);
                return c;
            }

            void observe(const MvmState& before, MvmState& after, const Control& c, double dt_r,
                         double noise, Philox& rng) override {
                if (c.lambda != 0.0) return;
                if (before.t == 0.0 && stage < plan.size()) {
                    const int hit = plan[stage].after_step(before, after, dt_r, noise, rng);
                    if (hit == 1) {
                        stage = plan.size();  // left target always rests
                    } else if (hit == -1) {
                        ++stage;  // right target may split further
                        if (stage < plan.size() && after.singular()) stage = plan.size();
                    }
                    return;
                }
                absorber.observe(before, after, dt_r, noise, rng);
            }
        };

        auto ctl = std::make_unique<Ctl>();
        build_plan(*ctl, horizon);
        return ctl;
    }

  private:
    void build_plan(auto& ctl, double horizon) const {
        SpreadState s;
        s.t = 0.0;
        s.a = 0.0;
        s.beta = beta_;
        s.gamma = gamma_;
        s.k1 = k1_;
        s.k2 = k2_;
        s.horizon = horizon;
        const Region region = classify_region(s);
        const double tt = horizon;
        const double c_level = (k2_ - 0.0) / tt;  // frozen drift pinning the average at K2

        auto vec = [](double w0, double w1, double w2) { return std::vector<double>{w0, w1, w2}; };
        const double delta = 1.0 - beta_ - gamma_;

        switch (region) {
            case Region::i:
            case Region::ii:
            case Region::vii:
                break;  // wait, then embed at maturity
            case Region::iii: {
                // one split: the c-drift mixture (using all of beta, gamma and
                // some mass at -1) against the rest at -1
                const double x = (gamma_ - c_level * (beta_ + gamma_)) / (1.0 + c_level);
                const double p = x + beta_ + gamma_;
                auto left = vec(x / p, beta_ / p, gamma_ / p);
                auto right = vec(1.0, 0.0, 0.0);
                ctl.plan.emplace_back(std::move(left), std::move(right), p);
                break;
            }
            case Region::iv:
            case Region::v: {
                if (c_level > 1.0) {
                    // the cap is unreachable: plain convex behaviour (handled
                    // by an immediate vertex absorption plan)
                    auto left = vec(0.0, 0.0, 1.0);
                    auto right = vec(delta / (1.0 - gamma_), beta_ / (1.0 - gamma_), 0.0);
                    if (gamma_ > 0.0 && gamma_ < 1.0)
                        ctl.plan.emplace_back(std::move(left), std::move(right), gamma_);
                    if (beta_ > 0.0 && delta > 0.0)
                        ctl.plan.emplace_back(vec(0.0, 1.0, 0.0), vec(1.0, 0.0, 0.0),
                                              beta_ / (beta_ + delta));
                    break;
                }
                const double etabar = gamma_ * (1.0 - c_level) / c_level;
                const double q1 = gamma_ + etabar;  // frozen branch probability
                auto left = vec(0.0, etabar / q1, gamma_ / q1);
                auto right = vec(delta / (1.0 - q1), (beta_ - etabar) / (1.0 - q1), 0.0);
                ctl.plan.emplace_back(std::move(left), std::move(right), q1);
                // the rest splits into the two remaining vertices
                if (beta_ - etabar > 1e-15 && delta > 1e-15)
                    ctl.plan.emplace_back(vec(0.0, 1.0, 0.0), vec(1.0, 0.0, 0.0),
                                          (beta_ - etabar) / (1.0 - q1));
                break;
            }
            case Region::vi: {
                // vertex jumps only
                auto right = vec(delta / (1.0 - gamma_), beta_ / (1.0 - gamma_), 0.0);
                if (gamma_ > 0.0 && gamma_ < 1.0)
                    ctl.plan.emplace_back(vec(0.0, 0.0, 1.0), std::move(right), gamma_);
                if (beta_ > 0.0 && delta > 0.0)
                    ctl.plan.emplace_back(vec(0.0, 1.0, 0.0), vec(1.0, 0.0, 0.0),
                                          beta_ / (beta_ + delta));
                break;
            }
        }
    }

    double beta_, gamma_, k1_, k2_;
};

/**
 * Randomised admissible control for stress tests: a random time-advance
 * rate with a random martingale diffusion direction, damped near the
 * absorbing faces; past maturity the remaining law is embedded exactly.
 */
class RandomPolicy : public ControlPolicy {
  public:
    RandomPolicy(double lambda_lo = 0.2, double lambda_hi = 0.8, double damp = 0.5)
        : lo_(lambda_lo), hi_(lambda_hi), damp_(damp) {
        if (!(0.0 <= lambda_lo && lambda_lo <= lambda_hi && lambda_hi <= 1.0))
            throw std::invalid_argument("RandomPolicy: bad lambda range");
    }

    std::string name() const override { return "random"; }

    std::unique_ptr<PathController> start_path(const AtomicMeasure&, double) const override {
        struct Ctl : PathController {
            double lo, hi, damp, sqrt_dt = 0.0;
            detail::VertexAbsorber absorber;

            Control next(const MvmState& s, Philox& rng) override {
                Control c;
                c.w.assign(s.weights.size(), 0.0);
                if (s.terminated()) {
                    c.lambda = 0.0;
                    return c;
                }
                if (s.t >= s.horizon) {
                    absorber.ensure_driver(s);
                    return absorber.control(s, rng);
                }
                std::vector<int> free;
                for (std::size_t i = 0; i < s.weights.size(); ++i)
                    if (!s.frozen[i]) free.push_back(static_cast<int>(i));
                if (free.size() < 2) {
                    c.lambda = 1.0;
                    return c;
                }
                const double lambda_target = lo + (hi - lo) * rng.uniform();
                double mean = 0.0;
                std::vector<double> g(free.size());
                for (auto& v : g) {
                    v = rng.normal();
                    mean += v;
                }
                mean /= free.size();
                double n2 = 0.0;
                for (std::size_t q = 0; q < free.size(); ++q) {
                    g[q] -= mean;
                    if (free[q] > 0) n2 += g[q] * g[q];
                }
                if (n2 < 1e-24) {
                    c.lambda = 1.0;
                    return c;
                }
                const double scale = std::sqrt((1.0 - lambda_target) / n2);
                for (std::size_t q = 0; q < free.size(); ++q)
                    c.w[free[q]] = g[q] * scale;
                // damp near the absorbing faces so the Euler step rarely clips
                if (sqrt_dt > 0.0) {
                    for (std::size_t i = 0; i < c.w.size(); ++i) {
                        if (c.w[i] == 0.0) continue;
                        const double room = std::min(s.weights[i], 1.0 - s.weights[i]);
                        const double cap = damp * room / sqrt_dt;
                        c.w[i] = std::clamp(c.w[i], -cap, cap);
                    }
                    // re-balance the sum-zero constraint after capping; the
                    // shift can grow the chart norm past 1, so rescale back
                    double sum = 0.0;
                    int nfree = 0;
                    for (int i : free) {
                        sum += c.w[i];
                        ++nfree;
                    }
                    for (int i : free) c.w[i] -= sum / nfree;
                    const double after = detail::chart_norm2(c.w);
                    if (after > 1.0)
                        for (int i : free) c.w[i] /= std::sqrt(after);
                }
                c.lambda = std::clamp(1.0 - detail::chart_norm2(c.w), 0.0, 1.0);
                return c;
            }

            void observe(const MvmState& before, MvmState& after, const Control& c, double dt_r,
                         double noise, Philox& rng) override {
                sqrt_dt = std::sqrt(dt_r);
                if (before.t >= before.horizon && c.lambda == 0.0 && !before.terminated())
                    absorber.observe(before, after, dt_r, noise, rng);
            }
        };
        auto ctl = std::make_unique<Ctl>();
        ctl->lo = lo_;
        ctl->hi = hi_;
        ctl->damp = damp_;
        return ctl;
    }

  private:
    double lo_, hi_, damp_;
};

/**
 * Policy read off a solved surface: at t = 0, if the nearest simplex node
 * diffuses, jump to the recorded envelope support targets with the
 * barycentric probabilities; then wait and embed at maturity. The start
 * state is quantised to the nearest node.
 */
class SurfacePolicy : public ControlPolicy {
  public:
    SurfacePolicy(int k, int n_simplex, std::vector<PolicyNode> start_tags,
                  std::size_t n_atoms)
        : grid_(k, n_simplex), tags_(std::move(start_tags)), n_atoms_(n_atoms) {
        if (tags_.size() != grid_.node_count())
            throw std::invalid_argument("SurfacePolicy: tag count does not match the grid");
    }

    static SurfacePolicy from(const ValueSurface& vs) {
        return SurfacePolicy(vs.grid().k(), vs.grid().n(), vs.start_policy(),
                             vs.support().size());
    }

    std::string name() const override { return "from-surface"; }

    std::unique_ptr<PathController> start_path(const AtomicMeasure& m,
                                               double horizon) const override {
        if (m.size() != n_atoms_)
            throw std::invalid_argument("SurfacePolicy: measure/support mismatch");
        (void)horizon;

        struct Ctl : PathController {
            std::vector<detail::SplitDriver> plan;
            std::size_t stage = 0;
            detail::VertexAbsorber absorber;

            Control next(const MvmState& s, Philox& rng) override {
                if (s.t == 0.0 && stage < plan.size()) return plan[stage].control(s);
                if (s.t >= s.horizon && !s.singular()) {
                    absorber.ensure_driver(s);
                    return absorber.control(s, rng);
                }
                Control c;
                c.lambda = s.terminated() ? 0.0 : 1.0;
                c.w.assign(s.weights.size(), 0.0);
                return c;
            }
            void observe(const MvmState& before, MvmState& after, const Control& c, double dt_r,
                         double noise, Philox& rng) override {
                if (c.lambda != 0.0) return;
                if (before.t == 0.0 && stage < plan.size()) {
                    const int hit = plan[stage].after_step(before, after, dt_r, noise, rng);
                    if (hit == 1)
                        stage = plan.size();  // left targets are resting points
                    else if (hit == -1)
                        ++stage;  // the remainder keeps splitting
                    return;
                }
                absorber.observe(before, after, dt_r, noise, rng);
            }
        };
        auto ctl = std::make_unique<Ctl>();

        const auto& g = grid_;
        const int n = g.n();
        const int k = g.k();
        // nearest node to the start weights
        std::array<int, 3> mi{};
        int level = 0;
        for (int d = 0; d < k; ++d) {
            mi[d] = static_cast<int>(std::round(m.weight(d + 1) * n));
            level += mi[d];
        }
        if (level > n) mi[0] -= level - n;
        std::size_t node = k == 1 ? g.id1(mi[0]) : (k == 2 ? g.id2(mi[0], mi[1]) : 0);
        const auto& pol = tags_;
        if (!pol.empty() && pol[node].action == NodeAction::Diffuse) {
            // barycentric coordinates of the node inside its facet
            std::vector<std::size_t> targets;
            for (int q = 0; q < 4; ++q)
                if (pol[node].support[q] >= 0) targets.push_back(pol[node].support[q]);
            if (targets.size() >= 2) {
                std::vector<double> lam = barycentric(g, node, targets);
                // sequential binary splits: peel one target off the
                // remaining mixture at a time
                for (std::size_t q = 0; q + 1 < targets.size(); ++q) {
                    double remaining = 0.0;
                    for (std::size_t s = q; s < targets.size(); ++s) remaining += lam[s];
                    if (remaining <= 1e-12) break;
                    const double p = lam[q] / remaining;
                    if (p <= 1e-12) continue;
                    std::vector<double> left(m.size());
                    g.full_weights(targets[q], left.data());
                    if (p >= 1.0 - 1e-12) {
                        break;  // everything rests at this target already
                    }
                    std::vector<double> rest(m.size(), 0.0);
                    double rest_mass = 0.0;
                    for (std::size_t s = q + 1; s < targets.size(); ++s) {
                        std::vector<double> tw(m.size());
                        g.full_weights(targets[s], tw.data());
                        for (std::size_t i = 0; i < m.size(); ++i)
                            rest[i] =
                                (rest[i] * rest_mass + tw[i] * lam[s]) / (rest_mass + lam[s]);
                        rest_mass += lam[s];
                    }
                    ctl->plan.emplace_back(std::move(left), std::move(rest), p);
                }
            }
        }
        return ctl;
    }

  private:
    static std::vector<double> barycentric(const SimplexGrid& g, std::size_t node,
                                           const std::vector<std::size_t>& targets) {
        // solve for convex weights reproducing the node from <= 3 targets
        const auto& mq = g.multi_index(node);
        std::vector<double> lam(targets.size(), 0.0);
        if (targets.size() == 2) {
            const auto &a = g.multi_index(targets[0]), &b = g.multi_index(targets[1]);
            double num = 0.0, den = 0.0;
            for (int d = 0; d < 2; ++d) {
                num += (mq[d] - b[d]) * static_cast<double>(a[d] - b[d]);
                den += static_cast<double>(a[d] - b[d]) * (a[d] - b[d]);
            }
            lam[0] = den > 0 ? num / den : 0.5;
            lam[1] = 1.0 - lam[0];
        } else {
            const auto &a = g.multi_index(targets[0]), &b = g.multi_index(targets[1]),
                       &c = g.multi_index(targets[2]);
            const double det =
                static_cast<double>(b[0] - a[0]) * (c[1] - a[1]) -
                static_cast<double>(b[1] - a[1]) * (c[0] - a[0]);
            lam[1] = ((mq[0] - a[0]) * static_cast<double>(c[1] - a[1]) -
                      (mq[1] - a[1]) * static_cast<double>(c[0] - a[0])) /
                     det;
            lam[2] = (static_cast<double>(b[0] - a[0]) * (mq[1] - a[1]) -
                      static_cast<double>(b[1] - a[1]) * (mq[0] - a[0])) /
                     det;
            lam[0] = 1.0 - lam[1] - lam[2];
            for (auto& v : lam) v = std::max(v, 0.0);
            double s = lam[0] + lam[1] + lam[2];
            for (auto& v : lam) v /= s;
        }
        return lam;
    }

    SimplexGrid grid_;
    std::vector<PolicyNode> tags_;
    std::size_t n_atoms_;
};

struct PathRecord {
    int terminal_atom = -1;
    double a_terminal = 0.0;
    double payoff = 0.0;
    bool terminated = false;
};

struct PathEnsemble {
    std::size_t n_paths = 0;
    uint64_t seed = 0;
    std::string policy_name;
    std::vector<PathRecord> paths;
    std::size_t excluded = 0;  // paths that hit the step budget, not counted

    std::vector<double> checkpoint_r;
    std::vector<std::vector<double>> cp_weights;  // [cp][path * n_atoms + i]
    std::vector<std::vector<double>> cp_y;        // [cp][path]
    double y_target = 0.0;                        // a0 + horizon * mean of the start law

    double mean_payoff = 0.0, se_payoff = 0.0;
    double mean_a = 0.0, se_a = 0.0;
    double terminated_fraction = 0.0;

    std::vector<std::array<double, 4>> dump;  // path_id, t, S, A
};

struct SimulateOptions {
    std::vector<double> checkpoints = {0.1, 0.25, 0.5, 1.0, 2.0};
    bool record_checkpoints = true;
    double step_budget = 50.0;  // artificial-time units
    int threads = 0;
    int dump_paths = 0;  // first k paths sampled into `dump`
    int dump_stride = 1;
};

/**
 * Independent paths of the controlled weight process, each run until the
 * measure is singular and real time has reached the horizon. Per-path
 * Philox streams make the result independent of the thread schedule.
 */
inline PathEnsemble simulate(const AtomicMeasure& m, const ControlPolicy& policy,
                             const Payoff& payoff, double horizon, std::size_t n_paths,
                             double dt_r, uint64_t seed, SimulateOptions opts = {}) {
    if (n_paths == 0) throw std::invalid_argument("simulate: n_paths must be positive");
    if (!(dt_r > 0.0 && dt_r <= 1.0)) throw std::invalid_argument("simulate: bad dt");

    PathEnsemble out;
    out.n_paths = n_paths;
    out.seed = seed;
    out.policy_name = policy.name();
    out.y_target = horizon * m.mean();
    out.paths.resize(n_paths);
    const std::size_t natoms = m.size();
    std::sort(opts.checkpoints.begin(), opts.checkpoints.end());
    if (opts.record_checkpoints) {
        out.checkpoint_r = opts.checkpoints;
        out.cp_weights.assign(opts.checkpoints.size(), std::vector<double>(n_paths * natoms));
        out.cp_y.assign(opts.checkpoints.size(), std::vector<double>(n_paths));
    }
    std::vector<std::vector<std::array<double, 4>>> dumps(std::min<std::size_t>(
        opts.dump_paths, n_paths));

    const long max_steps = static_cast<long>(std::ceil(opts.step_budget / dt_r));
    const auto& atoms = m.atoms();

    auto run_path = [&](std::size_t pid) {
        Philox rng(seed, pid);
        auto ctl = policy.start_path(m, horizon);
        MvmState state;
        state.weights = m.weights();
        state.horizon = horizon;
        state.frozen.assign(natoms, 0);
        for (std::size_t i = 0; i < natoms; ++i)
            state.frozen[i] = state.weights[i] == 0.0 || state.weights[i] == 1.0;
        detail::fix_mass(state.weights, state.frozen);

        std::size_t next_cp = 0;
        auto snapshot = [&](const MvmState& s) {
            while (next_cp < out.checkpoint_r.size() && s.r >= out.checkpoint_r[next_cp] - 1e-12) {
                if (opts.record_checkpoints) {
                    for (std::size_t i = 0; i < natoms; ++i)
                        out.cp_weights[next_cp][pid * natoms + i] = s.weights[i];
                    out.cp_y[next_cp][pid] =
                        s.a + (horizon - s.t) * detail::mean_of(s.weights, atoms);
                }
                ++next_cp;
            }
        };

        const bool dumping = pid < dumps.size();
        long steps = 0;
        while (!state.terminated() && steps < max_steps) {
            Control c = ctl->next(state, rng);
            const double noise = detail::chart_norm2(c.w) > 0.0 ? rng.normal() : 0.0;
            MvmState after = step(state, atoms, c, dt_r, noise);
            ctl->observe(state, after, c, dt_r, noise, rng);
            state = std::move(after);
            ++steps;
            snapshot(state);
            if (dumping && steps % std::max(1, opts.dump_stride) == 0)
                dumps[pid].push_back({static_cast<double>(pid), state.t,
                                      detail::mean_of(state.weights, atoms), state.a});
        }
        // stopped paths hold their state at every later checkpoint
        if (opts.record_checkpoints) {
            while (next_cp < out.checkpoint_r.size()) {
                for (std::size_t i = 0; i < natoms; ++i)
                    out.cp_weights[next_cp][pid * natoms + i] = state.weights[i];
                out.cp_y[next_cp][pid] =
                    state.a + (horizon - state.t) * detail::mean_of(state.weights, atoms);
                ++next_cp;
            }
        }
        PathRecord rec;
        rec.terminated = state.terminated();
        rec.a_terminal = state.a;
        if (rec.terminated) {
            rec.terminal_atom = state.singular_atom();
            rec.payoff = payoff(state.a);
        }
        out.paths[pid] = rec;
    };

    const int threads = detail::resolve_threads(opts.threads);
    if (threads <= 1 || n_paths < 64) {
        for (std::size_t pid = 0; pid < n_paths; ++pid) run_path(pid);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < threads; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t pid = w; pid < n_paths; pid += threads) run_path(pid);
            });
        for (auto& th : pool) th.join();
    }

    // fixed-order two-pass reduction for bit-stable summaries
    double sum = 0.0, suma = 0.0;
    std::size_t n_ok = 0;
    for (const auto& rec : out.paths) {
        if (!rec.terminated) {
            ++out.excluded;
            continue;
        }
        ++n_ok;
        sum += rec.payoff;
        suma += rec.a_terminal;
    }
    if (n_ok > 1) {
        out.mean_payoff = sum / n_ok;
        out.mean_a = suma / n_ok;
        double v = 0.0, va = 0.0;
        for (const auto& rec : out.paths) {
            if (!rec.terminated) continue;
            v += (rec.payoff - out.mean_payoff) * (rec.payoff - out.mean_payoff);
            va += (rec.a_terminal - out.mean_a) * (rec.a_terminal - out.mean_a);
        }
        out.se_payoff = std::sqrt(v / (n_ok - 1) / n_ok);
        out.se_a = std::sqrt(va / (n_ok - 1) / n_ok);
    }
    out.terminated_fraction = static_cast<double>(n_ok) / n_paths;
    for (auto& d : dumps)
        for (auto& row : d) out.dump.push_back(row);
    return out;
}

/**
 * Recombining binomial martingale: level d holds d+1 node values; node
 * (d, i) moves down to (d+1, i) or up to (d+1, i+1) with the given up
 * probability.
 */
struct BinomialTree {
    std::vector<std::vector<double>> values;
    std::vector<std::vector<double>> up_prob;
    int depth() const { return static_cast<int>(values.size()) - 1; }
};

struct MvmTreePaths {
    std::vector<double> support;
    struct Path {
        double probability;
        std::vector<std::vector<double>> weights;  // one weight vector per depth
    };
    std::vector<Path> paths;
    std::vector<double> root_weights;
};

/**
 * The weight process induced by a binomial martingale: along every tree
 * path, the weight vector at depth d is the conditional terminal law given
 * the node reached. The root weights equal the tree's terminal law.
 */
inline MvmTreePaths mvm_from_tree(const BinomialTree& tree) {
    const int depth = tree.depth();
    if (depth < 0 || static_cast<int>(tree.up_prob.size()) != depth)
        throw std::invalid_argument("mvm_from_tree: malformed tree");
    if (depth > 16) throw std::invalid_argument("mvm_from_tree: depth above 16 unsupported");
    for (int d = 0; d <= depth; ++d)
        if (static_cast<int>(tree.values[d].size()) != d + 1)
            throw std::invalid_argument("mvm_from_tree: level " + std::to_string(d) +
                                        " has the wrong width");
    for (int d = 0; d < depth; ++d) {
        for (int i = 0; i <= d; ++i) {
            const double p = tree.up_prob[d][i];
            if (!(p >= 0.0 && p <= 1.0))
                throw std::invalid_argument("mvm_from_tree: up probability outside [0,1]");
            const double expect =
                p * tree.values[d + 1][i + 1] + (1.0 - p) * tree.values[d + 1][i];
            if (std::abs(expect - tree.values[d][i]) > 1e-12)
                throw std::invalid_argument("mvm_from_tree: martingale violated at node (" +
                                            std::to_string(d) + "," + std::to_string(i) + ")");
        }
    }

    MvmTreePaths out;
    // sorted distinct terminal values form the support
    std::vector<double> terms = tree.values[depth];
    std::sort(terms.begin(), terms.end());
    for (double v : terms)
        if (out.support.empty() || v - out.support.back() > 1e-12) out.support.push_back(v);
    auto atom_of = [&](double v) {
        for (std::size_t i = 0; i < out.support.size(); ++i)
            if (std::abs(v - out.support[i]) <= 1e-12) return i;
        throw std::logic_error("mvm_from_tree: terminal value not in the support");
    };

    // conditional terminal law per node, backward
    const std::size_t ns = out.support.size();
    std::vector<std::vector<std::vector<double>>> dist(depth + 1);
    dist[depth].resize(depth + 1, std::vector<double>(ns, 0.0));
    for (int i = 0; i <= depth; ++i) dist[depth][i][atom_of(tree.values[depth][i])] = 1.0;
    for (int d = depth - 1; d >= 0; --d) {
        dist[d].resize(d + 1, std::vector<double>(ns, 0.0));
        for (int i = 0; i <= d; ++i) {
            const double p = tree.up_prob[d][i];
            for (std::size_t q = 0; q < ns; ++q)
                dist[d][i][q] = p * dist[d + 1][i + 1][q] + (1.0 - p) * dist[d + 1][i][q];
        }
    }
    out.root_weights = dist[0][0];

    for (uint32_t bits = 0; bits < (1u << depth); ++bits) {
        MvmTreePaths::Path path;
        path.probability = 1.0;
        int i = 0;
        path.weights.push_back(dist[0][0]);
        for (int d = 0; d < depth; ++d) {
            const bool up = bits & (1u << d);
            const double p = tree.up_prob[d][i];
            path.probability *= up ? p : 1.0 - p;
            i += up ? 1 : 0;
            path.weights.push_back(dist[d + 1][i]);
        }
        if (path.probability > 0.0) out.paths.push_back(std::move(path));
    }
    return out;
}

/** Statistical verification report for an ensemble against its target law. */
struct MvmReport {
    bool weight_martingale = true;
    bool terminal_law = true;
    bool y_martingale = true;
    bool termination = true;
    double worst_weight_z = 0.0;
    double terminal_w1 = 0.0;
    double terminal_w1_threshold = 0.0;
    double worst_y_z = 0.0;
    double unterminated_fraction = 0.0;
    bool pass() const { return weight_martingale && terminal_law && y_martingale && termination; }
};

/**
 * Four checks on an ensemble: (a) each atom weight stays a martingale at
 * the recorded checkpoints, (b) the terminal atoms reproduce the target law
 * in W1, (c) the process a + (horizon - t) * S is a martingale, and (d)
 * essentially every path terminates within the step budget.
 */
inline MvmReport check_mvm_properties(const PathEnsemble& ens, const AtomicMeasure& m) {
    if (ens.cp_weights.empty())
        throw std::invalid_argument("check_mvm_properties: ensemble lacks checkpoint records");
    MvmReport rep;
    const std::size_t natoms = m.size();
    const std::size_t n = ens.n_paths;

    for (std::size_t cp = 0; cp < ens.checkpoint_r.size(); ++cp) {
        for (std::size_t i = 0; i < natoms; ++i) {
            double s = 0.0, s2 = 0.0;
            for (std::size_t pid = 0; pid < n; ++pid) {
                const double w = ens.cp_weights[cp][pid * natoms + i];
                s += w;
                s2 += w * w;
            }
            const double mean = s / n;
            const double var = std::max(0.0, s2 / n - mean * mean);
            const double se = std::sqrt(var / n);
            const double dev = std::abs(mean - m.weight(i));
            const double z = se > 0.0 ? dev / se : (dev > 1e-12 ? 1e9 : 0.0);
            rep.worst_weight_z = std::max(rep.worst_weight_z, z);
            if (dev > 3.0 * se + 1e-12) rep.weight_martingale = false;
        }
    }

    {
        std::vector<double> freq(natoms, 0.0);
        std::size_t n_ok = 0;
        for (const auto& rec : ens.paths)
            if (rec.terminated && rec.terminal_atom >= 0) {
                freq[rec.terminal_atom] += 1.0;
                ++n_ok;
            }
        if (n_ok == 0) {
            rep.terminal_law = false;
        } else {
            for (auto& f : freq) f /= n_ok;
            double fsum = 0.0;
            for (double f : freq) fsum += f;
            freq[natoms - 1] += 1.0 - fsum;
            AtomicMeasure emp(m.atoms(), freq, m.min_atom() < 0.0);
            rep.terminal_w1 = wasserstein1_distance(emp, m);
            rep.terminal_w1_threshold =
                3.0 * (m.max_atom() - m.min_atom() + 1e-12) / std::sqrt(double(n_ok));
            rep.terminal_law = rep.terminal_w1 <= rep.terminal_w1_threshold;
        }
    }

    for (std::size_t cp = 0; cp < ens.checkpoint_r.size(); ++cp) {
        double s = 0.0, s2 = 0.0;
        for (std::size_t pid = 0; pid < n; ++pid) {
            const double y = ens.cp_y[cp][pid];
            s += y;
            s2 += y * y;
        }
        const double mean = s / n;
        const double var = std::max(0.0, s2 / n - mean * mean);
        const double se = std::sqrt(var / n);
        const double dev = std::abs(mean - ens.y_target);
        const double z = se > 0.0 ? dev / se : (dev > 1e-12 ? 1e9 : 0.0);
        rep.worst_y_z = std::max(rep.worst_y_z, z);
        if (dev > 3.0 * se + 1e-12) rep.y_martingale = false;
    }

    rep.unterminated_fraction = static_cast<double>(ens.excluded) / ens.n_paths;
    rep.termination = rep.unterminated_fraction < 1e-3;
    return rep;
}

}  // namespace mvmb
