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

#include <catch2/catch.hpp>

#include "mvmbound/mvm.hpp"
#include "support/test_util.hpp"

using mvmb::AtomicMeasure;
using mvmb::Control;
using mvmb::ConvexOptimalPolicy;
using mvmb::MvmState;
using mvmb::Philox;
using mvmb::RandomPolicy;
using mvmb::simulate;
using mvmb::SimulateOptions;
using mvmb::SpreadOptimalPolicy;

namespace {

MvmState make_state(const AtomicMeasure& m, double horizon = 1.0) {
    MvmState s;
    s.weights = m.weights();
    s.horizon = horizon;
    s.frozen.assign(m.size(), 0);
    for (std::size_t i = 0; i < m.size(); ++i)
        s.frozen[i] = s.weights[i] == 0.0 || s.weights[i] == 1.0;
    return s;
}

const AtomicMeasure& flagship_measure() {
    static AtomicMeasure m({-1.0, 0.0, 1.0}, {0.25, 0.25, 0.5}, true);
    return m;
}

}  // namespace

TEST_CASE("step mechanics", "[simulate]") {
    AtomicMeasure m({0.0, 1.0}, {0.5, 0.5});
    MvmState s = make_state(m);

    SECTION("waiting advances time and the average only") {
        Control c{1.0, {0.0, 0.0}};
        auto out = mvmb::step(s, m.atoms(), c, 0.25, 0.33);
        REQUIRE(out.weights == s.weights);
        REQUIRE(out.t == Approx(0.25));
        REQUIRE(out.a == Approx(0.25 * 0.5));
        REQUIRE(out.r == Approx(0.25));
    }
    SECTION("time clamps at the horizon") {
        Control c{1.0, {0.0, 0.0}};
        s.t = 0.9;
        auto out = mvmb::step(s, m.atoms(), c, 0.25, 0.0);
        REQUIRE(out.t == 1.0);
        REQUIRE(out.a == Approx(0.1 * 0.5));
    }
    SECTION("diffusion keeps exact unit mass") {
        Control c{0.0, {-1.0, 1.0}};
        auto out = mvmb::step(s, m.atoms(), c, 1e-3, 0.7);
        double total = 0.0;
        for (double w : out.weights) total += w;
        REQUIRE(total == 1.0);
        REQUIRE(out.t == 0.0);
    }
    SECTION("singleton state cannot diffuse") {
        MvmState sing = make_state(AtomicMeasure({0.0, 1.0}, {0.0, 1.0}));
        Control c{0.0, {-0.5, 0.5}};
        REQUIRE_THROWS_AS(mvmb::step(sing, m.atoms(), c, 0.1, 0.0), std::invalid_argument);
    }
    SECTION("normalisation enforced") {
        Control c{0.5, {-1.0, 1.0}};  // |w|^2 + lambda = 1.5
        REQUIRE_THROWS_AS(mvmb::step(s, m.atoms(), c, 0.1, 0.0), std::invalid_argument);
        Control ok{0.5, {-std::sqrt(0.5), std::sqrt(0.5)}};
        REQUIRE_NOTHROW(mvmb::step(s, m.atoms(), ok, 0.1, 0.0));
    }
    SECTION("driftless walk absorbed at the faces has mean one half") {
        // raw Euler walk (no bridge): symmetric start cancels the clip bias
        std::size_t hits1 = 0;
        const std::size_t n = 100000;
        for (std::size_t pid = 0; pid < n; ++pid) {
            Philox rng(99, pid);
            MvmState st = make_state(m);
            Control c{0.0, {-1.0, 1.0}};
            int guard = 0;
            while (!st.singular() && guard++ < 100000) {
                st = mvmb::step(st, m.atoms(), c, 1e-3, rng.normal());
                c.w[0] = st.frozen[0] ? 0.0 : -1.0;
                c.w[1] = st.frozen[1] ? 0.0 : 1.0;
                if (st.singular()) break;
            }
            hits1 += st.weights[1] == 1.0;
        }
        const double phat = static_cast<double>(hits1) / n;
        const double se = std::sqrt(0.25 / n);
        REQUIRE(std::abs(phat - 0.5) <= 3.0 * se);
    }
}

TEST_CASE("mass conservation and absorption monotonicity along paths", "[simulate]") {
    AtomicMeasure m({0.0, 0.5, 2.0}, {0.3, 0.4, 0.3});
    Philox rng(7, 0);
    MvmState s = make_state(m);
    std::vector<uint8_t> frozen_before = s.frozen;
    for (int it = 0; it < 20000 && !s.terminated(); ++it) {
        Control c;
        c.w.assign(3, 0.0);
        std::vector<int> free;
        for (int i = 0; i < 3; ++i)
            if (!s.frozen[i]) free.push_back(i);
        if (s.t >= s.horizon && free.size() < 2) break;
        if (free.size() >= 2) {
            c.lambda = 0.5;
            double g0 = rng.normal(), g1 = -g0;
            double n2 = free[0] > 0 ? g0 * g0 : 0.0;
            n2 += free[1] > 0 ? g1 * g1 : 0.0;
            double scale = n2 > 0 ? std::sqrt(0.5 / n2) : 0.0;
            c.w[free[0]] = g0 * scale;
            c.w[free[1]] = g1 * scale;
            if (scale == 0.0) c.lambda = 1.0;
        } else {
            c.lambda = 1.0;
        }
        s = mvmb::step(s, m.atoms(), c, 1e-3, rng.normal());
        double total = 0.0;
        for (double w : s.weights) total += w;
        REQUIRE(total == 1.0);
        for (int i = 0; i < 3; ++i) REQUIRE(s.frozen[i] >= frozen_before[i]);
        frozen_before = s.frozen;
    }
}

TEST_CASE("convex policy reproduces the closed-form value", "[simulate]") {
    AtomicMeasure m({0.0, 2.0}, {0.5, 0.5});
    auto payoff = mvmb::call(1.0);
    auto ens = simulate(m, ConvexOptimalPolicy(), payoff, 1.0, 20000, 1e-3, 12345);
    REQUIRE(ens.excluded == 0);
    REQUIRE(std::abs(ens.mean_payoff - 0.5) <= 3.0 * ens.se_payoff);
    REQUIRE(std::abs(ens.mean_a - 1.0) <= 3.0 * ens.se_a);
}

TEST_CASE("convex policy embeds the law", "[simulate]") {
    const auto& m = flagship_measure();
    auto ens = simulate(m, ConvexOptimalPolicy(), mvmb::call(-0.1), 1.0, 50000, 1e-3, 777);
    std::array<std::size_t, 3> counts{};
    for (const auto& p : ens.paths) {
        REQUIRE(p.terminated);
        counts[p.terminal_atom]++;
    }
    // chi-squared against (0.25, 0.25, 0.5) at the 1% level (2 dof: 9.21)
    double chi2 = 0.0;
    const double expect[3] = {0.25 * 50000, 0.25 * 50000, 0.5 * 50000};
    for (int i = 0; i < 3; ++i) {
        const double d = counts[i] - expect[i];
        chi2 += d * d / expect[i];
    }
    REQUIRE(chi2 < 9.21);
}

TEST_CASE("spread policy hits the closed-form mean", "[simulate]") {
    SpreadOptimalPolicy pol(0.25, 0.5, -0.1, 0.5);
    auto ens = simulate(flagship_measure(), pol, mvmb::call_spread(-0.1, 0.5), 1.0, 40000, 1e-3,
                        2024);
    REQUIRE(ens.excluded == 0);
    REQUIRE(std::abs(ens.mean_payoff - 0.5) <= 3.0 * ens.se_payoff);
    REQUIRE(std::abs(ens.mean_a - 0.25) <= 3.0 * ens.se_a);
}

TEST_CASE("spread policy in other regions", "[simulate]") {
    SECTION("region iv start") {
        SpreadOptimalPolicy pol(0.25, 0.5, -0.1, 0.8);
        auto ens = simulate(flagship_measure(), pol, mvmb::call_spread(-0.1, 0.8), 1.0, 40000, 1e-3,
                            5150);
        REQUIRE(std::abs(ens.mean_payoff - 0.575) <= 3.0 * ens.se_payoff);
    }
    SECTION("saturated region start") {
        AtomicMeasure m({-1.0, 0.0, 1.0}, {0.05, 0.05, 0.9}, true);
        SpreadOptimalPolicy pol(0.05, 0.9, -0.1, 0.5);
        auto ens = simulate(m, pol, mvmb::call_spread(-0.1, 0.5), 1.0, 5000, 1e-3, 31337);
        REQUIRE(ens.mean_payoff == Approx(0.6).margin(1e-12));
        REQUIRE(ens.se_payoff == Approx(0.0).margin(1e-12));
    }
    SECTION("large K2 matches the shifted call") {
        SpreadOptimalPolicy pol(0.25, 0.5, -0.1, 5.0);
        auto ens = simulate(flagship_measure(), pol, mvmb::call_spread(-0.1, 5.0), 1.0, 40000, 1e-3,
                            888);
        mvmb::SpreadState s;
        s.beta = 0.25;
        s.gamma = 0.5;
        s.k1 = -0.1;
        s.k2 = 5.0;
        REQUIRE(std::abs(ens.mean_payoff - mvmb::spread_value(s)) <= 3.0 * ens.se_payoff);
    }
    SECTION("embedding is exact for the spread policy") {
        SpreadOptimalPolicy pol(0.25, 0.5, -0.1, 0.5);
        auto ens = simulate(flagship_measure(), pol, mvmb::call_spread(-0.1, 0.5), 1.0, 50000, 1e-3,
                            424242);
        std::array<std::size_t, 3> counts{};
        for (const auto& p : ens.paths) counts[p.terminal_atom]++;
        double chi2 = 0.0;
        const double expect[3] = {0.25 * 50000, 0.25 * 50000, 0.5 * 50000};
        for (int i = 0; i < 3; ++i) {
            const double d = counts[i] - expect[i];
            chi2 += d * d / expect[i];
        }
        REQUIRE(chi2 < 9.21);
    }
}

TEST_CASE("seeded determinism", "[simulate]") {
    SpreadOptimalPolicy pol(0.25, 0.5, -0.1, 0.5);
    SimulateOptions opts;
    opts.threads = 2;
    auto a = simulate(flagship_measure(), pol, mvmb::call_spread(-0.1, 0.5), 1.0, 2000, 1e-3, 99,
                      opts);
    opts.threads = 1;
    auto b = simulate(flagship_measure(), pol, mvmb::call_spread(-0.1, 0.5), 1.0, 2000, 1e-3, 99,
                      opts);
    REQUIRE(a.mean_payoff == b.mean_payoff);
    REQUIRE(a.se_payoff == b.se_payoff);
    auto c = simulate(flagship_measure(), pol, mvmb::call_spread(-0.1, 0.5), 1.0, 2000, 1e-3, 100);
    REQUIRE(a.mean_payoff != c.mean_payoff);
}

TEST_CASE("mvm property suite on explicit and random policies", "[simulate]") {
    const auto& m = flagship_measure();
    auto payoff = mvmb::call_spread(-0.1, 0.5);

    SECTION("convex policy") {
        auto ens = simulate(m, ConvexOptimalPolicy(), payoff, 1.0, 20000, 1e-3, 1);
        auto rep = mvmb::check_mvm_properties(ens, m);
        REQUIRE(rep.weight_martingale);
        REQUIRE(rep.terminal_law);
        REQUIRE(rep.y_martingale);
        REQUIRE(rep.termination);
    }
    SECTION("spread policy") {
        SpreadOptimalPolicy pol(0.25, 0.5, -0.1, 0.5);
        auto ens = simulate(m, pol, payoff, 1.0, 20000, 1e-3, 2);
        REQUIRE(mvmb::check_mvm_properties(ens, m).pass());
    }
    SECTION("random policy") {
        RandomPolicy pol;
        auto ens = simulate(m, pol, payoff, 1.0, 8000, 1e-3, 3);
        auto rep = mvmb::check_mvm_properties(ens, m);
        INFO("worst weight z " << rep.worst_weight_z << ", worst y z " << rep.worst_y_z
                               << ", terminal W1 " << rep.terminal_w1 << " thr "
                               << rep.terminal_w1_threshold << ", unterminated "
                               << rep.unterminated_fraction);
        REQUIRE(rep.pass());
    }
    SECTION("singleton start is trivially consistent") {
        AtomicMeasure d(std::vector<double>{0.7}, std::vector<double>{1.0});
        auto ens = simulate(d, ConvexOptimalPolicy(), mvmb::call(0.5), 1.0, 100, 1e-2, 4);
        auto rep = mvmb::check_mvm_properties(ens, d);
        REQUIRE(rep.pass());
        REQUIRE(ens.mean_payoff == Approx(0.2).margin(1e-12));
    }
    SECTION("negative control with injected drift fails the weight test") {
        const std::size_t n = 4000;
        mvmb::PathEnsemble ens;
        ens.n_paths = n;
        ens.seed = 5;
        ens.policy_name = "drifted";
        ens.y_target = 1.0 * m.mean();
        ens.checkpoint_r = {0.05, 0.1, 0.2};
        ens.cp_weights.assign(3, std::vector<double>(n * 3));
        ens.cp_y.assign(3, std::vector<double>(n));
        ens.paths.resize(n);
        for (std::size_t pid = 0; pid < n; ++pid) {
            Philox rng(5, pid);
            MvmState s = make_state(m);
            std::size_t cp = 0;
            while (s.r < 0.3) {
                Control c;
                c.w.assign(3, 0.0);
                std::vector<int> free;
                for (int i = 0; i < 3; ++i)
                    if (!s.frozen[i]) free.push_back(i);
                if (free.size() >= 2) {
                    c.lambda = 0.0;
                    double g = std::sqrt(0.5);
                    c.w[free[0]] = -g;
                    c.w[free[1]] = g;
                    double n2 = mvmb::detail::chart_norm2(c.w);
                    for (auto& v : c.w) v /= std::sqrt(n2);
                } else {
                    c.lambda = 1.0;
                }
                s = mvmb::step(s, m.atoms(), c, 1e-3, rng.normal());
                // adversarial mutation: leak mass toward the top atom
                if (!s.frozen[2] && !s.frozen[1] && s.weights[1] > 2e-4) {
                    s.weights[1] -= 2e-4;
                    s.weights[2] += 2e-4;
                }
                while (cp < ens.checkpoint_r.size() && s.r >= ens.checkpoint_r[cp] - 1e-12) {
                    for (int i = 0; i < 3; ++i) ens.cp_weights[cp][pid * 3 + i] = s.weights[i];
                    ens.cp_y[cp][pid] =
                        s.a + (1.0 - s.t) * mvmb::detail::mean_of(s.weights, m.atoms());
                    ++cp;
                }
            }
            ens.paths[pid] = {2, s.a, 0.0, true};
        }
        auto rep = mvmb::check_mvm_properties(ens, m);
        REQUIRE_FALSE(rep.weight_martingale);
    }
}

TEST_CASE("weight paths from a binomial martingale", "[simulate]") {
    SECTION("one-step symmetric tree") {
        mvmb::BinomialTree t;
        t.values = {{1.0}, {0.0, 2.0}};
        t.up_prob = {{0.5}};
        auto out = mvmb::mvm_from_tree(t);
        REQUIRE(out.support == std::vector<double>{0.0, 2.0});
        REQUIRE(out.root_weights[0] == Approx(0.5));
        REQUIRE(out.root_weights[1] == Approx(0.5));
        REQUIRE(out.paths.size() == 2);
        for (const auto& p : out.paths) {
            REQUIRE(p.weights.front()[0] == Approx(0.5));
            REQUIRE((p.weights.back()[0] == 1.0 || p.weights.back()[1] == 1.0));
        }
    }
    SECTION("two-step tree conditional laws") {
        mvmb::BinomialTree t;
        t.values = {{1.0}, {0.5, 1.25}, {0.0, 1.0, 1.5}};
        t.up_prob = {{2.0 / 3.0}, {0.5, 0.5}};
        auto out = mvmb::mvm_from_tree(t);
        for (const auto& p : out.paths) {
            const auto& w1 = p.weights[1];
            if (w1[2] == 0.0) {
                REQUIRE(w1[0] == Approx(0.5));
                REQUIRE(w1[1] == Approx(0.5));
            } else {
                REQUIRE(w1[1] == Approx(0.5));
                REQUIRE(w1[2] == Approx(0.5));
            }
        }
        double total = 0.0;
        for (const auto& p : out.paths) total += p.probability;
        REQUIRE(total == Approx(1.0));
    }
    SECTION("degenerate constant tree") {
        mvmb::BinomialTree t;
        t.values = {{2.0}, {2.0, 2.0}};
        t.up_prob = {{0.3}};
        auto out = mvmb::mvm_from_tree(t);
        REQUIRE(out.support.size() == 1);
        REQUIRE(out.root_weights[0] == 1.0);
    }
    SECTION("non-martingale tree rejected with the offending node") {
        mvmb::BinomialTree t;
        t.values = {{1.0}, {0.4, 2.0}};
        t.up_prob = {{0.5}};
        try {
            mvmb::mvm_from_tree(t);
            FAIL("expected a martingale violation");
        } catch (const std::invalid_argument& e) {
            REQUIRE(std::string(e.what()).find("(0,0)") != std::string::npos);
        }
    }
}

TEST_CASE("random policies never beat the solver bound", "[simulate]") {
    const auto& m = flagship_measure();
    auto payoff = mvmb::call_spread(-0.1, 0.5);
    mvmb::SolverConfig cfg;
    cfg.n_time = cfg.n_avg = cfg.n_simplex = 48;
    cfg.allow_negative = true;
    auto vs = mvmb::solve({-1.0, 0.0, 1.0}, std::nullopt, payoff, cfg);
    std::vector<double> w{0.25, 0.25, 0.5};
    const double bound = vs.query(0.0, 0.0, w);
    for (int trial = 0; trial < 5; ++trial) {
        RandomPolicy pol(0.1 + 0.1 * trial, 0.5 + 0.08 * trial, 0.4 + 0.05 * trial);
        auto ens = simulate(m, pol, payoff, 1.0, 2000, 1e-3, 1000 + trial);
        REQUIRE(ens.mean_payoff <= bound + 3.0 * ens.se_payoff + vs.tolerance());
    }
}
