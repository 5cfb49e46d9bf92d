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

#include "mvmbound/oracle.hpp"
#include "support/spread_boundaries.hpp"
#include "support/test_util.hpp"

using mvmb::AtomicMeasure;
using mvmb::classify_region;
using mvmb::Region;
using mvmb::spread_value;
using mvmb::SpreadState;
using testutil::Rand;

namespace {

SpreadState flagship_state(double beta, double gamma, double k1 = -0.1, double k2 = 0.5) {
    SpreadState s;
    s.t = 0.0;
    s.a = 0.0;
    s.beta = beta;
    s.gamma = gamma;
    s.k1 = k1;
    s.k2 = k2;
    s.horizon = 1.0;
    return s;
}

SpreadState random_state(Rand& r) {
    SpreadState s;
    s.horizon = 1.0;
    s.t = r.uniform(0.0, 0.99);
    s.a = r.uniform(-1.0, 1.0);
    s.beta = r.uniform(0.0, 1.0);
    s.gamma = r.uniform(0.0, 1.0 - s.beta);
    s.k1 = r.uniform(-0.99, 0.99);
    s.k2 = s.k1 + r.uniform(0.01, 1.5);
    return s;
}

// The printed condition set of each region, evaluated literally.
bool region_conditions_hold(const SpreadState& s, Region r) {
    const double tt = s.horizon - s.t;
    const double a_lo = s.a - tt, a_mid = s.a, a_hi = s.a + tt;
    const double a_all = s.a + (2.0 * s.gamma + s.beta - 1.0) * tt;
    const double pd = (s.beta + s.gamma > 0.0) ? s.gamma / (s.gamma + s.beta) : s.k2;
    const double a_pair = s.a + pd * tt;
    switch (r) {
        case Region::i: return s.k2 <= a_all;
        case Region::ii: return s.k1 <= a_lo && a_all < s.k2;
        case Region::iii: return a_lo < s.k1 && a_all < s.k2 && s.k2 <= a_pair;
        case Region::iv: return a_lo < s.k1 && s.k1 <= a_mid && a_pair < s.k2;
        case Region::v: return a_mid < s.k1 && a_pair < s.k2 && s.k2 <= a_hi;
        case Region::vi: return a_mid < s.k1 && s.k1 <= a_hi && a_hi < s.k2;
        case Region::vii: return a_hi < s.k1;
    }
    return false;
}

}  // namespace

TEST_CASE("convex closed-form value", "[oracle]") {
    SECTION("singleton reduces to the payoff") {
        auto c = mvmb::call(0.7);
        auto m = AtomicMeasure::dirac(0.9);
        REQUIRE(mvmb::convex_value(m, 0.25, 0.1, c, 1.0) ==
                Approx(c(0.1 + 0.75 * 0.9)).margin(1e-15));
    }
    SECTION("linear payoff uses only the mean") {
        mvmb::Payoff lin({0.0}, {1.0, 1.0}, 0.3);
        Rand r(2);
        for (int i = 0; i < 20; ++i) {
            auto m = testutil::random_measure(r, 5);
            double t = r.uniform(0.0, 1.0), a = r.uniform(0.0, 1.0);
            REQUIRE(mvmb::convex_value(m, t, a, lin, 1.0) ==
                    Approx(lin(a + (1.0 - t) * m.mean())).margin(1e-12));
        }
    }
    SECTION("two-point call example") {
        AtomicMeasure m({0.0, 2.0}, {0.5, 0.5});
        REQUIRE(mvmb::convex_value(m, 0.0, 0.0, mvmb::call(1.0), 1.0) == Approx(0.5));
    }
    SECTION("rejects non-convex payoffs") {
        REQUIRE_THROWS_AS(
            mvmb::convex_value(AtomicMeasure::dirac(1.0), 0.0, 0.0, mvmb::call_spread(0.0, 1.0), 1.0),
            std::invalid_argument);
    }
    SECTION("dominates the static Jensen bound") {
        Rand r(4);
        auto c = mvmb::call(0.8);
        for (int i = 0; i < 30; ++i) {
            auto m = testutil::random_measure(r, 5);
            double t = r.uniform(0.0, 1.0), a = r.uniform(0.0, 0.5);
            REQUIRE(mvmb::convex_value(m, t, a, c, 1.0) >=
                    c(a + (1.0 - t) * m.mean()) - 1e-12);
        }
    }
}

TEST_CASE("region classification", "[oracle]") {
    REQUIRE(classify_region(flagship_state(0.25, 0.5)) == Region::iii);
    REQUIRE(classify_region(flagship_state(0.05, 0.9)) == Region::i);

    SpreadState unreachable = flagship_state(0.25, 0.5, 2.0, 3.0);
    REQUIRE(classify_region(unreachable) == Region::vii);

    SECTION("exactly one printed condition set holds") {
        Rand r(19);
        for (int i = 0; i < 4000; ++i) {
            auto s = random_state(r);
            int matches = 0;
            Region match = Region::i;
            for (Region reg : {Region::i, Region::ii, Region::iii, Region::iv, Region::v,
                               Region::vi, Region::vii}) {
                if (region_conditions_hold(s, reg)) {
                    ++matches;
                    match = reg;
                }
            }
            REQUIRE(matches == 1);
            REQUIRE(classify_region(s) == match);
        }
    }
}

TEST_CASE("spread value closed form", "[oracle]") {
    SECTION("region i saturates") {
        REQUIRE(spread_value(flagship_state(0.05, 0.9)) == Approx(0.6));
    }
    SECTION("flagship instance start value") {
        REQUIRE(spread_value(flagship_state(0.25, 0.5)) == Approx(0.5).margin(1e-12));
    }
    SECTION("region iv instance") {
        REQUIRE(spread_value(flagship_state(0.25, 0.5, -0.1, 0.8)) == Approx(0.575).margin(1e-12));
    }
    SECTION("terminal states return the payoff") {
        SpreadState s = flagship_state(0.3, 0.3);
        s.t = s.horizon;
        s.a = 0.3;
        REQUIRE(spread_value(s) == Approx(0.4));
        s.a = 0.9;
        REQUIRE(spread_value(s) == Approx(0.6));
        s.a = -0.5;
        REQUIRE(spread_value(s) == 0.0);
    }
    SECTION("bounded in [0, K2-K1]") {
        Rand r(31);
        for (int i = 0; i < 2000; ++i) {
            auto s = random_state(r);
            double v = spread_value(s);
            REQUIRE(v >= -1e-12);
            REQUIRE(v <= s.k2 - s.k1 + 1e-12);
        }
    }
}

TEST_CASE("boundary continuity of adjacent branches", "[oracle]") {
    Rand r(101);
    for (const auto& pair : testutil::adjacent_region_pairs()) {
        int done = 0, attempts = 0;
        while (done < 400 && attempts < 40000) {
            ++attempts;
            auto s = testutil::sample_boundary_state(pair, r);
            if (!s) continue;
            double va = mvmb::spread_branch_value(*s, pair.lo);
            double vb = mvmb::spread_branch_value(*s, pair.hi);
            REQUIRE(va == Approx(vb).margin(1e-9));
            ++done;
        }
        INFO("pair " << region_name(pair.lo) << "|" << region_name(pair.hi));
        REQUIRE(done == 400);
    }
}

TEST_CASE("drift residual", "[oracle]") {
    SECTION("zero in the waiting regions") {
        REQUIRE(mvmb::spread_drift_residual(flagship_state(0.05, 0.9)) == 0.0);
        REQUIRE(mvmb::spread_drift_residual(flagship_state(0.25, 0.5, 2.0, 3.0)) == 0.0);
    }
    SECTION("flagship start (region iii) value") {
        double res = mvmb::spread_drift_residual(flagship_state(0.25, 0.5));
        REQUIRE(res == Approx(-0.6 * 1.25 / 2.25 * 0.25).margin(1e-12));
        REQUIRE(res <= 1e-12);
    }
    SECTION("region vi factorisation on the diagonal") {
        SpreadState s = flagship_state(0.4, 0.6, 0.3, 1.5);
        REQUIRE(classify_region(s) == Region::vi);
        double res = mvmb::spread_drift_residual(s);
        REQUIRE(res == Approx(2.0 * 0.6 * (0.6 + 0.2 - 1.0)).margin(1e-12));
    }
    SECTION("non-positive at random interior states") {
        Rand r(57);
        int done = 0;
        while (done < 2000) {
            auto s = random_state(r);
            try {
                double res = mvmb::spread_drift_residual(s);
                REQUIRE(res <= 1e-12);
                ++done;
            } catch (const std::invalid_argument&) {
                // boundary or terminal draw; retry
            }
        }
    }
    SECTION("finite differences agree with the closed form") {
        Rand r(71);
        int done = 0;
        const double h = 1e-6;
        while (done < 300) {
            auto s = random_state(r);
            if (s.t > 0.9) continue;
            try {
                mvmb::spread_drift_residual(s, 1e-3);  // keep well inside a region
            } catch (const std::invalid_argument&) {
                continue;
            }
            double drift = 2.0 * s.gamma + s.beta - 1.0;
            SpreadState sp = s, sm = s;
            sp.t += h;
            sp.a += h * drift;
            sm.t -= h;
            sm.a -= h * drift;
            double fd = (spread_value(sp) - spread_value(sm)) / (2.0 * h);
            REQUIRE(fd <= 1e-6);
            REQUIRE(fd == Approx(mvmb::spread_drift_residual(s)).margin(1e-5));
            ++done;
        }
    }
    SECTION("boundary states rejected") {
        auto s = flagship_state(0.25, 0.5);
        s.k2 = 0.25;  // exactly a_all
        REQUIRE_THROWS_AS(mvmb::spread_drift_residual(s), std::invalid_argument);
    }
}

TEST_CASE("concavity in (beta, gamma)", "[oracle]") {
    Rand r(83);
    for (int i = 0; i < 2000; ++i) {
        SpreadState base = random_state(r);
        SpreadState p = base, q = base, mid = base;
        p.beta = r.uniform(0.0, 1.0);
        p.gamma = r.uniform(0.0, 1.0 - p.beta);
        q.beta = r.uniform(0.0, 1.0);
        q.gamma = r.uniform(0.0, 1.0 - q.beta);
        mid.beta = 0.5 * (p.beta + q.beta);
        mid.gamma = 0.5 * (p.gamma + q.gamma);
        REQUIRE(spread_value(mid) >= 0.5 * spread_value(p) + 0.5 * spread_value(q) - 1e-9);
    }
}

TEST_CASE("two-atom reduction", "[oracle]") {
    REQUIRE(mvmb::two_atom_value(0.0, 0.0, 0.6, 1.0) == Approx(0.4));
    REQUIRE(mvmb::two_atom_value(0.0, 0.0, 0.9, 1.0) == Approx(0.5));
    REQUIRE(mvmb::two_atom_value(0.0, 0.0, 0.0, 1.0) == 0.0);

    SECTION("matches min(1/2, 2 gamma / 3) at the start state") {
        for (int i = 0; i <= 100; ++i) {
            double g = i / 100.0;
            REQUIRE(mvmb::two_atom_value(0.0, 0.0, g, 1.0) ==
                    Approx(std::min(0.5, 2.0 * g / 3.0)).margin(1e-12));
        }
    }
    SECTION("agrees with the spread form at beta = 0 start states") {
        Rand r(62);
        for (int i = 0; i < 500; ++i) {
            SpreadState s = flagship_state(0.0, r.uniform(0.0, 1.0), 0.0, 0.5);
            REQUIRE(spread_value(s) ==
                    Approx(mvmb::two_atom_value(s.t, s.a, s.gamma, s.horizon)).margin(1e-12));
        }
    }
    SECTION("terminal payoff branch") {
        REQUIRE(mvmb::two_atom_value(1.0, 0.3, 0.4, 1.0) == Approx(0.3));
        REQUIRE(mvmb::two_atom_value(1.0, 0.9, 0.4, 1.0) == Approx(0.5));
    }
}

TEST_CASE("limits and reductions of the spread form", "[oracle]") {
    SECTION("large K2 reduces to the shifted call") {
        Rand r(91);
        auto c = mvmb::call(-0.1);
        AtomicMeasure support({-1.0, 0.0, 1.0}, {0.25, 0.25, 0.5}, true);
        for (double k2 : {2.0, 5.0, 20.0}) {
            auto s = flagship_state(0.25, 0.5, -0.1, k2);
            double conv = mvmb::convex_value(support, 0.0, 0.0, c, 1.0);
            REQUIRE(spread_value(s) == Approx(conv).margin(1e-12));
        }
    }
    SECTION("no mass on the pair face reduces to the terminal payoff of -1") {
        SpreadState s = flagship_state(0.0, 0.0);
        REQUIRE(spread_value(s) == 0.0);  // average locks in below K1
    }
    SECTION("diagonal face with unreachable cap equals the convex value on {0,1}") {
        Rand r(44);
        for (int i = 0; i < 300; ++i) {
            double beta = r.uniform(0.0, 1.0);
            SpreadState s = flagship_state(beta, 1.0 - beta, -0.1, 2.5);
            AtomicMeasure m({0.0, 1.0}, {beta, 1.0 - beta});
            REQUIRE(spread_value(s) ==
                    Approx(mvmb::convex_value(m, 0.0, 0.0, mvmb::call(-0.1), 1.0)).margin(1e-12));
        }
    }
}
