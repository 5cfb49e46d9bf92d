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
#include <cstdlib>
#include <filesystem>

#include "mvmbound/json_io.hpp"
#include "mvmbound/mvm.hpp"

namespace fs = std::filesystem;
using mvmb::json;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("mvmb_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run_cli(const std::string& args, const std::string& stdout_to = "/dev/null") {
    const std::string cmd = std::string(MVMB_CLI_PATH) + " " + args + " > " + stdout_to + " 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("sha256 known vectors", "[io]") {
    REQUIRE(mvmb::sha256_hex("") ==
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    REQUIRE(mvmb::sha256_hex("abc") ==
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    REQUIRE(mvmb::sha256_hex(std::string(200, 'x')) != mvmb::sha256_hex(std::string(201, 'x')));
}

TEST_CASE("measure and payoff json round trips", "[io]") {
    mvmb::AtomicMeasure m({-1.0, 0.0, 1.0}, {0.25, 0.25, 0.5}, true);
    auto back = mvmb::measure_from_json(mvmb::measure_to_json(m), true);
    REQUIRE(back == m);

    auto spread = mvmb::call_spread(-0.1, 0.5);
    auto p1 = mvmb::payoff_from_json(json{{"kind", "call_spread"}, {"k1", -0.1}, {"k2", 0.5}});
    REQUIRE(p1.breakpoints() == spread.breakpoints());
    auto p2 = mvmb::payoff_from_json(json{{"kind", "call"}, {"strike", 1.5}});
    REQUIRE(p2(2.0) == Approx(0.5));
    auto p3 = mvmb::payoff_from_json(mvmb::payoff_to_json(spread));
    REQUIRE(p3(0.3) == Approx(spread(0.3)));
    REQUIRE_THROWS_AS(mvmb::payoff_from_json(json{{"kind", "digital"}}), std::invalid_argument);

    auto w = mvmb::weight_from_json(json{{"kind", "piecewise"},
                                         {"times", std::vector<double>{0.0, 1.0}},
                                         {"values", std::vector<double>{0.0, 2.0}}});
    REQUIRE(w.integral(0.0, 1.0) == Approx(1.0));
}

TEST_CASE("call curve csv", "[io]") {
    TempDir dir;
    mvmb::CallQuoteCurve curve{{0.0, 1.0, 2.0}, {1.0, 0.5, 0.0}};
    mvmb::write_file(dir.file("calls.csv"), mvmb::call_curve_to_csv(curve));
    auto back = mvmb::load_call_curve(dir.file("calls.csv"));
    REQUIRE(back.strikes == curve.strikes);
    REQUIRE(back.prices == curve.prices);
}

TEST_CASE("surface policy json round trip", "[io]") {
    mvmb::SolverConfig cfg;
    cfg.n_time = cfg.n_avg = cfg.n_simplex = 16;
    cfg.allow_negative = true;
    auto vs = mvmb::solve({-1.0, 0.0, 1.0}, std::nullopt, mvmb::call_spread(-0.1, 0.5), cfg);
    auto j = mvmb::surface_policy_to_json(vs);
    auto stored = mvmb::surface_policy_from_json(j);
    REQUIRE(stored.k == 2);
    REQUIRE(stored.n_simplex == 16);
    REQUIRE(stored.tags.size() == vs.grid().node_count());
    for (std::size_t id = 0; id < stored.tags.size(); ++id)
        REQUIRE(stored.tags[id].action == vs.start_policy()[id].action);
    // constructible into a policy
    mvmb::SurfacePolicy pol(stored.k, stored.n_simplex, stored.tags, stored.support.size());
    REQUIRE(pol.name() == "from-surface");
}

TEST_CASE("cli basics", "[cli]") {
    TempDir dir;
    const std::string out_dir = " --out-dir " + dir.path.string();

    SECTION("oracle prints value, region and residual") {
        REQUIRE(run_cli("oracle --beta 0.25 --gamma 0.5" + out_dir, dir.file("o.json")) == 0);
        auto j = json::parse(mvmb::read_file(dir.file("o.json")));
        REQUIRE(j["value"].get<double>() == Approx(0.5));
        REQUIRE(j["region"].get<std::string>() == "iii");
        REQUIRE(j["drift_residual"].get<double>() == Approx(-1.0 / 12));
        REQUIRE(fs::exists(dir.path / "oracle_manifest.json"));
    }
    SECTION("terminal oracle returns the payoff") {
        REQUIRE(run_cli("oracle --beta 0.3 --gamma 0.3 --t 1.0 --a 0.25" + out_dir,
                        dir.file("o.json")) == 0);
        auto j = json::parse(mvmb::read_file(dir.file("o.json")));
        REQUIRE(j["value"].get<double>() == Approx(0.35));
        REQUIRE(j["region"].get<std::string>() == "terminal");
    }
    SECTION("usage errors exit 2") {
        REQUIRE(run_cli("oracle --beta 0.25") == 2);          // missing required
        REQUIRE(run_cli("nonsense-subcommand") == 2);         // unknown command
        REQUIRE(run_cli("oracle --beta 0.2 --gamma 0.2 --frobnicate 1") == 2);
    }
}

TEST_CASE("cli pipeline on the closed-form instance", "[cli]") {
    TempDir dir;
    const std::string out_dir = " --out-dir " + dir.path.string();
    mvmb::write_file(dir.file("measure.json"),
                     json{{"atoms", {-1.0, 0.0, 1.0}}, {"weights", {0.25, 0.25, 0.5}}}.dump());
    mvmb::write_file(dir.file("payoff.json"),
                     json{{"kind", "call_spread"}, {"k1", -0.1}, {"k2", 0.5}}.dump());
    const std::string base = " --measure " + dir.file("measure.json") + " --payoff " +
                             dir.file("payoff.json") + " --allow-negative";

    SECTION("price is deterministic across reruns") {
        REQUIRE(run_cli("price" + base + " --grid 24,24,24" + out_dir, dir.file("p1.json")) == 0);
        REQUIRE(run_cli("price" + base + " --grid 24,24,24" + out_dir, dir.file("p2.json")) == 0);
        REQUIRE(mvmb::read_file(dir.file("p1.json")) == mvmb::read_file(dir.file("p2.json")));
        auto j = json::parse(mvmb::read_file(dir.file("p1.json")));
        REQUIRE(j["value"].get<double>() == Approx(0.5).margin(0.05));
        REQUIRE(fs::exists(dir.path / "price_manifest.json"));
        auto man = json::parse(mvmb::read_file((dir.path / "price_manifest.json").string()));
        REQUIRE(man["inputs"].size() == 2);
        for (auto& [k, v] : man["inputs"].items())
            REQUIRE(v.get<std::string>().size() == 64);
    }
    SECTION("surface rows cover the simplex nodes") {
        REQUIRE(run_cli("surface" + base + " --grid 16,16,16 --out " + dir.file("s.csv") +
                            out_dir,
                        dir.file("s.log")) == 0);
        auto csv = mvmb::read_file(dir.file("s.csv"));
        std::size_t rows = std::count(csv.begin(), csv.end(), '\n');
        REQUIRE(rows == 1 + 17 * 18 / 2);  // header + nodes
        REQUIRE(csv.substr(0, 17) == "beta,gamma,value\n");
    }
    SECTION("surface planar regions match the closed-form branches") {
        REQUIRE(run_cli("surface" + base + " --grid 64,64,64 --out " + dir.file("s64.csv") +
                            out_dir,
                        dir.file("s64.log")) == 0);
        std::istringstream in(mvmb::read_file(dir.file("s64.csv")));
        std::string line;
        std::getline(in, line);  // header
        int seen_i = 0, seen_iii = 0, seen_iv = 0;
        while (std::getline(in, line)) {
            double beta, gamma, value;
            REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf", &beta, &gamma, &value) == 3);
            REQUIRE(value >= -1e-9);
            REQUIRE(value <= 0.6 + 1e-9);
            mvmb::SpreadState s;
            s.beta = beta;
            s.gamma = gamma;
            s.k1 = -0.1;
            s.k2 = 0.5;
            // stay clear of region boundaries; the planar pieces there must
            // match the affine branch formulas
            bool interior = true;
            try {
                mvmb::spread_drift_residual(s, 0.02);
            } catch (const std::invalid_argument&) {
                interior = false;
            }
            if (!interior) continue;
            switch (mvmb::classify_region(s)) {
                case mvmb::Region::i:
                    REQUIRE(value == Approx(0.6).margin(1e-6));
                    ++seen_i;
                    break;
                case mvmb::Region::iii:
                    REQUIRE(value ==
                            Approx((2 * gamma + beta) * 0.6 / 1.5).margin(1e-6));
                    ++seen_iii;
                    break;
                case mvmb::Region::iv:
                    REQUIRE(value == Approx(gamma + 0.1 * (beta + gamma)).margin(1e-6));
                    ++seen_iv;
                    break;
                default:
                    break;
            }
        }
        // the slice shows exactly the three planar regions of this instance
        REQUIRE(seen_i > 50);
        REQUIRE(seen_iii > 50);
        REQUIRE(seen_iv > 50);
    }
    SECTION("compare exits zero and writes its result") {
        REQUIRE(run_cli("compare" + base + " --grid 20,20,20 --paths 4000 --dt 0.002 --seed 5" +
                            out_dir,
                        dir.file("c.txt")) == 0);
        auto res = json::parse(mvmb::read_file((dir.path / "compare_result.json").string()));
        REQUIRE(res["pass"].get<bool>());
        REQUIRE(res["rows"].size() == 3);
    }
    SECTION("simulate emits a summary and a path dump") {
        REQUIRE(run_cli("simulate" + base +
                            " --policy spread --paths 2000 --dt 0.002 --seed 9 --dump-paths " +
                            dir.file("paths.csv") + out_dir,
                        dir.file("sim.json")) == 0);
        auto j = json::parse(mvmb::read_file(dir.file("sim.json")));
        REQUIRE(j["mean_payoff"].get<double>() == Approx(0.5).margin(0.02));
        auto csv = mvmb::read_file(dir.file("paths.csv"));
        REQUIRE(csv.substr(0, 12) == "path_id,t,S,");
        REQUIRE(std::count(csv.begin(), csv.end(), '\n') > 10);
    }
}

TEST_CASE("cli calibrate round trip", "[cli]") {
    TempDir dir;
    const std::string out_dir = " --out-dir " + dir.path.string();
    mvmb::write_file(dir.file("calls.csv"), "strike,price\n0,1\n1,0.5\n2,0\n");
    REQUIRE(run_cli("calibrate --calls " + dir.file("calls.csv") + " --out " +
                        dir.file("m.json") + out_dir,
                    dir.file("cal.log")) == 0);
    auto m = mvmb::load_measure(dir.file("m.json"));
    REQUIRE(m.weight(0) == Approx(0.5));
    REQUIRE(m.weight(2) == Approx(0.5));

    mvmb::write_file(dir.file("bad.csv"), "strike,price\n0,1\n1,0.9\n2,0.1\n");
    REQUIRE(run_cli("calibrate --calls " + dir.file("bad.csv") + " --out " + dir.file("x.json") +
                        out_dir) == 2);
}
