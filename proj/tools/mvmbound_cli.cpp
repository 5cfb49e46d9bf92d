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

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mvmbound/hjb.hpp"
#include "mvmbound/json_io.hpp"
#include "mvmbound/measures.hpp"
#include "mvmbound/mvm.hpp"
#include "mvmbound/oracle.hpp"
#include "mvmbound/payoffs.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

struct GridSpec {
    int nt = 100, na = 100, ns = 100;
};

GridSpec parse_grid(const std::string& s) {
    GridSpec g;
    if (std::sscanf(s.c_str(), "%d,%d,%d", &g.nt, &g.na, &g.ns) != 3)
        throw CLI::ValidationError("--grid", "expected nt,na,ns");
    return g;
}

// call-spread payoffs are recognised by their breakpoint/slope pattern
std::optional<std::pair<double, double>> spread_strikes(const mvmb::Payoff& p) {
    const auto& bp = p.breakpoints();
    const auto& sl = p.slopes();
    if (bp.size() == 2 && sl.size() == 3 && sl[0] == 0.0 && sl[1] == 1.0 && sl[2] == 0.0 &&
        p.breakpoint_values().front() == 0.0)
        return std::make_pair(bp[0], bp[1]);
    return std::nullopt;
}

bool is_three_point_support(const mvmb::AtomicMeasure& m) {
    return m.size() == 3 && m.atom(0) == -1.0 && m.atom(1) == 0.0 && m.atom(2) == 1.0;
}

struct CommonSolveArgs {
    std::string measure_path, payoff_path, weight_path;
    std::string grid = "100,100,100";
    double horizon = 1.0;
    bool allow_negative = false;
    int threads = 0;
};

void add_solve_options(CLI::App* cmd, CommonSolveArgs& args) {
    cmd->add_option("--measure", args.measure_path, "terminal law JSON file")->required();
    cmd->add_option("--payoff", args.payoff_path, "payoff JSON file")->required();
    cmd->add_option("--horizon", args.horizon, "maturity T")->capture_default_str();
    cmd->add_option("--grid", args.grid, "solver grid nt,na,ns")->capture_default_str();
    cmd->add_option("--weight", args.weight_path, "time-weight JSON file");
    cmd->add_flag("--allow-negative", args.allow_negative, "admit negative support atoms");
    cmd->add_option("--threads", args.threads, "worker threads (0 = auto)");
}

struct SolveBundle {
    mvmb::AtomicMeasure measure;
    mvmb::Payoff payoff;
    mvmb::SolverConfig cfg;
};

SolveBundle prepare_solve(const CommonSolveArgs& args) {
    auto measure = mvmb::load_measure(args.measure_path, args.allow_negative);
    auto payoff = mvmb::load_payoff(args.payoff_path);
    const GridSpec g = parse_grid(args.grid);
    mvmb::SolverConfig cfg;
    cfg.n_time = g.nt;
    cfg.n_avg = g.na;
    cfg.n_simplex = g.ns;
    cfg.horizon = args.horizon;
    cfg.allow_negative = args.allow_negative;
    cfg.threads = args.threads;
    if (!args.weight_path.empty()) cfg.weight = mvmb::load_weight(args.weight_path);
    return SolveBundle{std::move(measure), std::move(payoff), std::move(cfg)};
}

mvmb::json config_json(const CommonSolveArgs& args) {
    return mvmb::json{{"measure", args.measure_path}, {"payoff", args.payoff_path},
                      {"weight", args.weight_path},   {"grid", args.grid},
                      {"horizon", args.horizon},      {"allow_negative", args.allow_negative},
                      {"threads", args.threads}};
}

void write_manifest(const std::string& out_dir, const std::string& command, mvmb::json config,
                    const std::vector<std::string>& inputs, uint64_t seed = 0) {
    mvmb::RunManifest man;
    man.command = command;
    man.version = kVersion;
    man.config = std::move(config);
    man.seed = seed;
    for (const auto& path : inputs)
        if (!path.empty()) man.add_input(path);
    man.write(out_dir + "/" + command + "_manifest.json");
}

std::unique_ptr<mvmb::ControlPolicy> make_policy(const std::string& name,
                                                 const mvmb::AtomicMeasure& m,
                                                 const mvmb::Payoff& payoff,
                                                 const std::string& surface_path) {
    if (name == "convex") return std::make_unique<mvmb::ConvexOptimalPolicy>();
    if (name == "random") return std::make_unique<mvmb::RandomPolicy>();
    if (name == "spread") {
        auto ks = spread_strikes(payoff);
        if (!ks || !is_three_point_support(m))
            throw std::invalid_argument(
                "spread policy needs a call_spread payoff on the support {-1, 0, 1}");
        return std::make_unique<mvmb::SpreadOptimalPolicy>(m.weight(1), m.weight(2), ks->first,
                                                           ks->second);
    }
    if (name == "from-surface") {
        if (surface_path.empty())
            throw std::invalid_argument("--policy from-surface needs --surface FILE");
        auto stored =
            mvmb::surface_policy_from_json(mvmb::json::parse(mvmb::read_file(surface_path)));
        return std::make_unique<mvmb::SurfacePolicy>(stored.k, stored.n_simplex, stored.tags,
                                                     stored.support.size());
    }
    throw std::invalid_argument("unknown policy '" + name + "'");
}

int cmd_calibrate(const std::string& calls_path, const std::string& out_path,
                  const std::string& out_dir) {
    auto curve = mvmb::load_call_curve(calls_path);
    auto measure = mvmb::calibrate_from_calls(curve);
    const auto j = mvmb::measure_to_json(measure);
    mvmb::write_file(out_path, j.dump(2) + "\n");
    write_manifest(out_dir, "calibrate",
                   mvmb::json{{"calls", calls_path}, {"out", out_path}}, {calls_path});
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_price(const CommonSolveArgs& args, const std::string& save_surface,
              const std::string& out_dir) {
    auto bundle = prepare_solve(args);
    auto vs = mvmb::solve(bundle.measure.atoms(), bundle.measure.weights(), bundle.payoff,
                          bundle.cfg);
    const double value = vs.query(0.0, 0.0, bundle.measure.weights());
    auto policy = mvmb::extract_policy(vs);
    mvmb::json out{{"value", value},
                   {"tolerance", vs.tolerance()},
                   {"policy_summary",
                    {{"wait", policy.count(mvmb::NodeAction::Wait)},
                     {"diffuse", policy.count(mvmb::NodeAction::Diffuse)}}},
                   {"warnings", vs.warnings()}};
    if (!save_surface.empty())
        mvmb::write_file(save_surface, mvmb::surface_policy_to_json(vs).dump() + "\n");
    write_manifest(out_dir, "price", config_json(args),
                   {args.measure_path, args.payoff_path, args.weight_path});
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_surface(const CommonSolveArgs& args, const std::string& out_csv,
                const std::string& out_dir) {
    auto bundle = prepare_solve(args);
    if (bundle.measure.size() != 3)
        throw std::invalid_argument("surface: needs a 3-atom support (beta,gamma chart)");
    auto vs = mvmb::solve(bundle.measure.atoms(), bundle.measure.weights(), bundle.payoff,
                          bundle.cfg);
    std::ostringstream csv;
    csv << "beta,gamma,value\n";
    csv.precision(17);
    const auto& row0 = vs.row(0);
    const std::size_t nn = vs.grid().node_count();
    int j0 = 0;
    for (int j = 0; j <= vs.n_avg(); ++j)
        if (vs.a_node(j) == 0.0) j0 = j;
    for (std::size_t id = 0; id < nn; ++id) {
        double chart[2];
        vs.grid().chart(id, chart);
        csv << chart[0] << "," << chart[1] << ","
            << row0[static_cast<std::size_t>(j0) * nn + id] << "\n";
    }
    mvmb::write_file(out_csv, csv.str());
    write_manifest(out_dir, "surface", config_json(args),
                   {args.measure_path, args.payoff_path, args.weight_path});
    std::cout << "wrote " << nn << " rows to " << out_csv << "\n";
    return 0;
}

int cmd_oracle(double t, double a, double beta, double gamma, double k1, double k2,
               double horizon, const std::string& out_dir) {
    mvmb::SpreadState s;
    s.t = t;
    s.a = a;
    s.beta = beta;
    s.gamma = gamma;
    s.k1 = k1;
    s.k2 = k2;
    s.horizon = horizon;
    mvmb::json out;
    out["value"] = mvmb::spread_value(s);
    out["region"] = t == horizon ? "terminal" : mvmb::region_name(mvmb::classify_region(s));
    try {
        out["drift_residual"] = mvmb::spread_drift_residual(s);
    } catch (const std::invalid_argument&) {
        out["drift_residual"] = nullptr;  // boundary or terminal state
    }
    write_manifest(out_dir, "oracle",
                   mvmb::json{{"t", t},
                              {"a", a},
                              {"beta", beta},
                              {"gamma", gamma},
                              {"k1", k1},
                              {"k2", k2},
                              {"horizon", horizon}},
                   {});
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_simulate(const CommonSolveArgs& args, const std::string& policy_name,
                 const std::string& surface_path, std::size_t paths, double dt, uint64_t seed,
                 const std::string& dump_path, bool check, const std::string& out_dir) {
    auto measure = mvmb::load_measure(args.measure_path, args.allow_negative);
    auto payoff = mvmb::load_payoff(args.payoff_path);
    auto policy = make_policy(policy_name, measure, payoff, surface_path);
    mvmb::SimulateOptions opts;
    opts.threads = args.threads;
    if (!dump_path.empty()) {
        opts.dump_paths = static_cast<int>(std::min<std::size_t>(paths, 16));
        opts.dump_stride = 10;
    }
    auto ens = mvmb::simulate(measure, *policy, payoff, args.horizon, paths, dt, seed, opts);
    mvmb::json out{{"policy", ens.policy_name},
                   {"n_paths", ens.n_paths},
                   {"seed", ens.seed},
                   {"mean_payoff", ens.mean_payoff},
                   {"se_payoff", ens.se_payoff},
                   {"mean_terminal_average", ens.mean_a},
                   {"se_terminal_average", ens.se_a},
                   {"excluded_paths", ens.excluded},
                   {"terminated_fraction", ens.terminated_fraction}};
    if (check) {
        auto rep = mvmb::check_mvm_properties(ens, measure);
        out["checks"] = mvmb::json{{"weight_martingale", rep.weight_martingale},
                                   {"terminal_law", rep.terminal_law},
                                   {"y_martingale", rep.y_martingale},
                                   {"termination", rep.termination},
                                   {"terminal_w1", rep.terminal_w1},
                                   {"pass", rep.pass()}};
    }
    if (!dump_path.empty()) {
        std::ostringstream csv;
        csv << "path_id,t,S,A\n";
        csv.precision(12);
        for (const auto& row : ens.dump)
            csv << static_cast<long>(row[0]) << "," << row[1] << "," << row[2] << "," << row[3]
                << "\n";
        mvmb::write_file(dump_path, csv.str());
    }
    auto config = config_json(args);
    config["policy"] = policy_name;
    config["paths"] = paths;
    config["dt"] = dt;
    write_manifest(out_dir, "simulate", config,
                   {args.measure_path, args.payoff_path, surface_path}, seed);
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_compare(const CommonSolveArgs& args, std::size_t paths, double dt, uint64_t seed,
                const std::string& out_dir) {
    auto bundle = prepare_solve(args);
    const auto& m = bundle.measure;
    auto vs = mvmb::solve(m.atoms(), m.weights(), bundle.payoff, bundle.cfg);
    const double v_solver = vs.query(0.0, 0.0, m.weights());

    std::optional<double> v_oracle;
    std::unique_ptr<mvmb::ControlPolicy> policy;
    auto ks = spread_strikes(bundle.payoff);
    if (bundle.payoff.is_convex()) {
        v_oracle = mvmb::convex_value(m, 0.0, 0.0, bundle.payoff, args.horizon);
        policy = std::make_unique<mvmb::ConvexOptimalPolicy>();
    } else if (ks && is_three_point_support(m)) {
        mvmb::SpreadState s;
        s.beta = m.weight(1);
        s.gamma = m.weight(2);
        s.k1 = ks->first;
        s.k2 = ks->second;
        s.horizon = args.horizon;
        v_oracle = mvmb::spread_value(s);
        policy = std::make_unique<mvmb::SpreadOptimalPolicy>(s.beta, s.gamma, s.k1, s.k2);
    } else {
        policy = std::make_unique<mvmb::SurfacePolicy>(mvmb::SurfacePolicy::from(vs));
    }
    auto ens = mvmb::simulate(m, *policy, bundle.payoff, args.horizon, paths, dt, seed);

    struct Row {
        std::string name;
        double lhs, rhs, tol;
        bool pass;
    };
    std::vector<Row> rows;
    if (v_oracle) {
        rows.push_back({"solver_vs_oracle", v_solver, *v_oracle, vs.tolerance(),
                        std::abs(v_solver - *v_oracle) <= vs.tolerance()});
        rows.push_back({"mc_vs_oracle", ens.mean_payoff, *v_oracle, 3.0 * ens.se_payoff + 1e-9,
                        std::abs(ens.mean_payoff - *v_oracle) <= 3.0 * ens.se_payoff + 1e-9});
    }
    rows.push_back({"mc_vs_solver", ens.mean_payoff, v_solver,
                    3.0 * ens.se_payoff + vs.tolerance(),
                    std::abs(ens.mean_payoff - v_solver) <= 3.0 * ens.se_payoff + vs.tolerance()});

    bool all_pass = true;
    std::printf("%-18s %14s %14s %12s %6s\n", "check", "lhs", "rhs", "tolerance", "ok");
    mvmb::json jrows = mvmb::json::array();
    for (const auto& r : rows) {
        std::printf("%-18s %14.8f %14.8f %12.3e %6s\n", r.name.c_str(), r.lhs, r.rhs, r.tol,
                    r.pass ? "PASS" : "FAIL");
        jrows.push_back(mvmb::json{{"check", r.name},
                                   {"lhs", r.lhs},
                                   {"rhs", r.rhs},
                                   {"tolerance", r.tol},
                                   {"pass", r.pass}});
        all_pass = all_pass && r.pass;
    }
    auto config = config_json(args);
    config["paths"] = paths;
    config["dt"] = dt;
    write_manifest(out_dir, "compare", config,
                   {args.measure_path, args.payoff_path, args.weight_path}, seed);
    mvmb::write_file(out_dir + "/compare_result.json",
                     mvmb::json{{"rows", jrows}, {"pass", all_pass}}.dump(2) + "\n");
    if (!all_pass) {
        for (const auto& r : rows)
            if (!r.pass) std::fprintf(stderr, "reconciliation failed: %s\n", r.name.c_str());
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"model-independent average-price bounds on atomic supports"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    std::string out_dir = ".";
    auto add_outdir = [&out_dir](CLI::App* cmd) {
        cmd->add_option("--out-dir", out_dir, "directory for manifests and artifacts")
            ->capture_default_str();
    };

    // calibrate
    auto* cal = app.add_subcommand("calibrate", "terminal law from call quotes");
    add_outdir(cal);
    std::string calls_path, cal_out = "measure.json";
    cal->add_option("--calls", calls_path, "CSV with header strike,price")->required();
    cal->add_option("--out", cal_out, "output measure JSON")->capture_default_str();

    // price
    auto* price = app.add_subcommand("price", "upper price bound via the grid solver");
    add_outdir(price);
    CommonSolveArgs price_args;
    add_solve_options(price, price_args);
    std::string save_surface;
    price->add_option("--save-surface", save_surface, "write the start policy surface JSON");

    // surface
    auto* surf = app.add_subcommand("surface", "value over the weight simplex at t=0 as CSV");
    add_outdir(surf);
    CommonSolveArgs surf_args;
    add_solve_options(surf, surf_args);
    std::string surf_out = "surface.csv";
    surf->add_option("--out", surf_out, "output CSV path")->capture_default_str();

    // oracle
    auto* orc = app.add_subcommand("oracle", "closed-form call-spread bound on {-1,0,1}");
    add_outdir(orc);
    double o_t = 0.0, o_a = 0.0, o_beta = 0.0, o_gamma = 0.0, o_k1 = -0.1, o_k2 = 0.5,
           o_h = 1.0;
    orc->add_option("--t", o_t)->capture_default_str();
    orc->add_option("--a", o_a)->capture_default_str();
    orc->add_option("--beta", o_beta)->required();
    orc->add_option("--gamma", o_gamma)->required();
    orc->add_option("--k1", o_k1)->capture_default_str();
    orc->add_option("--k2", o_k2)->capture_default_str();
    orc->add_option("--horizon", o_h)->capture_default_str();

    // simulate
    auto* sim = app.add_subcommand("simulate", "Monte Carlo of controlled weight processes");
    add_outdir(sim);
    CommonSolveArgs sim_args;
    sim->add_option("--measure", sim_args.measure_path, "terminal law JSON")->required();
    sim->add_option("--payoff", sim_args.payoff_path, "payoff JSON")->required();
    sim->add_option("--horizon", sim_args.horizon)->capture_default_str();
    sim->add_flag("--allow-negative", sim_args.allow_negative);
    sim->add_option("--threads", sim_args.threads);
    std::string sim_policy = "convex", sim_surface, sim_dump;
    std::size_t sim_paths = 10000;
    double sim_dt = 1e-3;
    uint64_t sim_seed = 1;
    bool sim_check = false;
    sim->add_option("--policy", sim_policy, "convex|spread|random|from-surface")
        ->capture_default_str();
    sim->add_option("--surface", sim_surface, "policy surface JSON for from-surface");
    sim->add_option("--paths", sim_paths)->capture_default_str();
    sim->add_option("--dt", sim_dt)->capture_default_str();
    sim->add_option("--seed", sim_seed)->capture_default_str();
    sim->add_option("--dump-paths", sim_dump, "CSV path for sampled paths");
    sim->add_flag("--check-mvm", sim_check, "include the martingale property report");

    // compare
    auto* cmp = app.add_subcommand("compare",
                                   "three-way reconciliation: solver / closed form / Monte Carlo");
    add_outdir(cmp);
    CommonSolveArgs cmp_args;
    add_solve_options(cmp, cmp_args);
    std::size_t cmp_paths = 20000;
    double cmp_dt = 1e-3;
    uint64_t cmp_seed = 1;
    cmp->add_option("--paths", cmp_paths)->capture_default_str();
    cmp->add_option("--dt", cmp_dt)->capture_default_str();
    cmp->add_option("--seed", cmp_seed)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (cal->parsed()) return cmd_calibrate(calls_path, cal_out, out_dir);
        if (price->parsed()) return cmd_price(price_args, save_surface, out_dir);
        if (surf->parsed()) return cmd_surface(surf_args, surf_out, out_dir);
        if (orc->parsed()) return cmd_oracle(o_t, o_a, o_beta, o_gamma, o_k1, o_k2, o_h, out_dir);
        if (sim->parsed())
            return cmd_simulate(sim_args, sim_policy, sim_surface, sim_paths, sim_dt, sim_seed,
                                sim_dump, sim_check, out_dir);
        if (cmp->parsed()) return cmd_compare(cmp_args, cmp_paths, cmp_dt, cmp_seed, out_dir);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
