// mfglab command-line driver: validate | solve-cc | oracle-check | simulate | nash-rates
//
// Exit codes: 0 success, 1 validation failure, 2 IO/config error,
// 3 solver divergence, 4 acceptance failure (gated checks).

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <string>
#include <thread>
#include <vector>

#include "mfg/artifacts.hpp"
#include "mfg/cc_solver.hpp"
#include "mfg/model_io.hpp"
#include "mfg/nash_lab.hpp"
#include "mfg/population.hpp"
#include "mfg/rate_gates.hpp"
#include "mfg/rng.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitAcceptance = 4;

struct CliConfig {
    std::string model_path;
    std::string out_dir = "out";
    std::string mode = "strict";
    std::string solver_mode = "auto";
    int depth = 6;
    double tol = 1e-10;
    int max_iters = 500;
    double damping = 1.0;
    int continuation_steps = 10;
    bool permissive = false;
    int agents = 64;
    int replications = 64;
    std::string agent_grid = "8,16,32,64,128,256,512,1024";
    std::uint64_t seed = 1;
    double oracle_threshold = 1e-7;
    bool gate = false;
    bool dump_processes = false;
    int threads = 0;
};

std::vector<int> parse_grid(const std::string& text) {
    std::vector<int> grid;
    std::string token;
    for (char c : text + ",") {
        if (c == ',') {
            if (!token.empty()) grid.push_back(std::stoi(token));
            token.clear();
        } else {
            token += c;
        }
    }
    return grid;
}

int effective_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

mfg::SolveMode parse_solver_mode(const std::string& text) {
    if (text == "auto") return mfg::SolveMode::Auto;
    if (text == "picard") return mfg::SolveMode::PicardOnly;
    if (text == "continuation") return mfg::SolveMode::Continuation;
    throw std::invalid_argument("unknown solver mode: " + text);
}

mfg::SolveOptions solve_options(const CliConfig& cfg) {
    mfg::SolveOptions opts;
    opts.picard_tol = cfg.tol;
    opts.max_iters = cfg.max_iters;
    opts.damping = cfg.damping;
    opts.continuation_steps = cfg.continuation_steps;
    opts.mode = parse_solver_mode(cfg.solver_mode);
    opts.allow_permissive = cfg.permissive;
    return opts;
}

nlohmann::json config_to_json(const CliConfig& cfg) {
    nlohmann::json j;
    j["model"] = cfg.model_path;
    j["out"] = cfg.out_dir;
    j["mode"] = cfg.mode;
    j["solver_mode"] = cfg.solver_mode;
    j["depth"] = cfg.depth;
    j["tol"] = cfg.tol;
    j["max_iters"] = cfg.max_iters;
    j["damping"] = cfg.damping;
    j["continuation_steps"] = cfg.continuation_steps;
    j["permissive"] = cfg.permissive;
    j["agents"] = cfg.agents;
    j["replications"] = cfg.replications;
    j["agent_grid"] = cfg.agent_grid;
    j["seed"] = cfg.seed;
    j["oracle_threshold"] = cfg.oracle_threshold;
    j["threads"] = cfg.threads;
    return j;
}

std::string timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

/// Experiment identity: the config without the output location.
std::string experiment_hash(const CliConfig& cfg) {
    nlohmann::json j = config_to_json(cfg);
    j.erase("out");
    return mfg::config_hash(j);
}

/// Every JSON artifact carries the config identity and the master seed.
nlohmann::json stamped(nlohmann::json doc, const CliConfig& cfg) {
    doc["config_hash"] = experiment_hash(cfg);
    doc["seed"] = cfg.seed;
    return doc;
}

void write_manifest(const CliConfig& cfg, const std::string& subcommand,
                    const std::vector<std::string>& artifacts) {
    nlohmann::json manifest;
    manifest["subcommand"] = subcommand;
    manifest["config"] = config_to_json(cfg);
    manifest["config_hash"] = experiment_hash(cfg);
    manifest["seed"] = cfg.seed;
    manifest["timestamp"] = timestamp_now();
    manifest["artifacts"] = artifacts;
    mfg::write_json_file(cfg.out_dir + "/manifest.json", manifest);
}

void apply_config_file(CliConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    nlohmann::json j;
    in >> j;
    if (j.contains("model")) cfg.model_path = j["model"].get<std::string>();
    if (j.contains("out")) cfg.out_dir = j["out"].get<std::string>();
    if (j.contains("mode")) cfg.mode = j["mode"].get<std::string>();
    if (j.contains("solver_mode")) cfg.solver_mode = j["solver_mode"].get<std::string>();
    if (j.contains("depth")) cfg.depth = j["depth"].get<int>();
    if (j.contains("tol")) cfg.tol = j["tol"].get<double>();
    if (j.contains("max_iters")) cfg.max_iters = j["max_iters"].get<int>();
    if (j.contains("damping")) cfg.damping = j["damping"].get<double>();
    if (j.contains("continuation_steps")) cfg.continuation_steps = j["continuation_steps"].get<int>();
    if (j.contains("permissive")) cfg.permissive = j["permissive"].get<bool>();
    if (j.contains("agents")) cfg.agents = j["agents"].get<int>();
    if (j.contains("replications")) cfg.replications = j["replications"].get<int>();
    if (j.contains("agent_grid")) cfg.agent_grid = j["agent_grid"].get<std::string>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("oracle_threshold")) cfg.oracle_threshold = j["oracle_threshold"].get<double>();
    if (j.contains("threads")) cfg.threads = j["threads"].get<int>();
}

/// Validates per CLI policy; returns true when solving may proceed.
bool report_validation(const mfg::ModelSpec& model, const CliConfig& cfg) {
    const auto strict = mfg::validate(model, mfg::ValidationMode::Strict);
    if (strict.strict_pass) return true;
    if (!cfg.permissive) {
        std::cerr << "model fails strict validation; use --permissive to override:\n"
                  << mfg::validation_report_to_json(strict).dump(2) << "\n";
        return false;
    }
    const auto perm = mfg::validate(model, mfg::ValidationMode::Permissive);
    if (!perm.strict_pass) {
        std::cerr << "model fails permissive validation:\n"
                  << mfg::validation_report_to_json(perm).dump(2) << "\n";
        return false;
    }
    return true;
}

int cmd_validate(const CliConfig& cfg) {
    const mfg::ModelSpec model = mfg::load_model(cfg.model_path);
    const mfg::ValidationMode mode = cfg.mode == "permissive" ? mfg::ValidationMode::Permissive
                                                              : mfg::ValidationMode::Strict;
    const auto report = mfg::validate(model, mode);
    std::filesystem::create_directories(cfg.out_dir);
    mfg::write_json_file(cfg.out_dir + "/validation.json",
                         stamped(mfg::validation_report_to_json(report), cfg));
    write_manifest(cfg, "validate", {"validation.json"});
    std::cout << (report.strict_pass ? "PASS" : "FAIL") << " (" << cfg.mode << " mode, "
              << report.violations.size() << " violation(s))\n";
    return report.strict_pass ? kExitOk : kExitValidation;
}

int cmd_solve_cc(const CliConfig& cfg) {
    const mfg::ModelSpec model = mfg::load_model(cfg.model_path);
    if (!report_validation(model, cfg)) return kExitValidation;
    const mfg::ScenarioTree tree(cfg.depth, model.horizon);
    std::filesystem::create_directories(cfg.out_dir);
    try {
        const mfg::CcSolution sol = mfg::solve_cc(model, tree, solve_options(cfg));
        mfg::write_text_file(cfg.out_dir + "/means.csv", mfg::means_csv(tree, sol));
        mfg::write_text_file(cfg.out_dir + "/strategy.csv", mfg::strategy_csv(tree, sol));
        mfg::write_json_file(cfg.out_dir + "/diagnostics.json",
                             stamped(mfg::diagnostics_to_json(sol.diag), cfg));
        std::vector<std::string> artifacts = {"means.csv", "strategy.csv", "diagnostics.json"};
        if (cfg.dump_processes) {
            const std::pair<const char*, const mfg::TreeProcess*> procs[] = {
                {"x", &sol.state_x}, {"y", &sol.state_y}, {"z", &sol.state_z},
                {"p", &sol.adjoint_p}, {"q", &sol.adjoint_q}, {"k", &sol.adjoint_k}};
            for (const auto& [name, proc] : procs) {
                const std::string file = std::string("process_") + name + ".csv";
                mfg::write_text_file(cfg.out_dir + "/" + file,
                                     mfg::tree_process_csv(*proc, name));
                artifacts.push_back(file);
            }
        }
        write_manifest(cfg, "solve-cc", artifacts);
        std::cout << "converged in " << sol.diag.iterations
                  << " sweep(s), residual " << mfg::format_double(sol.diag.final_residual)
                  << "\n";
        return kExitOk;
    } catch (const mfg::SolveDivergedError& e) {
        mfg::SolveDiagnostics diag;
        diag.residual_history = e.residual_history;
        diag.converged = false;
        diag.final_residual =
            e.residual_history.empty() ? 0.0 : e.residual_history.back();
        mfg::write_json_file(cfg.out_dir + "/diagnostics.json",
                             stamped(mfg::diagnostics_to_json(diag), cfg));
        write_manifest(cfg, "solve-cc", {"diagnostics.json"});
        std::cerr << "solver diverged: " << e.what() << "\n";
        return kExitDiverged;
    }
}

int cmd_oracle_check(const CliConfig& cfg) {
    const mfg::ModelSpec model = mfg::load_model(cfg.model_path);
    if (!report_validation(model, cfg)) return kExitValidation;
    const mfg::ScenarioTree tree(cfg.depth, model.horizon);
    std::filesystem::create_directories(cfg.out_dir);
    try {
        const mfg::CcSolution picard = mfg::solve_cc(model, tree, solve_options(cfg));
        const mfg::CcSolution direct = mfg::solve_cc_direct_linear(model, tree, cfg.permissive);

        auto proc_diff = [&](const mfg::TreeProcess& a, const mfg::TreeProcess& b) {
            double worst = 0.0;
            for (int k = 0; k < a.num_levels(); ++k)
                worst = std::max(worst, (a.at(k) - b.at(k)).cwiseAbs().maxCoeff());
            return worst;
        };
        nlohmann::json diffs;
        diffs["x"] = proc_diff(picard.state_x, direct.state_x);
        diffs["y"] = proc_diff(picard.state_y, direct.state_y);
        diffs["z"] = proc_diff(picard.state_z, direct.state_z);
        diffs["p"] = proc_diff(picard.adjoint_p, direct.adjoint_p);
        diffs["q"] = proc_diff(picard.adjoint_q, direct.adjoint_q);
        diffs["k"] = proc_diff(picard.adjoint_k, direct.adjoint_k);
        diffs["u"] = proc_diff(picard.control, direct.control);
        double max_diff = 0.0;
        for (const auto& [key, value] : diffs.items()) max_diff = std::max(max_diff, value.get<double>());
        diffs["max"] = max_diff;
        diffs["threshold"] = cfg.oracle_threshold;
        diffs["pass"] = max_diff < cfg.oracle_threshold;
        mfg::write_json_file(cfg.out_dir + "/oracle_diff.json", stamped(diffs, cfg));
        write_manifest(cfg, "oracle-check", {"oracle_diff.json"});
        std::cout << "max node-wise |picard - direct| = " << mfg::format_double(max_diff)
                  << (max_diff < cfg.oracle_threshold ? " (pass)" : " (FAIL)") << "\n";
        return max_diff < cfg.oracle_threshold ? kExitOk : kExitAcceptance;
    } catch (const mfg::SolveDivergedError& e) {
        std::cerr << "solver diverged: " << e.what() << "\n";
        return kExitDiverged;
    }
}

int cmd_simulate(const CliConfig& cfg) {
    if (cfg.replications < 1) throw std::invalid_argument("replications must be >= 1");
    if (cfg.agents < 2) throw std::invalid_argument("agents must be >= 2");
    const mfg::ModelSpec model = mfg::load_model(cfg.model_path);
    if (!report_validation(model, cfg)) return kExitValidation;
    const mfg::ScenarioTree tree(cfg.depth, model.horizon);
    std::filesystem::create_directories(cfg.out_dir);
    try {
        const mfg::CcSolution sol = mfg::solve_cc(model, tree, solve_options(cfg));
        mfg::PopulationEvaluator eval(model, tree, sol);
        std::vector<mfg::PopulationRun> runs;
        std::vector<mfg::MeanPath> agg_y;
        std::vector<std::vector<mfg::CostBreakdown>> costs;
        for (int r = 0; r < cfg.replications; ++r) {
            const std::uint64_t rep_seed = mfg::derive_seed(
                cfg.seed, static_cast<std::uint64_t>(cfg.agents), static_cast<std::uint64_t>(r));
            runs.push_back(mfg::simulate_population(model, tree, sol, cfg.agents, rep_seed));
            const auto ctx = eval.evaluate_aggregate(runs.back());
            agg_y.push_back(ctx.aggregate_y);
            std::vector<mfg::CostBreakdown> rep_costs;
            rep_costs.reserve(static_cast<std::size_t>(cfg.agents));
            for (int i = 0; i < cfg.agents; ++i)
                rep_costs.push_back(eval.realized_cost(runs.back(), ctx, i));
            costs.push_back(std::move(rep_costs));
        }
        mfg::write_text_file(cfg.out_dir + "/runs.csv",
                             mfg::population_runs_csv(tree, runs, agg_y));
        mfg::write_text_file(cfg.out_dir + "/costs.csv", mfg::population_costs_csv(costs));
        write_manifest(cfg, "simulate", {"runs.csv", "costs.csv"});
        std::cout << "simulated " << cfg.replications << " replication(s) of " << cfg.agents
                  << " agents\n";
        return kExitOk;
    } catch (const mfg::SolveDivergedError& e) {
        std::cerr << "solver diverged: " << e.what() << "\n";
        return kExitDiverged;
    }
}

int cmd_nash_rates(const CliConfig& cfg) {
    if (cfg.replications < 1) throw std::invalid_argument("replications must be >= 1");
    const std::vector<int> grid = parse_grid(cfg.agent_grid);
    if (grid.empty()) throw std::invalid_argument("agent grid is empty");
    const mfg::ModelSpec model = mfg::load_model(cfg.model_path);
    if (!report_validation(model, cfg)) return kExitValidation;
    const mfg::ScenarioTree tree(cfg.depth, model.horizon);
    std::filesystem::create_directories(cfg.out_dir);
    const int threads = effective_threads(cfg.threads);
    try {
        const mfg::CcSolution sol = mfg::solve_cc(model, tree, solve_options(cfg));
        const mfg::GapTable gaps =
            mfg::gap_statistics(model, tree, sol, grid, cfg.replications, cfg.seed, threads);
        mfg::CandidateFamily family;
        family.solve_opts = solve_options(cfg);
        const mfg::NashReport nash =
            mfg::nash_report(model, tree, sol, grid, family, cfg.replications, cfg.seed, threads);
        const mfg::RateGateReport gates = mfg::evaluate_rate_gates(gaps, nash);

        mfg::write_text_file(cfg.out_dir + "/gaps.csv", mfg::gap_table_csv(gaps));
        mfg::write_text_file(cfg.out_dir + "/nash.csv", mfg::nash_report_csv(nash));
        nlohmann::json summary = mfg::rate_gate_report_to_json(gates);
        summary["limit_cost"] = gaps.limit_cost;
        summary["candidate_family"] = nash.candidate_family;
        mfg::write_json_file(cfg.out_dir + "/summary.json", stamped(summary, cfg));
        write_manifest(cfg, "nash-rates", {"gaps.csv", "nash.csv", "summary.json"});

        std::printf("%8s %14s %14s %14s %14s %12s\n", "N", "gap_x_avg", "gap_y_avg",
                    "cost_gap", "eps_hat", "std_error");
        for (std::size_t i = 0; i < gaps.rows.size(); ++i) {
            const auto& g = gaps.rows[i];
            const auto& n = nash.rows[i];
            std::printf("%8d %14.6e %14.6e %14.6e %14.6e %12.2e\n", g.num_agents, g.gap_x_avg,
                        g.gap_y_avg, g.cost_gap, n.eps_hat, n.std_error);
        }
        std::printf("slopes: gap_x %.3f  gap_y %.3f  gap_x_indiv %.3f  cost %.3f  (all_pass=%s)\n",
                    gates.gap_x_avg.fit.slope, gates.gap_y_avg.fit.slope,
                    gates.gap_x_indiv.fit.slope, gates.cost_gap.fit.slope,
                    gates.all_pass() ? "yes" : "no");
        if (cfg.gate && !gates.all_pass()) return kExitAcceptance;
        return kExitOk;
    } catch (const mfg::SolveDivergedError& e) {
        std::cerr << "solver diverged: " << e.what() << "\n";
        return kExitDiverged;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CliConfig cfg;
    CLI::App app{"mfglab: constrained LQ mean-field game laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    // config file is applied before flag parsing, so flags win
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
    if (!config_path.empty()) {
        try {
            apply_config_file(cfg, config_path);
        } catch (const std::exception& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return kExitConfig;
        }
    }

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file (flags override)");
        sub->add_option("--model", cfg.model_path, "model JSON file");
        sub->add_option("--out", cfg.out_dir, "output directory");
        sub->add_option("--depth", cfg.depth, "tree depth (time steps)");
        sub->add_option("--tol", cfg.tol, "picard tolerance");
        sub->add_option("--max-iters", cfg.max_iters, "picard iteration cap");
        sub->add_option("--damping", cfg.damping, "initial damping factor");
        sub->add_option("--continuation-steps", cfg.continuation_steps, "homotopy steps");
        sub->add_option("--solver-mode", cfg.solver_mode, "auto | picard | continuation");
        sub->add_flag("--permissive", cfg.permissive, "allow permissive-validated models");
        sub->add_option("--seed", cfg.seed, "master seed");
        sub->add_option("--threads", cfg.threads, "worker cap (0 = hardware)");
    };

    CLI::App* validate = app.add_subcommand("validate", "validate a model file");
    add_common(validate);
    validate->add_option("--mode", cfg.mode, "strict | permissive");

    CLI::App* solve = app.add_subcommand("solve-cc", "solve the consistency system");
    add_common(solve);
    solve->add_flag("--dump-processes", cfg.dump_processes,
                    "also write per-node CSVs of all tree processes");

    CLI::App* oracle = app.add_subcommand("oracle-check",
                                          "compare the iterative solve with the direct stacked solve");
    add_common(oracle);
    oracle->add_option("--threshold", cfg.oracle_threshold, "max allowed node-wise difference");

    CLI::App* simulate = app.add_subcommand("simulate", "simulate the N-agent population");
    add_common(simulate);
    simulate->add_option("--agents", cfg.agents, "population size");
    simulate->add_option("--replications", cfg.replications, "replication count");

    CLI::App* nash = app.add_subcommand("nash-rates", "gap statistics and best-response gains");
    add_common(nash);
    nash->add_option("--agent-grid", cfg.agent_grid, "comma-separated population sizes");
    nash->add_option("--replications", cfg.replications, "replication count");
    nash->add_flag("--gate", cfg.gate, "exit 4 when a rate gate fails");

    CLI11_PARSE(app, argc, argv);

    try {
        if (validate->parsed()) return cmd_validate(cfg);
        if (solve->parsed()) return cmd_solve_cc(cfg);
        if (oracle->parsed()) return cmd_oracle_check(cfg);
        if (simulate->parsed()) return cmd_simulate(cfg);
        if (nash->parsed()) return cmd_nash_rates(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}
