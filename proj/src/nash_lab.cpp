#include "mfg/nash_lab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mfg/parallel.hpp"
#include "mfg/rng.hpp"

namespace mfg {

namespace {

double sup_gap_sq(const MeanPath& a, const MeanPath& b) {
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k)
        worst = std::max(worst, (a[k] - b[k]).squaredNorm());
    return worst;
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double standard_error(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / (static_cast<double>(v.size()) - 1.0) /
                     static_cast<double>(v.size()));
}

}  // namespace

GapTable gap_statistics(const ModelSpec& model, const ScenarioTree& tree, const CcSolution& cc,
                        const std::vector<int>& agent_grid, int replications, std::uint64_t seed,
                        int threads) {
    if (agent_grid.empty()) throw std::invalid_argument("gap_statistics: empty agent grid");
    if (replications < 1) throw std::invalid_argument("gap_statistics: replications must be >= 1");
    std::vector<int> grid = agent_grid;
    std::sort(grid.begin(), grid.end());

    PopulationEvaluator eval(model, tree, cc);
    GapTable table;
    table.limit_cost = limiting_cost(model, tree, cc.state_x, cc.state_y, cc.control, cc.mean_x,
                                     cc.mean_y);

    const int steps = tree.steps();
    for (int num_agents : grid) {
        std::vector<double> gx(static_cast<std::size_t>(replications));
        std::vector<double> gy(static_cast<std::size_t>(replications));
        std::vector<std::vector<double>> agent_x(static_cast<std::size_t>(replications));
        std::vector<std::vector<double>> agent_y(static_cast<std::size_t>(replications));
        std::vector<std::vector<double>> costs(static_cast<std::size_t>(replications));

        parallel_for(replications, threads, [&](int r) {
            const std::uint64_t rep_seed =
                derive_seed(seed, static_cast<std::uint64_t>(num_agents), static_cast<std::uint64_t>(r));
            const PopulationRun run = simulate_population(model, tree, cc, num_agents, rep_seed);
            const auto ctx = eval.evaluate_aggregate(run);
            gx[static_cast<std::size_t>(r)] = sup_gap_sq(run.aggregate_x, cc.mean_x);
            gy[static_cast<std::size_t>(r)] = sup_gap_sq(ctx.aggregate_y, cc.mean_y);

            auto& ax = agent_x[static_cast<std::size_t>(r)];
            auto& ay = agent_y[static_cast<std::size_t>(r)];
            auto& cr = costs[static_cast<std::size_t>(r)];
            ax.resize(static_cast<std::size_t>(num_agents));
            ay.resize(static_cast<std::size_t>(num_agents));
            cr.resize(static_cast<std::size_t>(num_agents));
            for (int i = 0; i < num_agents; ++i) {
                double sup_x = 0.0;
                for (int k = 0; k <= steps; ++k) {
                    const std::int64_t node =
                        run.paths[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
                    sup_x = std::max(sup_x, (run.states[static_cast<std::size_t>(k)].col(i) -
                                             cc.state_x.value(k, node))
                                                .squaredNorm());
                }
                ax[static_cast<std::size_t>(i)] = sup_x;
                const auto y_i = eval.evaluate_individual(run, ctx, i);
                double sup_y = 0.0;
                for (int k = 0; k <= steps; ++k) {
                    const std::int64_t node =
                        run.paths[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
                    sup_y = std::max(sup_y, (y_i[static_cast<std::size_t>(k)] -
                                             cc.state_y.value(k, node))
                                                .squaredNorm());
                }
                ay[static_cast<std::size_t>(i)] = sup_y;
                cr[static_cast<std::size_t>(i)] = eval.realized_cost(run, ctx, i).total;
            }
        });

        GapRow row;
        row.num_agents = num_agents;
        row.replications = replications;
        row.gap_x_avg = mean_of(gx);
        row.gap_y_avg = mean_of(gy);
        for (int i = 0; i < num_agents; ++i) {
            double mx = 0.0, my = 0.0;
            for (int r = 0; r < replications; ++r) {
                mx += agent_x[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)];
                my += agent_y[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)];
            }
            row.gap_x_indiv = std::max(row.gap_x_indiv, mx / replications);
            row.gap_y_indiv = std::max(row.gap_y_indiv, my / replications);
        }

        // batch means over (replications in batch) x (all agents)
        const int batches = std::clamp(replications / 4, 1, 16);
        double gap_acc = 0.0;
        for (int b = 0; b < batches; ++b) {
            const int lo = b * replications / batches;
            const int hi = (b + 1) * replications / batches;
            double sum = 0.0;
            std::int64_t count = 0;
            for (int r = lo; r < hi; ++r) {
                for (double c : costs[static_cast<std::size_t>(r)]) sum += c;
                count += num_agents;
            }
            gap_acc += std::abs(sum / static_cast<double>(count) - table.limit_cost);
        }
        row.cost_gap = gap_acc / batches;
        table.rows.push_back(row);
    }
    return table;
}

RateFit rate_fit(const std::vector<std::pair<double, double>>& rows) {
    std::vector<std::pair<double, double>> logs;
    int excluded = 0;
    for (const auto& [n, v] : rows) {
        if (v > 0.0 && n > 0.0)
            logs.emplace_back(std::log(n), std::log(v));
        else
            ++excluded;
    }
    if (logs.size() < 3)
        throw std::invalid_argument("rate_fit: need at least 3 positive rows");
    const double count = static_cast<double>(logs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (const auto& [x, y] : logs) {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    const double var_x = sxx - sx * sx / count;
    const double cov = sxy - sx * sy / count;
    const double var_y = syy - sy * sy / count;
    if (var_x <= 0.0) throw std::invalid_argument("rate_fit: degenerate abscissae");

    RateFit fit;
    fit.slope = cov / var_x;
    fit.intercept = (sy - fit.slope * sx) / count;
    fit.r_squared = var_y > 0.0 ? (cov * cov) / (var_x * var_y) : 1.0;
    fit.rows_used = static_cast<int>(logs.size());
    if (excluded > 0)
        fit.note = std::to_string(excluded) + " nonpositive row(s) excluded from log-log fit";
    return fit;
}

std::string CandidateFamily::describe() const {
    std::ostringstream os;
    os << "candidates:";
    if (include_empirical_response) os << " empirical-mean-response;";
    if (!scales.empty()) {
        os << " scaled-equilibrium {";
        for (std::size_t i = 0; i < scales.size(); ++i) os << (i ? "," : "") << scales[i];
        os << "};";
    }
    if (random_count > 0)
        os << " " << random_count << " random constant(s) magnitude " << random_magnitude;
    return os.str();
}

namespace {

struct Candidate {
    std::string name;
    TreeProcess control;
};

std::vector<Candidate> build_candidates(const ModelSpec& model, const ScenarioTree& tree,
                                        const CcSolution& cc, const CandidateFamily& family,
                                        const MeanPath& emp_x, const MeanPath& emp_y,
                                        std::uint64_t seed) {
    std::vector<Candidate> out;
    const int steps = tree.steps();
    const int m = model.control_dim;

    if (family.include_empirical_response) {
        const CcSolution response = solve_auxiliary(model, tree, emp_x, emp_y, family.solve_opts);
        out.push_back({"empirical-response", response.control});
    }
    for (double scale : family.scales) {
        TreeProcess scaled(m, steps);
        for (int k = 0; k < steps; ++k) {
            const CoefficientSlice s = coeff_at(model, tree.time_at(k));
            for (std::int64_t j = 0; j < tree.nodes_at(k); ++j)
                scaled.at(k).col(j) =
                    project(model.control_set, s.R, scale * cc.control.at(k).col(j)).point;
        }
        std::ostringstream name;
        name << "scaled-" << scale;
        out.push_back({name.str(), std::move(scaled)});
    }
    const CoefficientSlice s0 = coeff_at(model, 0.0);
    for (int c = 0; c < family.random_count; ++c) {
        Rng rng = make_rng(derive_seed(seed, 0xCA4DULL, static_cast<std::uint64_t>(c)));
        Eigen::VectorXd g(m);
        for (int i = 0; i < m; ++i) g[i] = family.random_magnitude * normal(rng);
        const Eigen::VectorXd point = project(model.control_set, s0.R, g).point;
        out.push_back({"random-constant-" + std::to_string(c),
                       TreeProcess::constant(point, steps)});
    }
    if (out.empty()) throw std::invalid_argument("best_response_gain: empty candidate family");

    // admissibility: every candidate stays in the control set at every node
    for (const auto& cand : out)
        for (int k = 0; k < steps; ++k)
            for (std::int64_t j = 0; j < tree.nodes_at(k); ++j)
                if (!model.control_set.contains(cand.control.at(k).col(j), 1e-12))
                    throw std::logic_error("best_response_gain: inadmissible candidate control");
    return out;
}

}  // namespace

namespace {

/// Expected cost of agent 0 given the other agents' paths: exact average
/// over agent 0's 2^steps own paths, each of probability 2^-steps. The rest
/// of the population is re-simulated per path because the coupling runs
/// through the realized state-average. Integrating the own noise exactly
/// removes the dominant Monte Carlo term from the paired cost differences.
double agent0_expected_cost(const ModelSpec& model, const ScenarioTree& tree,
                            const CcSolution& cc, const PopulationEvaluator& eval,
                            const std::vector<std::vector<std::int64_t>>& paths,
                            const std::vector<std::vector<Eigen::VectorXd>>& others_sum,
                            std::uint64_t run_seed, const TreeProcess* agent0_control) {
    const int steps = tree.steps();
    const std::int64_t leaves = std::int64_t{1} << steps;
    std::vector<std::vector<std::int64_t>> working = paths;
    double acc = 0.0;
    for (std::int64_t leaf = 0; leaf < leaves; ++leaf) {
        for (int k = 0; k <= steps; ++k) working[0][static_cast<std::size_t>(k)] = leaf >> (steps - k);
        const PopulationRun run =
            simulate_population_paths(model, tree, cc, working, run_seed, agent0_control);
        const auto ctx = eval.evaluate_aggregate_cached(run, others_sum);
        acc += eval.realized_cost(run, ctx, 0).total;
    }
    return acc / static_cast<double>(leaves);
}

}  // namespace

NashRow best_response_gain(const ModelSpec& model, const ScenarioTree& tree,
                           const CcSolution& cc, int num_agents, const CandidateFamily& family,
                           int replications, std::uint64_t seed, int threads) {
    if (replications < 1)
        throw std::invalid_argument("best_response_gain: replications must be >= 1");

    const int steps = tree.steps();
    PopulationEvaluator base_eval(model, tree, cc);
    std::vector<double> base_cost(static_cast<std::size_t>(replications));
    std::vector<MeanPath> agg_x(static_cast<std::size_t>(replications));
    std::vector<MeanPath> agg_y(static_cast<std::size_t>(replications));
    std::vector<std::vector<std::vector<std::int64_t>>> rep_paths(
        static_cast<std::size_t>(replications));
    std::vector<std::vector<std::vector<Eigen::VectorXd>>> rep_others(
        static_cast<std::size_t>(replications));

    parallel_for(replications, threads, [&](int r) {
        const std::uint64_t rep_seed =
            derive_seed(seed, static_cast<std::uint64_t>(num_agents), static_cast<std::uint64_t>(r));
        std::vector<std::vector<std::int64_t>> paths(static_cast<std::size_t>(num_agents));
        for (int i = 0; i < num_agents; ++i)
            paths[static_cast<std::size_t>(i)] =
                sample_tree_path(tree, derive_seed(rep_seed, static_cast<std::uint64_t>(i)));
        const PopulationRun run = simulate_population_paths(model, tree, cc, paths, rep_seed);
        const auto ctx = base_eval.evaluate_aggregate(run);
        agg_x[static_cast<std::size_t>(r)] = run.aggregate_x;
        agg_y[static_cast<std::size_t>(r)] = ctx.aggregate_y;
        rep_others[static_cast<std::size_t>(r)] =
            base_eval.sum_control_tables_excluding_agent0(run);
        base_cost[static_cast<std::size_t>(r)] =
            agent0_expected_cost(model, tree, cc, base_eval, paths,
                                 rep_others[static_cast<std::size_t>(r)], rep_seed, nullptr);
        rep_paths[static_cast<std::size_t>(r)] = std::move(paths);
    });

    // empirical population means of the baseline run
    MeanPath emp_x(static_cast<std::size_t>(steps) + 1,
                   Eigen::VectorXd::Zero(model.state_dim));
    MeanPath emp_y(static_cast<std::size_t>(steps) + 1,
                   Eigen::VectorXd::Zero(model.state_dim));
    for (int r = 0; r < replications; ++r) {
        for (int k = 0; k <= steps; ++k) {
            emp_x[static_cast<std::size_t>(k)] += agg_x[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)];
            emp_y[static_cast<std::size_t>(k)] += agg_y[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)];
        }
    }
    for (int k = 0; k <= steps; ++k) {
        emp_x[static_cast<std::size_t>(k)] /= replications;
        emp_y[static_cast<std::size_t>(k)] /= replications;
    }

    const auto candidates = build_candidates(model, tree, cc, family, emp_x, emp_y, seed);

    NashRow row;
    row.num_agents = num_agents;
    row.replications = replications;
    row.cost_equilibrium = mean_of(base_cost);
    double best_diff = -std::numeric_limits<double>::infinity();
    std::vector<double> best_diffs;

    for (const auto& cand : candidates) {
        PopulationEvaluator eval(model, tree, cc, &cand.control);
        std::vector<double> cand_cost(static_cast<std::size_t>(replications));
        parallel_for(replications, threads, [&](int r) {
            // common random numbers: the baseline paths and table sums are
            // reused verbatim (agents 1..N-1 always play the equilibrium)
            const std::uint64_t rep_seed =
                derive_seed(seed, static_cast<std::uint64_t>(num_agents), static_cast<std::uint64_t>(r));
            cand_cost[static_cast<std::size_t>(r)] = agent0_expected_cost(
                model, tree, cc, eval, rep_paths[static_cast<std::size_t>(r)],
                rep_others[static_cast<std::size_t>(r)], rep_seed, &cand.control);
        });
        const double cand_mean = mean_of(cand_cost);
        const double diff = row.cost_equilibrium - cand_mean;
        if (diff > best_diff) {
            best_diff = diff;
            row.best_cost = cand_mean;
            row.best_candidate = cand.name;
            best_diffs.resize(static_cast<std::size_t>(replications));
            for (int r = 0; r < replications; ++r)
                best_diffs[static_cast<std::size_t>(r)] =
                    base_cost[static_cast<std::size_t>(r)] - cand_cost[static_cast<std::size_t>(r)];
        }
    }
    row.eps_hat = std::max(0.0, best_diff);
    row.std_error = standard_error(best_diffs);
    return row;
}

NashReport nash_report(const ModelSpec& model, const ScenarioTree& tree, const CcSolution& cc,
                       const std::vector<int>& agent_grid, const CandidateFamily& family,
                       int replications, std::uint64_t seed, int threads) {
    if (agent_grid.empty()) throw std::invalid_argument("nash_report: empty agent grid");
    std::vector<int> grid = agent_grid;
    std::sort(grid.begin(), grid.end());
    NashReport report;
    report.candidate_family = family.describe();
    for (int n : grid)
        report.rows.push_back(
            best_response_gain(model, tree, cc, n, family, replications, seed, threads));
    return report;
}

}  // namespace mfg
