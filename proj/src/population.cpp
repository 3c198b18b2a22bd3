#include "mfg/population.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mfg/rng.hpp"

namespace mfg {

namespace {

void sort_and_sum(std::vector<double>& buf, double& out) {
    std::sort(buf.begin(), buf.end());
    double s = 0.0;
    for (double v : buf) s += v;
    out = s;
}

}  // namespace

Eigen::VectorXd permutation_invariant_mean(const Eigen::MatrixXd& agent_values) {
    const Eigen::Index dim = agent_values.rows();
    const Eigen::Index count = agent_values.cols();
    Eigen::VectorXd mean(dim);
    std::vector<double> buf(static_cast<std::size_t>(count));
    for (Eigen::Index c = 0; c < dim; ++c) {
        for (Eigen::Index i = 0; i < count; ++i) buf[static_cast<std::size_t>(i)] = agent_values(c, i);
        double s = 0.0;
        sort_and_sum(buf, s);
        mean[c] = s / static_cast<double>(count);
    }
    return mean;
}

std::vector<std::int64_t> sample_tree_path(const ScenarioTree& tree, std::uint64_t agent_seed) {
    std::vector<std::int64_t> path(static_cast<std::size_t>(tree.steps()) + 1, 0);
    Rng rng = make_rng(agent_seed);
    for (int k = 0; k < tree.steps(); ++k) {
        const bool down = flip(rng);
        path[static_cast<std::size_t>(k) + 1] =
            down ? ScenarioTree::child_down(path[static_cast<std::size_t>(k)])
                 : ScenarioTree::child_up(path[static_cast<std::size_t>(k)]);
    }
    return path;
}

PopulationRun simulate_population_seeded(const ModelSpec& model, const ScenarioTree& tree,
                                         const CcSolution& cc,
                                         const std::vector<std::uint64_t>& agent_seeds,
                                         std::uint64_t run_seed,
                                         const TreeProcess* agent0_control) {
    std::vector<std::vector<std::int64_t>> paths;
    paths.reserve(agent_seeds.size());
    for (std::uint64_t s : agent_seeds) paths.push_back(sample_tree_path(tree, s));
    return simulate_population_paths(model, tree, cc, std::move(paths), run_seed, agent0_control);
}

PopulationRun simulate_population_paths(const ModelSpec& model, const ScenarioTree& tree,
                                        const CcSolution& cc,
                                        std::vector<std::vector<std::int64_t>> paths,
                                        std::uint64_t run_seed,
                                        const TreeProcess* agent0_control) {
    const int num_agents = static_cast<int>(paths.size());
    if (num_agents < 2)
        throw std::invalid_argument("simulate_population: need at least 2 agents");
    if (!cc.diag.converged)
        throw std::invalid_argument("simulate_population: consistency solution not converged");
    const int n = model.state_dim;
    const int steps = tree.steps();
    const double dt = tree.dt();
    const double sdt = tree.sqrt_dt();
    for (const auto& path : paths) {
        if (static_cast<int>(path.size()) != steps + 1 || path[0] != 0)
            throw std::invalid_argument("simulate_population: malformed agent path");
        for (int k = 0; k < steps; ++k)
            if (ScenarioTree::parent(path[static_cast<std::size_t>(k) + 1]) !=
                path[static_cast<std::size_t>(k)])
                throw std::invalid_argument("simulate_population: path breaks parent-child links");
    }

    PopulationRun run;
    run.num_agents = num_agents;
    run.seed = run_seed;
    run.paths = std::move(paths);

    run.states.assign(static_cast<std::size_t>(steps) + 1, Eigen::MatrixXd::Zero(n, num_agents));
    run.states[0].colwise() = model.x0;
    run.aggregate_x.assign(static_cast<std::size_t>(steps) + 1, Eigen::VectorXd::Zero(n));
    run.aggregate_x[0] = permutation_invariant_mean(run.states[0]);

    for (int k = 0; k < steps; ++k) {
        const CoefficientSlice s = coeff_at(model, tree.time_at(k));
        const Eigen::VectorXd& avg = run.aggregate_x[static_cast<std::size_t>(k)];
        for (int i = 0; i < num_agents; ++i) {
            const TreeProcess& ctl =
                (i == 0 && agent0_control != nullptr) ? *agent0_control : cc.control;
            const std::int64_t node = run.paths[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
            const std::int64_t child = run.paths[static_cast<std::size_t>(i)][static_cast<std::size_t>(k) + 1];
            const double sign = ScenarioTree::branch_sign(child);
            const Eigen::VectorXd u = ctl.at(k).col(node);
            const Eigen::VectorXd xi = run.states[static_cast<std::size_t>(k)].col(i);
            run.states[static_cast<std::size_t>(k) + 1].col(i) =
                xi + dt * (s.A * xi + s.B * u + s.F * avg + s.b) + sign * sdt * (s.D * u + s.sigma);
        }
        run.aggregate_x[static_cast<std::size_t>(k) + 1] =
            permutation_invariant_mean(run.states[static_cast<std::size_t>(k) + 1]);
    }
    return run;
}

PopulationRun simulate_population(const ModelSpec& model, const ScenarioTree& tree,
                                  const CcSolution& cc, int num_agents, std::uint64_t seed,
                                  const TreeProcess* agent0_control) {
    if (num_agents < 2)
        throw std::invalid_argument("simulate_population: need at least 2 agents");
    std::vector<std::uint64_t> agent_seeds(static_cast<std::size_t>(num_agents));
    for (int i = 0; i < num_agents; ++i)
        agent_seeds[static_cast<std::size_t>(i)] = derive_seed(seed, static_cast<std::uint64_t>(i));
    return simulate_population_seeded(model, tree, cc, agent_seeds, seed, agent0_control);
}

PopulationEvaluator::PopulationEvaluator(const ModelSpec& model, const ScenarioTree& tree,
                                         const CcSolution& cc,
                                         const TreeProcess* agent0_control)
    : model_(model),
      tree_(tree),
      cc_(cc),
      agent0_control_(agent0_control),
      shared_table_(cc.control) {
    if (!cc.diag.converged)
        throw std::invalid_argument("PopulationEvaluator: consistency solution not converged");
    if (model.state_dim > 2 || model.control_dim > 2)
        throw std::invalid_argument(
            "PopulationEvaluator: backward evaluation supports n <= 2, m <= 2");
    if (agent0_control_ != nullptr) override_table_.emplace_back(*agent0_control_);

    const int steps = tree.steps();
    const int n = model.state_dim;
    slices_.reserve(static_cast<std::size_t>(steps));
    flow_agg_.reserve(static_cast<std::size_t>(steps));
    flow_ind_.reserve(static_cast<std::size_t>(steps));
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
    for (int k = 0; k < steps; ++k) {
        slices_.push_back(coeff_at(model, tree.time_at(k)));
        const CoefficientSlice& s = slices_.back();
        flow_agg_.push_back((eye - tree.dt() * (s.U_coef + s.V)).partialPivLu().inverse());
        flow_ind_.push_back((eye - tree.dt() * s.U_coef).partialPivLu().inverse());
    }
    // Gamma(k, s) = S_k ... S_{s-1}, Gamma(k, k) = I
    gamma_agg_.resize(static_cast<std::size_t>(steps) + 1);
    gamma_ind_.resize(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k) {
        gamma_agg_[static_cast<std::size_t>(k)].resize(static_cast<std::size_t>(steps - k) + 1);
        gamma_ind_[static_cast<std::size_t>(k)].resize(static_cast<std::size_t>(steps - k) + 1);
        gamma_agg_[static_cast<std::size_t>(k)][0] = eye;
        gamma_ind_[static_cast<std::size_t>(k)][0] = eye;
        for (int s = k + 1; s <= steps; ++s) {
            gamma_agg_[static_cast<std::size_t>(k)][static_cast<std::size_t>(s - k)] =
                gamma_agg_[static_cast<std::size_t>(k)][static_cast<std::size_t>(s - k) - 1] *
                flow_agg_[static_cast<std::size_t>(s) - 1];
            gamma_ind_[static_cast<std::size_t>(k)][static_cast<std::size_t>(s - k)] =
                gamma_ind_[static_cast<std::size_t>(k)][static_cast<std::size_t>(s - k) - 1] *
                flow_ind_[static_cast<std::size_t>(s) - 1];
        }
    }
}

const TreeProcess& PopulationEvaluator::control_of(int agent) const {
    if (agent == 0 && agent0_control_ != nullptr) return *agent0_control_;
    return cc_.control;
}

const ConditionalTable& PopulationEvaluator::table_of(int agent) const {
    if (agent == 0 && !override_table_.empty()) return override_table_.front();
    return shared_table_;
}

void PopulationEvaluator::roll_aggregate(RunContext& ctx, const PopulationRun& run) const {
    const int steps = tree_.steps();
    const double dt = tree_.dt();
    for (int k = 0; k <= steps; ++k) {
        const auto& phibar = ctx.avg_control[static_cast<std::size_t>(k)];
        auto& ax = ctx.agg_x[static_cast<std::size_t>(k)];
        auto& ay = ctx.agg_y[static_cast<std::size_t>(k)];
        ax.resize(static_cast<std::size_t>(steps - k) + 1);
        ay.resize(static_cast<std::size_t>(steps - k) + 1);

        // forward conditional mean of the aggregate
        ax[0] = run.aggregate_x[static_cast<std::size_t>(k)];
        for (int s = k; s < steps; ++s) {
            const CoefficientSlice& cs = slices_[static_cast<std::size_t>(s)];
            ax[static_cast<std::size_t>(s - k) + 1] =
                ax[static_cast<std::size_t>(s - k)] +
                dt * ((cs.A + cs.F) * ax[static_cast<std::size_t>(s - k)] +
                      cs.B * phibar[static_cast<std::size_t>(s - k)] + cs.b);
        }

        // backward representation of the aggregate, rolled out for all s >= k
        for (int s = steps; s >= k; --s) {
            Eigen::VectorXd acc = gamma_agg_[static_cast<std::size_t>(s)][static_cast<std::size_t>(steps - s)] *
                                  (model_.Phi * ax[static_cast<std::size_t>(steps - k)]);
            for (int r = s; r < steps; ++r) {
                const CoefficientSlice& cs = slices_[static_cast<std::size_t>(r)];
                const Eigen::VectorXd g =
                    dt * ((cs.M + cs.H) * ax[static_cast<std::size_t>(r - k)] +
                          cs.K * phibar[static_cast<std::size_t>(r - k)] + cs.f);
                acc += gamma_agg_[static_cast<std::size_t>(s)][static_cast<std::size_t>(r - s) + 1] * g;
            }
            ay[static_cast<std::size_t>(s - k)] = acc;
        }
        ctx.aggregate_y[static_cast<std::size_t>(k)] = ay[0];
    }
}

PopulationEvaluator::RunContext PopulationEvaluator::evaluate_aggregate(
    const PopulationRun& run) const {
    const int steps = tree_.steps();
    const int num_agents = run.num_agents;

    RunContext ctx;
    ctx.avg_control.resize(static_cast<std::size_t>(steps) + 1);
    ctx.agg_x.resize(static_cast<std::size_t>(steps) + 1);
    ctx.agg_y.resize(static_cast<std::size_t>(steps) + 1);
    ctx.aggregate_y.resize(static_cast<std::size_t>(steps) + 1);

    const int m = model_.control_dim;
    Eigen::MatrixXd buffer(m, num_agents);
    for (int k = 0; k <= steps; ++k) {
        auto& phibar = ctx.avg_control[static_cast<std::size_t>(k)];
        phibar.resize(static_cast<std::size_t>(std::max(steps - k, 0)));
        // E[average control at s | realized level-k histories]
        for (int s = k; s < steps; ++s) {
            for (int i = 0; i < num_agents; ++i)
                buffer.col(i) = table_of(i).value(
                    s, k, run.paths[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]);
            phibar[static_cast<std::size_t>(s - k)] = permutation_invariant_mean(buffer);
        }
    }
    roll_aggregate(ctx, run);
    return ctx;
}

std::vector<std::vector<Eigen::VectorXd>>
PopulationEvaluator::sum_control_tables_excluding_agent0(const PopulationRun& run) const {
    const int steps = tree_.steps();
    const int num_agents = run.num_agents;
    const int m = model_.control_dim;
    std::vector<std::vector<Eigen::VectorXd>> sums(static_cast<std::size_t>(steps) + 1);
    Eigen::MatrixXd buffer(m, num_agents - 1);
    for (int k = 0; k <= steps; ++k) {
        sums[static_cast<std::size_t>(k)].resize(static_cast<std::size_t>(std::max(steps - k, 0)));
        for (int s = k; s < steps; ++s) {
            for (int i = 1; i < num_agents; ++i)
                buffer.col(i - 1) = table_of(i).value(
                    s, k, run.paths[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]);
            sums[static_cast<std::size_t>(k)][static_cast<std::size_t>(s - k)] =
                permutation_invariant_mean(buffer) * static_cast<double>(num_agents - 1);
        }
    }
    return sums;
}

PopulationEvaluator::RunContext PopulationEvaluator::evaluate_aggregate_cached(
    const PopulationRun& run,
    const std::vector<std::vector<Eigen::VectorXd>>& others_sum) const {
    const int steps = tree_.steps();
    RunContext ctx;
    ctx.avg_control.resize(static_cast<std::size_t>(steps) + 1);
    ctx.agg_x.resize(static_cast<std::size_t>(steps) + 1);
    ctx.agg_y.resize(static_cast<std::size_t>(steps) + 1);
    ctx.aggregate_y.resize(static_cast<std::size_t>(steps) + 1);
    const ConditionalTable& table0 = table_of(0);
    for (int k = 0; k <= steps; ++k) {
        auto& phibar = ctx.avg_control[static_cast<std::size_t>(k)];
        phibar.resize(static_cast<std::size_t>(std::max(steps - k, 0)));
        const std::int64_t node0 = run.paths[0][static_cast<std::size_t>(k)];
        for (int s = k; s < steps; ++s)
            phibar[static_cast<std::size_t>(s - k)] =
                (others_sum[static_cast<std::size_t>(k)][static_cast<std::size_t>(s - k)] +
                 table0.value(s, k, node0)) /
                static_cast<double>(run.num_agents);
    }
    roll_aggregate(ctx, run);
    return ctx;
}

std::vector<Eigen::VectorXd> PopulationEvaluator::evaluate_individual(const PopulationRun& run,
                                                                      const RunContext& ctx,
                                                                      int agent) const {
    if (agent < 0 || agent >= run.num_agents)
        throw std::out_of_range("evaluate_individual: agent index out of range");
    const int steps = tree_.steps();
    const double dt = tree_.dt();
    const ConditionalTable& table = table_of(agent);

    std::vector<Eigen::VectorXd> y(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k) {
        const std::int64_t node = run.paths[static_cast<std::size_t>(agent)][static_cast<std::size_t>(k)];
        const auto& ax = ctx.agg_x[static_cast<std::size_t>(k)];
        const auto& ay = ctx.agg_y[static_cast<std::size_t>(k)];

        // conditional mean of the agent's own forward state
        Eigen::VectorXd xh = run.states[static_cast<std::size_t>(k)].col(agent);
        std::vector<Eigen::VectorXd> xh_path(static_cast<std::size_t>(steps - k) + 1);
        xh_path[0] = xh;
        for (int s = k; s < steps; ++s) {
            const CoefficientSlice& cs = slices_[static_cast<std::size_t>(s)];
            const Eigen::VectorXd u_hat = table.value(s, k, node);
            xh = xh + dt * (cs.A * xh + cs.B * u_hat + cs.F * ax[static_cast<std::size_t>(s - k)] + cs.b);
            xh_path[static_cast<std::size_t>(s - k) + 1] = xh;
        }

        // rolled-out linear-BSDE representation of the individual backward state
        Eigen::VectorXd acc =
            gamma_ind_[static_cast<std::size_t>(k)][static_cast<std::size_t>(steps - k)] *
            (model_.Phi * xh_path[static_cast<std::size_t>(steps - k)]);
        for (int r = k; r < steps; ++r) {
            const CoefficientSlice& cs = slices_[static_cast<std::size_t>(r)];
            const Eigen::VectorXd h =
                dt * (cs.M * xh_path[static_cast<std::size_t>(r - k)] +
                      cs.H * ax[static_cast<std::size_t>(r - k)] +
                      cs.V * ay[static_cast<std::size_t>(r - k)] +
                      cs.K * table.value(r, k, node) + cs.f);
            acc += gamma_ind_[static_cast<std::size_t>(k)][static_cast<std::size_t>(r - k) + 1] * h;
        }
        y[static_cast<std::size_t>(k)] = acc;
    }
    return y;
}

CostBreakdown PopulationEvaluator::realized_cost(const PopulationRun& run, const RunContext& ctx,
                                                 int agent) const {
    const int steps = tree_.steps();
    const double dt = tree_.dt();
    const std::vector<Eigen::VectorXd> y_i = evaluate_individual(run, ctx, agent);
    const TreeProcess& ctl = control_of(agent);

    CostBreakdown cost;
    for (int k = 0; k < steps; ++k) {
        const CoefficientSlice& s = slices_[static_cast<std::size_t>(k)];
        const Eigen::VectorXd dx = run.states[static_cast<std::size_t>(k)].col(agent) -
                                   run.aggregate_x[static_cast<std::size_t>(k)];
        const Eigen::VectorXd dy =
            y_i[static_cast<std::size_t>(k)] - ctx.aggregate_y[static_cast<std::size_t>(k)];
        const Eigen::VectorXd u = ctl.at(k).col(
            run.paths[static_cast<std::size_t>(agent)][static_cast<std::size_t>(k)]);
        cost.tracking_x += 0.5 * dt * dx.dot(s.Q * dx);
        cost.tracking_y += 0.5 * dt * dy.dot(s.L * dy);
        cost.control_effort += 0.5 * dt * u.dot(s.R * u);
    }
    const Eigen::VectorXd dxT = run.states[static_cast<std::size_t>(steps)].col(agent) -
                                run.aggregate_x[static_cast<std::size_t>(steps)];
    cost.terminal = 0.5 * dxT.dot(model_.G * dxT);
    cost.total = cost.tracking_x + cost.tracking_y + cost.control_effort + cost.terminal;
    cost.y0_gap = (y_i[0] - ctx.aggregate_y[0]).norm();
    return cost;
}

MeanPath evaluate_backward_aggregate(const ModelSpec& model, const ScenarioTree& tree,
                                     const CcSolution& cc, const PopulationRun& run) {
    PopulationEvaluator eval(model, tree, cc);
    return eval.evaluate_aggregate(run).aggregate_y;
}

std::vector<Eigen::VectorXd> evaluate_backward_individual(const ModelSpec& model,
                                                          const ScenarioTree& tree,
                                                          const CcSolution& cc,
                                                          const PopulationRun& run, int agent) {
    PopulationEvaluator eval(model, tree, cc);
    const auto ctx = eval.evaluate_aggregate(run);
    return eval.evaluate_individual(run, ctx, agent);
}

CostBreakdown realized_cost(const ModelSpec& model, const ScenarioTree& tree,
                            const CcSolution& cc, const PopulationRun& run, int agent) {
    PopulationEvaluator eval(model, tree, cc);
    const auto ctx = eval.evaluate_aggregate(run);
    return eval.realized_cost(run, ctx, agent);
}

}  // namespace mfg
