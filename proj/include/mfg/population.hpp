#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mfg/cc_solver.hpp"
#include "mfg/model.hpp"
#include "mfg/scenario_tree.hpp"

namespace mfg {

/// One replication of the true weakly-coupled N-agent system simulated under
/// tree-function strategies. Agents draw independent uniformly-random leaves
/// of the shared generic tree; their controls and reference processes are the
/// consistency solution read along each agent's path, so no strategy
/// interpolation is involved.
struct PopulationRun {
    int num_agents = 0;
    std::uint64_t seed = 0;
    /// paths[i][k] = node index of agent i at level k
    std::vector<std::vector<std::int64_t>> paths;
    /// states[k]: n x N matrix of realized agent states at level k
    std::vector<Eigen::MatrixXd> states;
    /// realized state-average per level (permutation-invariant summation)
    MeanPath aggregate_x;
};

struct CostBreakdown {
    double tracking_x = 0.0;
    double tracking_y = 0.0;
    double control_effort = 0.0;
    double terminal = 0.0;
    double total = 0.0;
    /// |y_i(0) - y_avg(0)|: the omitted initial-gap term, recorded as a
    /// diagnostic only (it is not part of total).
    double y0_gap = 0.0;
};

/// Mean over agent columns computed by per-component sorted summation, so the
/// result is bitwise invariant under any permutation of the agents.
Eigen::VectorXd permutation_invariant_mean(const Eigen::MatrixXd& agent_values);

/// Simulates N agents under the shared decentralized strategy; agent 0 may be
/// overridden with a different tree control (used by best-response probes).
/// Coupling runs through the realized state-average, recomputed every step.
/// Deterministic given `seed`; per-agent streams are seed-derived.
PopulationRun simulate_population(const ModelSpec& model, const ScenarioTree& tree,
                                  const CcSolution& cc, int num_agents, std::uint64_t seed,
                                  const TreeProcess* agent0_control = nullptr);

/// Same with explicit per-agent seeds (exchangeability tests permute these).
PopulationRun simulate_population_seeded(const ModelSpec& model, const ScenarioTree& tree,
                                         const CcSolution& cc,
                                         const std::vector<std::uint64_t>& agent_seeds,
                                         std::uint64_t run_seed,
                                         const TreeProcess* agent0_control = nullptr);

/// Same with externally provided leaf paths (one per agent). Used to
/// integrate an agent's own noise exactly by enumerating its paths while the
/// rest of the population is held fixed.
PopulationRun simulate_population_paths(const ModelSpec& model, const ScenarioTree& tree,
                                        const CcSolution& cc,
                                        std::vector<std::vector<std::int64_t>> paths,
                                        std::uint64_t run_seed,
                                        const TreeProcess* agent0_control = nullptr);

/// Per-agent path sampled from a seed: node index at each level.
std::vector<std::int64_t> sample_tree_path(const ScenarioTree& tree, std::uint64_t agent_seed);

/// Evaluates the backward components of a realized run in closed form.
///
/// The aggregate backward state solves a linear BSDE with deterministic
/// coefficient (U+V); conditioning reduces it to the deterministic flow
/// applied to conditional expectations of the forward aggregate and of the
/// average control. Those in turn decompose, by agent independence, into
/// per-agent tree conditional-expectation tables precomputed once from the
/// strategy processes. The result is exact for the discrete scheme: no
/// nested simulation, no regression.
class PopulationEvaluator {
public:
    PopulationEvaluator(const ModelSpec& model, const ScenarioTree& tree, const CcSolution& cc,
                        const TreeProcess* agent0_control = nullptr);

    /// Per-replication conditional data: entry [k][s-k] is the conditional
    /// expectation given the realized level-k history.
    struct RunContext {
        std::vector<std::vector<Eigen::VectorXd>> avg_control;  // E[phibar(s) | G_k]
        std::vector<std::vector<Eigen::VectorXd>> agg_x;        // E[xavg(s)  | G_k]
        std::vector<std::vector<Eigen::VectorXd>> agg_y;        // E[yavg(s)  | G_k]
        MeanPath aggregate_y;                                   // realized yavg per level
    };

    RunContext evaluate_aggregate(const PopulationRun& run) const;

    /// Sums of the per-agent control tables over agents 1..N-1. The tables
    /// are tree functions, so these sums are invariant under changes of
    /// agent 0's path or control and can be amortized across own-path
    /// enumerations.
    std::vector<std::vector<Eigen::VectorXd>> sum_control_tables_excluding_agent0(
        const PopulationRun& run) const;

    /// evaluate_aggregate with the agents 1..N-1 table sums precomputed.
    RunContext evaluate_aggregate_cached(
        const PopulationRun& run,
        const std::vector<std::vector<Eigen::VectorXd>>& others_sum) const;

    /// Realized backward state of one agent at every level.
    std::vector<Eigen::VectorXd> evaluate_individual(const PopulationRun& run,
                                                     const RunContext& ctx, int agent) const;

    CostBreakdown realized_cost(const PopulationRun& run, const RunContext& ctx,
                                int agent) const;

    const TreeProcess& control_of(int agent) const;

private:
    void roll_aggregate(RunContext& ctx, const PopulationRun& run) const;

    const ModelSpec& model_;
    const ScenarioTree& tree_;
    const CcSolution& cc_;
    const TreeProcess* agent0_control_;
    std::vector<CoefficientSlice> slices_;     // per step
    std::vector<Eigen::MatrixXd> flow_agg_;    // flow_agg_[k]: (I - dt(U+V))^-1 products
    std::vector<Eigen::MatrixXd> flow_ind_;    // same for (I - dt U)^-1
    ConditionalTable shared_table_;
    std::vector<ConditionalTable> override_table_;  // empty or one entry for agent 0

    const ConditionalTable& table_of(int agent) const;
    // gamma products Gamma(k, s) = S_k ... S_{s-1}
    std::vector<std::vector<Eigen::MatrixXd>> gamma_agg_, gamma_ind_;
};

/// Free-function forms of the evaluator (single-shot convenience).
MeanPath evaluate_backward_aggregate(const ModelSpec& model, const ScenarioTree& tree,
                                     const CcSolution& cc, const PopulationRun& run);
std::vector<Eigen::VectorXd> evaluate_backward_individual(const ModelSpec& model,
                                                          const ScenarioTree& tree,
                                                          const CcSolution& cc,
                                                          const PopulationRun& run, int agent);
CostBreakdown realized_cost(const ModelSpec& model, const ScenarioTree& tree,
                            const CcSolution& cc, const PopulationRun& run, int agent);

}  // namespace mfg
