#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mfg/cc_solver.hpp"
#include "mfg/model.hpp"
#include "mfg/population.hpp"
#include "mfg/scenario_tree.hpp"

namespace mfg {

struct GapRow {
    int num_agents = 0;
    int replications = 0;
    double gap_x_avg = 0.0;    // E sup_t |x_avg - E x|^2
    double gap_y_avg = 0.0;    // E sup_t |y_avg - E y|^2
    double gap_x_indiv = 0.0;  // max_i E sup_t |x_i - reference_i|^2
    double gap_y_indiv = 0.0;
    double cost_gap = 0.0;     // measured |realized average cost - limiting cost|
};

struct GapTable {
    std::vector<GapRow> rows;  // sorted by num_agents ascending
    double limit_cost = 0.0;
};

/// Mean-square gap statistics between the simulated N-agent system and the
/// consistency solution, across an N-grid. Deterministic given seed; the
/// replication loop parallelizes over seed-derived streams.
///
/// The cost gap is measured with the symmetric estimator: realized costs are
/// averaged over agents and over replication batches, and the reported value
/// is the mean absolute deviation of the batch means from the limiting cost.
/// A fixed-agent estimator would pin the Monte Carlo noise floor independent
/// of N and mask the population-size dependence at desk scale.
GapTable gap_statistics(const ModelSpec& model, const ScenarioTree& tree, const CcSolution& cc,
                        const std::vector<int>& agent_grid, int replications, std::uint64_t seed,
                        int threads = 1);

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    int rows_used = 0;
    std::string note;  // records excluded nonpositive rows
};

/// Ordinary least squares on (log N, log value). Nonpositive values are
/// excluded with a note; fewer than 3 positive rows is an error.
RateFit rate_fit(const std::vector<std::pair<double, double>>& rows);

/// Deviation family probed against the equilibrium strategy. The empirical
/// response re-solves the auxiliary problem against the realized population
/// means of the baseline runs; scale candidates rescale the equilibrium
/// control and project back into the control set; random candidates are
/// constant admissible controls.
struct CandidateFamily {
    bool include_empirical_response = true;
    std::vector<double> scales{0.7, 0.9, 1.1, 1.3};
    int random_count = 3;
    double random_magnitude = 0.5;
    SolveOptions solve_opts{};  // options for the empirical-response solve

    std::string describe() const;
};

struct NashRow {
    int num_agents = 0;
    int replications = 0;
    double cost_equilibrium = 0.0;  // J_1(u_eq, u_eq_others), replication average
    double best_cost = 0.0;         // min over candidates
    double eps_hat = 0.0;           // max(0, cost_equilibrium - best_cost)
    double std_error = 0.0;         // MC standard error of the best paired difference
    std::string best_candidate;
};

struct NashReport {
    std::vector<NashRow> rows;
    std::string candidate_family;
};

/// Measured best-response gain of agent 0 against the fixed strategies of
/// the rest. All candidate evaluations reuse the baseline replication seeds
/// (common random numbers), so the paired differences carry far less noise
/// than the costs themselves. eps_hat is a lower bound on the true
/// best-response gain: the infimum over all admissible deviations is not
/// attainable by a finite family.
NashRow best_response_gain(const ModelSpec& model, const ScenarioTree& tree,
                           const CcSolution& cc, int num_agents, const CandidateFamily& family,
                           int replications, std::uint64_t seed, int threads = 1);

NashReport nash_report(const ModelSpec& model, const ScenarioTree& tree, const CcSolution& cc,
                       const std::vector<int>& agent_grid, const CandidateFamily& family,
                       int replications, std::uint64_t seed, int threads = 1);

}  // namespace mfg
