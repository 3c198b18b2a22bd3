#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mfg/convex_set.hpp"
#include "mfg/model.hpp"
#include "mfg/scenario_tree.hpp"

namespace mfg {

/// Deterministic per-level mean trajectory (one n-vector per tree level).
using MeanPath = std::vector<Eigen::VectorXd>;

enum class SolveMode { Auto, PicardOnly, Continuation };

struct SolveOptions {
    double picard_tol = 1e-10;
    int max_iters = 500;
    /// Damping factor theta in (0, 1] applied when accepting a sweep;
    /// automatically halved (down to 1/64) whenever the residual increases.
    double damping = 1.0;
    int continuation_steps = 10;
    SolveMode mode = SolveMode::Auto;
    /// Solving a spec that only passes permissive validation requires this
    /// explicit override.
    bool allow_permissive = false;
};

struct SolveDiagnostics {
    int iterations = 0;              // total sweeps over all homotopy steps
    bool converged = false;
    double final_residual = 0.0;     // last sup-norm iterate change
    double consistency_residual = 0.0;  // mean-coupling mismatch of the final sweep
    std::vector<double> residual_history;
    std::vector<double> alpha_path;  // homotopy parameters actually solved
    double theta_final = 1.0;
    bool used_continuation = false;
};

/// Solution of the consistency-condition system on a scenario tree.
///
/// Forward/backward states and adjoints live on levels 0..steps; the
/// diffusion loadings and the control live on levels 0..steps-1 (one value
/// per time step). Terminal rows are assembled, never iterated:
/// y_T = Phi x_T and q_T = Phi^T p_T - G (x_T - E x_T) hold exactly at
/// every leaf, and the control is a projection output at every node.
struct CcSolution {
    TreeProcess state_x;    // forward state x
    TreeProcess state_y;    // backward state y
    TreeProcess state_z;    // diffusion loading of y
    TreeProcess adjoint_p;  // forward adjoint p (no diffusion)
    TreeProcess adjoint_q;  // backward adjoint q
    TreeProcess adjoint_k;  // diffusion loading of q
    TreeProcess control;    // projected control at each step node

    MeanPath mean_x;  // E x per level (the frozen trajectory phi^1)
    MeanPath mean_y;  // E y per level (phi^2)

    SolveDiagnostics diag;
};

class SolveDivergedError : public std::runtime_error {
public:
    SolveDivergedError(std::string what, std::vector<double> history)
        : std::runtime_error(std::move(what)), residual_history(std::move(history)) {}
    std::vector<double> residual_history;
};

/// Projected pointwise control map: P_U[R^{-1}(B^T q + K^T p + D^T k)] under
/// the R-weighted norm.
Eigen::VectorXd phi(const Eigen::MatrixXd& R, const Eigen::MatrixXd& B,
                    const Eigen::MatrixXd& K, const Eigen::MatrixXd& D, const ConvexSet& set,
                    const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                    const Eigen::VectorXd& k);

/// Solves the consistency-condition system by damped Picard sweeps, with a
/// homotopy-in-alpha fallback that walks continuation_steps equal steps from
/// the trivially solvable zero system to the target. Deterministic: the
/// result is a pure function of (model, tree, opts).
///
/// Throws SolveDivergedError when the iteration fails at the final homotopy
/// step, std::invalid_argument on validation failures (including a
/// coefficient mesh that does not subdivide the tree grid, and cond(R) > 1e8).
CcSolution solve_cc(const ModelSpec& model, const ScenarioTree& tree,
                    const SolveOptions& opts = {});

/// Oracle for the unconstrained case: stacks every node unknown of
/// (x, y, z, p, q, k) plus the per-level means into one sparse linear system
/// (dynamics rows, martingale-representation rows, terminal rows,
/// mean-coupling rows) and solves it directly. Requires control_set = whole.
CcSolution solve_cc_direct_linear(const ModelSpec& model, const ScenarioTree& tree,
                                  bool allow_permissive = false);

/// Solves the auxiliary control problem for arbitrary frozen mean
/// trajectories: same sweep structure as solve_cc but with the means held
/// fixed everywhere (including the adjoint rows and the terminal condition).
CcSolution solve_auxiliary(const ModelSpec& model, const ScenarioTree& tree,
                           const MeanPath& mean_x, const MeanPath& mean_y,
                           const SolveOptions& opts = {});

/// Largest sampled violation of the variational optimality condition
/// <B^T q + K^T p + D^T k - R u, v - u> over all step nodes and `samples`
/// sampled v in U. Nonpositive (up to iteration tolerance) for a correct
/// solution.
double check_max_principle(const ModelSpec& model, const ScenarioTree& tree,
                           const CcSolution& sol, int samples, std::uint64_t seed);

/// Exact tree quadrature of the limiting cost: left-endpoint rule in time,
/// exact node expectations, terms Q(x - mean_x), L(y - mean_y), R u and the
/// terminal G(x_T - mean_x_T), all halved.
double limiting_cost(const ModelSpec& model, const ScenarioTree& tree, const TreeProcess& x,
                     const TreeProcess& y, const TreeProcess& u, const MeanPath& mean_x,
                     const MeanPath& mean_y);

struct ControlledStates {
    TreeProcess state_x, state_y, state_z;
};

/// Integrates the forward/backward states for a prescribed admissible
/// control and frozen means (no optimality involved). Used to price
/// candidate controls in the limiting problem.
ControlledStates integrate_for_control(const ModelSpec& model, const ScenarioTree& tree,
                                       const TreeProcess& control, const MeanPath& mean_x,
                                       const MeanPath& mean_y);

}  // namespace mfg
