#include "mfg/cc_solver.hpp"

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <cmath>
#include <limits>
#include <sstream>

#include "mfg/rng.hpp"

namespace mfg {

Eigen::VectorXd phi(const Eigen::MatrixXd& R, const Eigen::MatrixXd& B,
                    const Eigen::MatrixXd& K, const Eigen::MatrixXd& D, const ConvexSet& set,
                    const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                    const Eigen::VectorXd& k) {
    Eigen::LLT<Eigen::MatrixXd> llt(R);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("phi: R must be symmetric positive definite");
    const Eigen::VectorXd target =
        llt.solve(B.transpose() * q + K.transpose() * p + D.transpose() * k);
    return project(set, R, target).point;
}

namespace {

constexpr double kThetaFloor = 1.0 / 64.0;
constexpr double kBlowupGuard = 1e14;

struct LevelData {
    CoefficientSlice s;
    Eigen::LLT<Eigen::MatrixXd> r_llt;
};

void check_mesh_subdivides(const ModelSpec& model, const ScenarioTree& tree) {
    const double dt = tree.dt();
    const PiecewiseMatrix* fns[] = {&model.A, &model.F, &model.M, &model.U_coef, &model.H,
                                    &model.V, &model.B, &model.D, &model.K, &model.b,
                                    &model.sigma, &model.f, &model.Q, &model.L, &model.R};
    for (const auto* fn : fns) {
        for (std::size_t j = 1; j + 1 < fn->mesh.size(); ++j) {
            const double ratio = fn->mesh[j] / dt;
            if (std::abs(ratio - std::round(ratio)) > 1e-9)
                throw std::invalid_argument(
                    "solve: coefficient mesh must subdivide the tree time grid");
        }
    }
}

void check_solvable(const ModelSpec& model, const ScenarioTree& tree, bool allow_permissive) {
    if (std::abs(model.horizon - tree.horizon()) > 1e-12 * std::max(1.0, model.horizon))
        throw std::invalid_argument("solve: tree horizon differs from model horizon");
    const ValidationReport strict = validate(model, ValidationMode::Strict);
    if (!strict.strict_pass) {
        if (!allow_permissive)
            throw std::invalid_argument(
                "solve: model fails strict validation (set allow_permissive to override)");
        const ValidationReport perm = validate(model, ValidationMode::Permissive);
        if (!perm.strict_pass) {
            std::ostringstream os;
            os << "solve: model fails permissive validation:";
            for (const auto& v : perm.violations) os << " [" << v.field << ":" << v.rule << "]";
            throw std::invalid_argument(os.str());
        }
    }
    check_mesh_subdivides(model, tree);
}

std::vector<LevelData> prepare_levels(const ModelSpec& model, const ScenarioTree& tree) {
    std::vector<LevelData> levels(static_cast<std::size_t>(tree.steps()));
    for (int k = 0; k < tree.steps(); ++k) {
        LevelData& ld = levels[static_cast<std::size_t>(k)];
        ld.s = coeff_at(model, tree.time_at(k));
        ld.r_llt.compute(ld.s.R);
        if (ld.r_llt.info() != Eigen::Success)
            throw std::invalid_argument("solve: R slice is not positive definite");
    }
    return levels;
}

double sup_change(const TreeProcess& a, const TreeProcess& b) {
    double m = 0.0;
    for (int k = 0; k < a.num_levels(); ++k)
        m = std::max(m, (a.at(k) - b.at(k)).cwiseAbs().maxCoeff());
    return m;
}

double sup_change(const MeanPath& a, const MeanPath& b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k)
        m = std::max(m, (a[k] - b[k]).lpNorm<Eigen::Infinity>());
    return m;
}

void mix_into(TreeProcess& acc, const TreeProcess& next, double theta) {
    for (int k = 0; k < acc.num_levels(); ++k)
        acc.at(k) = theta * next.at(k) + (1.0 - theta) * acc.at(k);
}

void mix_into(MeanPath& acc, const MeanPath& next, double theta) {
    for (std::size_t k = 0; k < acc.size(); ++k)
        acc[k] = theta * next[k] + (1.0 - theta) * acc[k];
}

/// Damped Picard engine for the consistency system and for the auxiliary
/// problem with frozen means. One sweep runs, in order: control evaluation
/// from the accepted adjoints, forward x, mean update, backward (y, z), mean
/// update, forward p, backward (q, k). The homotopy parameter alpha scales
/// every drift, diffusion and terminal coefficient, but never the projection
/// map itself.
class CcEngine {
public:
    CcEngine(const ModelSpec& model, const ScenarioTree& tree, const SolveOptions& opts,
             bool means_fixed, MeanPath fixed_mx = {}, MeanPath fixed_my = {})
        : model_(model),
          tree_(tree),
          opts_(opts),
          means_fixed_(means_fixed),
          levels_(prepare_levels(model, tree)),
          n_(model.state_dim),
          m_(model.control_dim),
          steps_(tree.steps()) {
        if (means_fixed_) {
            if (fixed_mx.size() != static_cast<std::size_t>(steps_ + 1) ||
                fixed_my.size() != static_cast<std::size_t>(steps_ + 1))
                throw std::invalid_argument("solve_auxiliary: mean paths must cover all levels");
            mx_ = std::move(fixed_mx);
            my_ = std::move(fixed_my);
        }
    }

    CcSolution run() {
        switch (opts_.mode) {
            case SolveMode::PicardOnly: {
                init_state(1.0);
                if (!inner_solve(1.0)) diverged("picard iteration did not converge");
                break;
            }
            case SolveMode::Continuation:
                run_continuation();
                break;
            case SolveMode::Auto: {
                init_state(1.0);
                if (!inner_solve(1.0)) {
                    diag_.used_continuation = true;
                    run_continuation();
                }
                break;
            }
        }
        return capture();
    }

private:
    void run_continuation() {
        if (opts_.continuation_steps < 1)
            throw std::invalid_argument("solve: continuation_steps must be >= 1");
        init_state(0.0);
        diag_.alpha_path.clear();
        for (int j = 1; j <= opts_.continuation_steps; ++j) {
            const double alpha = static_cast<double>(j) / opts_.continuation_steps;
            if (!inner_solve(alpha)) {
                std::ostringstream os;
                os << "continuation stalled at alpha = " << alpha;
                diverged(os.str());
            }
        }
    }

    [[noreturn]] void diverged(const std::string& why) {
        throw SolveDivergedError("solve_cc diverged: " + why, diag_.residual_history);
    }

    /// Closed-form start: adjoints zero, means from the deterministic mean
    /// recursions driven by the zero-adjoint control P_U[0]. At alpha = 0
    /// this is the exact solution of the zero system.
    void init_state(double alpha) {
        acc_p_ = TreeProcess(n_, steps_ + 1);
        acc_q_ = TreeProcess(n_, steps_ + 1);
        acc_k_ = TreeProcess(n_, steps_);
        if (means_fixed_) return;
        mx_.assign(static_cast<std::size_t>(steps_ + 1), Eigen::VectorXd::Zero(n_));
        my_.assign(static_cast<std::size_t>(steps_ + 1), Eigen::VectorXd::Zero(n_));
        std::vector<Eigen::VectorXd> u0(static_cast<std::size_t>(steps_));
        mx_[0] = model_.x0;
        for (int k = 0; k < steps_; ++k) {
            const CoefficientSlice& s = levels_[static_cast<std::size_t>(k)].s;
            u0[static_cast<std::size_t>(k)] =
                project(model_.control_set, s.R, Eigen::VectorXd::Zero(m_)).point;
            mx_[static_cast<std::size_t>(k) + 1] =
                mx_[static_cast<std::size_t>(k)] +
                alpha * tree_.dt() *
                    ((s.A + s.F) * mx_[static_cast<std::size_t>(k)] +
                     s.B * u0[static_cast<std::size_t>(k)] + s.b);
        }
        my_[static_cast<std::size_t>(steps_)] = alpha * model_.Phi * mx_[static_cast<std::size_t>(steps_)];
        for (int k = steps_ - 1; k >= 0; --k) {
            const CoefficientSlice& s = levels_[static_cast<std::size_t>(k)].s;
            const Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(n_, n_) -
                                        alpha * tree_.dt() * (s.U_coef + s.V);
            const Eigen::VectorXd rhs =
                my_[static_cast<std::size_t>(k) + 1] +
                alpha * tree_.dt() *
                    ((s.M + s.H) * mx_[static_cast<std::size_t>(k)] +
                     s.K * u0[static_cast<std::size_t>(k)] + s.f);
            my_[static_cast<std::size_t>(k)] = lhs.partialPivLu().solve(rhs);
        }
    }

    void prepare_alpha(double alpha) {
        if (alpha == alpha_prepared_) return;
        y_step_.resize(static_cast<std::size_t>(steps_));
        q_step_.resize(static_cast<std::size_t>(steps_));
        const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n_, n_);
        for (int k = 0; k < steps_; ++k) {
            const CoefficientSlice& s = levels_[static_cast<std::size_t>(k)].s;
            y_step_[static_cast<std::size_t>(k)].compute(eye - alpha * tree_.dt() * s.U_coef);
            q_step_[static_cast<std::size_t>(k)].compute(eye - alpha * tree_.dt() * s.A);
        }
        alpha_prepared_ = alpha;
    }

    bool inner_solve(double alpha) {
        prepare_alpha(alpha);
        double theta = opts_.damping;
        if (!(theta > 0.0) || theta > 1.0)
            throw std::invalid_argument("solve: damping must lie in (0, 1]");
        double prev_residual = std::numeric_limits<double>::infinity();
        for (int iter = 0; iter < opts_.max_iters; ++iter) {
            const double residual = sweep(alpha);
            ++diag_.iterations;
            diag_.residual_history.push_back(residual);
            diag_.theta_final = theta;
            if (!std::isfinite(residual) || residual > kBlowupGuard) return false;
            if (residual < opts_.picard_tol) {
                // final acceptance is undamped so the assembled terminal rows
                // survive into the stored adjoints
                acc_p_ = new_p_;
                acc_q_ = new_q_;
                acc_k_ = new_k_;
                if (!means_fixed_) {
                    mx_ = new_mx_;
                    my_ = new_my_;
                }
                diag_.alpha_path.push_back(alpha);
                diag_.converged = true;
                return true;
            }
            if (residual >= prev_residual)
                theta = std::max(theta / 2.0, kThetaFloor);
            else
                theta = std::min(theta * 1.25, opts_.damping);  // recover after stabilizing
            mix_into(acc_p_, new_p_, theta);
            mix_into(acc_q_, new_q_, theta);
            mix_into(acc_k_, new_k_, theta);
            if (!means_fixed_) {
                mix_into(mx_, new_mx_, theta);
                mix_into(my_, new_my_, theta);
            }
            prev_residual = residual;
        }
        return false;
    }

    /// One full Picard sweep at homotopy parameter alpha. Reads the accepted
    /// adjoints and frozen means, writes (x, y, z, u) and the proposed
    /// (p, q, k, means). Returns the sup-norm iterate change.
    double sweep(double alpha) {
        const double dt = tree_.dt();
        const double sdt = tree_.sqrt_dt();

        // (1) control from accepted adjoints
        if (u_.num_levels() == 0) {
            x_ = TreeProcess(n_, steps_ + 1);
            y_ = TreeProcess(n_, steps_ + 1);
            z_ = TreeProcess(n_, steps_);
            u_ = TreeProcess(m_, steps_);
            new_p_ = TreeProcess(n_, steps_ + 1);
            new_q_ = TreeProcess(n_, steps_ + 1);
            new_k_ = TreeProcess(n_, steps_);
        }
        for (int k = 0; k < steps_; ++k) {
            const LevelData& ld = levels_[static_cast<std::size_t>(k)];
            for (std::int64_t j = 0; j < tree_.nodes_at(k); ++j) {
                const Eigen::VectorXd target = ld.r_llt.solve(
                    ld.s.B.transpose() * acc_q_.at(k).col(j) +
                    ld.s.K.transpose() * acc_p_.at(k).col(j) +
                    ld.s.D.transpose() * acc_k_.at(k).col(j));
                u_.at(k).col(j) = project(model_.control_set, ld.s.R, target).point;
            }
        }

        // (2) forward x with the frozen mean trajectory
        x_.at(0).col(0) = model_.x0;
        for (int k = 0; k < steps_; ++k) {
            const CoefficientSlice& s = levels_[static_cast<std::size_t>(k)].s;
            const Eigen::VectorXd& mxk = mx_[static_cast<std::size_t>(k)];
            for (std::int64_t j = 0; j < tree_.nodes_at(k); ++j) {
                const Eigen::VectorXd drift =
                    alpha * (s.A * x_.at(k).col(j) + s.B * u_.at(k).col(j) + s.F * mxk + s.b);
                const Eigen::VectorXd diffusion = alpha * (s.D * u_.at(k).col(j) + s.sigma);
                x_.at(k + 1).col(ScenarioTree::child_up(j)) =
                    x_.at(k).col(j) + dt * drift + sdt * diffusion;
                x_.at(k + 1).col(ScenarioTree::child_down(j)) =
                    x_.at(k).col(j) + dt * drift - sdt * diffusion;
            }
        }

        // (3) refresh E x
        new_mx_.resize(static_cast<std::size_t>(steps_ + 1));
        for (int k = 0; k <= steps_; ++k)
            new_mx_[static_cast<std::size_t>(k)] = expectation(x_, k);
        const MeanPath& row_mx = means_fixed_ ? mx_ : new_mx_;

        // (4) backward (y, z); the one-step equation is implicit in y
        y_.at(steps_) = alpha * (model_.Phi * x_.at(steps_));
        for (int k = steps_ - 1; k >= 0; --k) {
            const CoefficientSlice& s = levels_[static_cast<std::size_t>(k)].s;
            const auto& lu = y_step_[static_cast<std::size_t>(k)];
            for (std::int64_t j = 0; j < tree_.nodes_at(k); ++j) {
                const Eigen::VectorXd y_up = y_.at(k + 1).col(ScenarioTree::child_up(j));
                const Eigen::VectorXd y_dn = y_.at(k + 1).col(ScenarioTree::child_down(j));
                const Eigen::VectorXd rhs =
                    0.5 * (y_up + y_dn) +
                    alpha * dt *
                        (s.M * x_.at(k).col(j) + s.H * row_mx[static_cast<std::size_t>(k)] +
                         s.V * my_[static_cast<std::size_t>(k)] + s.K * u_.at(k).col(j) + s.f);
                y_.at(k).col(j) = lu.solve(rhs);
                z_.at(k).col(j) = (y_up - y_dn) / (2.0 * sdt);
            }
        }

        // (5) refresh E y
        new_my_.resize(static_cast<std::size_t>(steps_ + 1));
        for (int k = 0; k <= steps_; ++k)
            new_my_[static_cast<std::size_t>(k)] = expectation(y_, k);
        // Centering in the adjoint rows uses the exact mean of the processes
        // just swept (frozen means in the auxiliary problem); this keeps
        // E p = E q = 0 to roundoff at every level.
        const MeanPath& center_my = means_fixed_ ? my_ : new_my_;
        const MeanPath& center_mx = means_fixed_ ? mx_ : new_mx_;

        // (6) forward p (no diffusion; both children inherit the increment)
        new_p_.at(0).setZero();
        for (int k = 0; k < steps_; ++k) {
            const CoefficientSlice& s = levels_[static_cast<std::size_t>(k)].s;
            for (std::int64_t j = 0; j < tree_.nodes_at(k); ++j) {
                const Eigen::VectorXd next =
                    new_p_.at(k).col(j) +
                    alpha * dt *
                        (s.U_coef * new_p_.at(k).col(j) -
                         s.L * (y_.at(k).col(j) - center_my[static_cast<std::size_t>(k)]));
                new_p_.at(k + 1).col(ScenarioTree::child_up(j)) = next;
                new_p_.at(k + 1).col(ScenarioTree::child_down(j)) = next;
            }
        }

        // (7) backward (q, k) with the assembled terminal row
        new_q_.at(steps_) =
            alpha * (model_.Phi.transpose() * new_p_.at(steps_) -
                     model_.G * (x_.at(steps_).colwise() -
                                 center_mx[static_cast<std::size_t>(steps_)]));
        for (int k = steps_ - 1; k >= 0; --k) {
            const CoefficientSlice& s = levels_[static_cast<std::size_t>(k)].s;
            const auto& lu = q_step_[static_cast<std::size_t>(k)];
            for (std::int64_t j = 0; j < tree_.nodes_at(k); ++j) {
                const Eigen::VectorXd q_up = new_q_.at(k + 1).col(ScenarioTree::child_up(j));
                const Eigen::VectorXd q_dn = new_q_.at(k + 1).col(ScenarioTree::child_down(j));
                const Eigen::VectorXd rhs =
                    0.5 * (q_up + q_dn) +
                    alpha * dt *
                        (s.M * new_p_.at(k).col(j) -
                         s.Q * (x_.at(k).col(j) - center_mx[static_cast<std::size_t>(k)]));
                new_q_.at(k).col(j) = lu.solve(rhs);
                new_k_.at(k).col(j) = (q_up - q_dn) / (2.0 * sdt);
            }
        }

        // (8) residual: sup-norm change of the fixed-point variables
        double residual = std::max({sup_change(new_p_, acc_p_), sup_change(new_q_, acc_q_),
                                    sup_change(new_k_, acc_k_)});
        last_consistency_ = 0.0;
        for (int k = 0; k <= steps_; ++k) {
            last_consistency_ = std::max(
                last_consistency_,
                (new_mx_[static_cast<std::size_t>(k)] - mx_[static_cast<std::size_t>(k)])
                        .lpNorm<Eigen::Infinity>() +
                    (new_my_[static_cast<std::size_t>(k)] - my_[static_cast<std::size_t>(k)])
                        .lpNorm<Eigen::Infinity>());
        }
        if (!means_fixed_)
            residual = std::max({residual, sup_change(new_mx_, mx_), sup_change(new_my_, my_)});
        return residual;
    }

    CcSolution capture() {
        CcSolution sol;
        sol.state_x = x_;
        sol.state_y = y_;
        sol.state_z = z_;
        sol.adjoint_p = acc_p_;
        sol.adjoint_q = acc_q_;
        sol.adjoint_k = acc_k_;
        sol.control = u_;
        sol.mean_x = means_fixed_ ? mx_ : new_mx_;
        sol.mean_y = means_fixed_ ? my_ : new_my_;
        diag_.final_residual = diag_.residual_history.empty() ? 0.0 : diag_.residual_history.back();
        diag_.consistency_residual = last_consistency_;
        sol.diag = diag_;
        return sol;
    }

    const ModelSpec& model_;
    const ScenarioTree& tree_;
    SolveOptions opts_;
    bool means_fixed_;
    std::vector<LevelData> levels_;
    int n_, m_, steps_;

    TreeProcess acc_p_, acc_q_, acc_k_;
    MeanPath mx_, my_;
    TreeProcess x_, y_, z_, u_;
    TreeProcess new_p_, new_q_, new_k_;
    MeanPath new_mx_, new_my_;
    std::vector<Eigen::PartialPivLU<Eigen::MatrixXd>> y_step_, q_step_;
    double alpha_prepared_ = std::numeric_limits<double>::quiet_NaN();
    double last_consistency_ = 0.0;
    SolveDiagnostics diag_;
};

}  // namespace

CcSolution solve_cc(const ModelSpec& model, const ScenarioTree& tree, const SolveOptions& opts) {
    check_solvable(model, tree, opts.allow_permissive);
    CcEngine engine(model, tree, opts, /*means_fixed=*/false);
    return engine.run();
}

CcSolution solve_auxiliary(const ModelSpec& model, const ScenarioTree& tree,
                           const MeanPath& mean_x, const MeanPath& mean_y,
                           const SolveOptions& opts) {
    check_solvable(model, tree, opts.allow_permissive);
    CcEngine engine(model, tree, opts, /*means_fixed=*/true, mean_x, mean_y);
    return engine.run();
}

double check_max_principle(const ModelSpec& model, const ScenarioTree& tree,
                           const CcSolution& sol, int samples, std::uint64_t seed) {
    if (samples < 1) throw std::invalid_argument("check_max_principle: samples must be >= 1");
    double worst = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < tree.steps(); ++k) {
        const CoefficientSlice s = coeff_at(model, tree.time_at(k));
        const auto candidates =
            sample_boundary_and_interior(model.control_set, samples, derive_seed(seed, k));
        for (std::int64_t j = 0; j < tree.nodes_at(k); ++j) {
            const Eigen::VectorXd u = sol.control.at(k).col(j);
            const Eigen::VectorXd grad = s.B.transpose() * sol.adjoint_q.at(k).col(j) +
                                         s.K.transpose() * sol.adjoint_p.at(k).col(j) +
                                         s.D.transpose() * sol.adjoint_k.at(k).col(j) - s.R * u;
            for (const auto& v : candidates) worst = std::max(worst, grad.dot(v - u));
        }
    }
    return worst;
}

double limiting_cost(const ModelSpec& model, const ScenarioTree& tree, const TreeProcess& x,
                     const TreeProcess& y, const TreeProcess& u, const MeanPath& mean_x,
                     const MeanPath& mean_y) {
    const int steps = tree.steps();
    double running = 0.0;
    for (int k = 0; k < steps; ++k) {
        const CoefficientSlice s = coeff_at(model, tree.time_at(k));
        double level_sum = 0.0;
        for (std::int64_t j = 0; j < tree.nodes_at(k); ++j) {
            const Eigen::VectorXd dx = x.at(k).col(j) - mean_x[static_cast<std::size_t>(k)];
            const Eigen::VectorXd dy = y.at(k).col(j) - mean_y[static_cast<std::size_t>(k)];
            const Eigen::VectorXd uc = u.at(k).col(j);
            level_sum += dx.dot(s.Q * dx) + dy.dot(s.L * dy) + uc.dot(s.R * uc);
        }
        running += tree.dt() * level_sum / static_cast<double>(tree.nodes_at(k));
    }
    double terminal = 0.0;
    for (std::int64_t j = 0; j < tree.nodes_at(steps); ++j) {
        const Eigen::VectorXd dx = x.at(steps).col(j) - mean_x[static_cast<std::size_t>(steps)];
        terminal += dx.dot(model.G * dx);
    }
    terminal /= static_cast<double>(tree.nodes_at(steps));
    return 0.5 * (running + terminal);
}

ControlledStates integrate_for_control(const ModelSpec& model, const ScenarioTree& tree,
                                       const TreeProcess& control, const MeanPath& mean_x,
                                       const MeanPath& mean_y) {
    const int n = model.state_dim;
    const int steps = tree.steps();
    if (control.num_levels() != steps || control.dim != model.control_dim)
        throw std::invalid_argument("integrate_for_control: control shape mismatch");
    if (mean_x.size() != static_cast<std::size_t>(steps + 1) ||
        mean_y.size() != static_cast<std::size_t>(steps + 1))
        throw std::invalid_argument("integrate_for_control: mean paths must cover all levels");
    const double dt = tree.dt();
    const double sdt = tree.sqrt_dt();

    ControlledStates out{TreeProcess(n, steps + 1), TreeProcess(n, steps + 1),
                         TreeProcess(n, steps)};
    out.state_x.at(0).col(0) = model.x0;
    for (int k = 0; k < steps; ++k) {
        const CoefficientSlice s = coeff_at(model, tree.time_at(k));
        for (std::int64_t j = 0; j < tree.nodes_at(k); ++j) {
            const Eigen::VectorXd drift = s.A * out.state_x.at(k).col(j) +
                                          s.B * control.at(k).col(j) +
                                          s.F * mean_x[static_cast<std::size_t>(k)] + s.b;
            const Eigen::VectorXd diffusion = s.D * control.at(k).col(j) + s.sigma;
            out.state_x.at(k + 1).col(ScenarioTree::child_up(j)) =
                out.state_x.at(k).col(j) + dt * drift + sdt * diffusion;
            out.state_x.at(k + 1).col(ScenarioTree::child_down(j)) =
                out.state_x.at(k).col(j) + dt * drift - sdt * diffusion;
        }
    }
    out.state_y.at(steps) = model.Phi * out.state_x.at(steps);
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
    for (int k = steps - 1; k >= 0; --k) {
        const CoefficientSlice s = coeff_at(model, tree.time_at(k));
        const Eigen::PartialPivLU<Eigen::MatrixXd> lu(eye - dt * s.U_coef);
        for (std::int64_t j = 0; j < tree.nodes_at(k); ++j) {
            const Eigen::VectorXd y_up = out.state_y.at(k + 1).col(ScenarioTree::child_up(j));
            const Eigen::VectorXd y_dn = out.state_y.at(k + 1).col(ScenarioTree::child_down(j));
            const Eigen::VectorXd rhs =
                0.5 * (y_up + y_dn) +
                dt * (s.M * out.state_x.at(k).col(j) + s.H * mean_x[static_cast<std::size_t>(k)] +
                      s.V * mean_y[static_cast<std::size_t>(k)] + s.K * control.at(k).col(j) +
                      s.f);
            out.state_y.at(k).col(j) = lu.solve(rhs);
            out.state_z.at(k).col(j) = (y_up - y_dn) / (2.0 * sdt);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Direct sparse assembly of the unconstrained system (oracle path).

namespace {

class DirectAssembler {
public:
    DirectAssembler(const ModelSpec& model, const ScenarioTree& tree)
        : model_(model), tree_(tree), n_(model.state_dim), steps_(tree.steps()) {
        state_nodes_ = (std::int64_t{2} << steps_) - 1;  // levels 0..steps
        step_nodes_ = (std::int64_t{1} << steps_) - 1;   // levels 0..steps-1
        off_x_ = 0;
        off_y_ = off_x_ + state_nodes_ * n_;
        off_z_ = off_y_ + state_nodes_ * n_;
        off_p_ = off_z_ + step_nodes_ * n_;
        off_q_ = off_p_ + state_nodes_ * n_;
        off_k_ = off_q_ + state_nodes_ * n_;
        off_mx_ = off_k_ + step_nodes_ * n_;
        off_my_ = off_mx_ + (steps_ + 1) * n_;
        total_ = off_my_ + (steps_ + 1) * n_;
    }

    CcSolution solve() {
        assemble();
        Eigen::SparseMatrix<double> mat(total_, total_);
        mat.setFromTriplets(triplets_.begin(), triplets_.end());
        mat.makeCompressed();
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.analyzePattern(mat);
        lu.factorize(mat);
        if (lu.info() != Eigen::Success)
            throw std::runtime_error("solve_cc_direct_linear: stacked system is singular");
        const Eigen::VectorXd sol = lu.solve(rhs_);
        const double residual = (mat * sol - rhs_).cwiseAbs().maxCoeff();
        if (residual > 1e-10)
            throw std::runtime_error("solve_cc_direct_linear: equation residual above 1e-10");
        return extract(sol, residual);
    }

private:
    std::int64_t level_base(int level) const { return (std::int64_t{1} << level) - 1; }
    std::int64_t idx(std::int64_t off, int level, std::int64_t node, int comp) const {
        return off + (level_base(level) + node) * n_ + comp;
    }
    std::int64_t idx_mean(std::int64_t off, int level, int comp) const {
        return off + static_cast<std::int64_t>(level) * n_ + comp;
    }

    void add_block(std::int64_t row0, std::int64_t col0, const Eigen::MatrixXd& mat,
                   double scale) {
        for (Eigen::Index r = 0; r < mat.rows(); ++r)
            for (Eigen::Index c = 0; c < mat.cols(); ++c)
                if (mat(r, c) != 0.0 || r == c)
                    triplets_.emplace_back(row0 + r, col0 + c, scale * mat(r, c));
    }

    void add_identity(std::int64_t row0, std::int64_t col0, double scale) {
        for (int c = 0; c < n_; ++c) triplets_.emplace_back(row0 + c, col0 + c, scale);
    }

    void assemble() {
        rhs_ = Eigen::VectorXd::Zero(total_);
        const double dt = tree_.dt();
        const double sdt = tree_.sqrt_dt();
        const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n_, n_);
        std::int64_t row = 0;

        // x(0,0) = x0 ; p(0,0) = 0
        add_identity(row, idx(off_x_, 0, 0, 0), 1.0);
        rhs_.segment(row, n_) = model_.x0;
        row += n_;
        add_identity(row, idx(off_p_, 0, 0, 0), 1.0);
        row += n_;

        for (int k = 0; k < steps_; ++k) {
            const CoefficientSlice s = coeff_at(model_, tree_.time_at(k));
            const Eigen::MatrixXd r_inv = s.R.llt().solve(Eigen::MatrixXd::Identity(
                model_.control_dim, model_.control_dim));
            // unconstrained control: u = R^{-1}(B^T q + K^T p + D^T k)
            const Eigen::MatrixXd u_q = r_inv * s.B.transpose();
            const Eigen::MatrixXd u_p = r_inv * s.K.transpose();
            const Eigen::MatrixXd u_k = r_inv * s.D.transpose();

            for (std::int64_t j = 0; j < tree_.nodes_at(k); ++j) {
                for (int branch = 0; branch < 2; ++branch) {
                    const std::int64_t child = 2 * j + branch;
                    const double sign = (branch == 0) ? 1.0 : -1.0;
                    // x(k+1,c) - (I + dt A)x(k,j) - (dt B + s sdt D)u(k,j) - dt F mx(k)
                    //   = dt b + s sdt sigma
                    add_identity(row, idx(off_x_, k + 1, child, 0), 1.0);
                    add_block(row, idx(off_x_, k, j, 0), eye + dt * s.A, -1.0);
                    const Eigen::MatrixXd load = dt * s.B + sign * sdt * s.D;
                    add_block(row, idx(off_q_, k, j, 0), load * u_q, -1.0);
                    add_block(row, idx(off_p_, k, j, 0), load * u_p, -1.0);
                    add_block(row, idx(off_k_, k, j, 0), load * u_k, -1.0);
                    add_block(row, idx_mean(off_mx_, k, 0), s.F, -dt);
                    rhs_.segment(row, n_) = dt * s.b + sign * sdt * s.sigma;
                    row += n_;

                    // p(k+1,c) - (I + dt U)p(k,j) + dt L y(k,j) - dt L my(k) = 0
                    add_identity(row, idx(off_p_, k + 1, child, 0), 1.0);
                    add_block(row, idx(off_p_, k, j, 0), eye + dt * s.U_coef, -1.0);
                    add_block(row, idx(off_y_, k, j, 0), s.L, dt);
                    add_block(row, idx_mean(off_my_, k, 0), s.L, -dt);
                    row += n_;
                }

                // (I - dt U) y(k,j) - avg children - dt M x - dt H mx - dt V my
                //   - dt K u(k,j) = dt f
                add_block(row, idx(off_y_, k, j, 0), eye - dt * s.U_coef, 1.0);
                add_identity(row, idx(off_y_, k + 1, 2 * j, 0), -0.5);
                add_identity(row, idx(off_y_, k + 1, 2 * j + 1, 0), -0.5);
                add_block(row, idx(off_x_, k, j, 0), s.M, -dt);
                add_block(row, idx_mean(off_mx_, k, 0), s.H, -dt);
                add_block(row, idx_mean(off_my_, k, 0), s.V, -dt);
                add_block(row, idx(off_q_, k, j, 0), s.K * u_q, -dt);
                add_block(row, idx(off_p_, k, j, 0), s.K * u_p, -dt);
                add_block(row, idx(off_k_, k, j, 0), s.K * u_k, -dt);
                rhs_.segment(row, n_) = dt * s.f;
                row += n_;

                // z(k,j) = (y_up - y_dn) / (2 sdt)
                add_identity(row, idx(off_z_, k, j, 0), 1.0);
                add_identity(row, idx(off_y_, k + 1, 2 * j, 0), -0.5 / sdt);
                add_identity(row, idx(off_y_, k + 1, 2 * j + 1, 0), 0.5 / sdt);
                row += n_;

                // (I - dt A) q(k,j) - avg children - dt M p(k,j) + dt Q x(k,j)
                //   - dt Q mx(k) = 0
                add_block(row, idx(off_q_, k, j, 0), eye - dt * s.A, 1.0);
                add_identity(row, idx(off_q_, k + 1, 2 * j, 0), -0.5);
                add_identity(row, idx(off_q_, k + 1, 2 * j + 1, 0), -0.5);
                add_block(row, idx(off_p_, k, j, 0), s.M, -dt);
                add_block(row, idx(off_x_, k, j, 0), s.Q, dt);
                add_block(row, idx_mean(off_mx_, k, 0), s.Q, -dt);
                row += n_;

                // k(k,j) = (q_up - q_dn) / (2 sdt)
                add_identity(row, idx(off_k_, k, j, 0), 1.0);
                add_identity(row, idx(off_q_, k + 1, 2 * j, 0), -0.5 / sdt);
                add_identity(row, idx(off_q_, k + 1, 2 * j + 1, 0), 0.5 / sdt);
                row += n_;
            }
        }

        // terminal rows at the leaves
        for (std::int64_t j = 0; j < tree_.nodes_at(steps_); ++j) {
            add_identity(row, idx(off_y_, steps_, j, 0), 1.0);
            add_block(row, idx(off_x_, steps_, j, 0), model_.Phi, -1.0);
            row += n_;

            add_identity(row, idx(off_q_, steps_, j, 0), 1.0);
            add_block(row, idx(off_p_, steps_, j, 0), model_.Phi.transpose(), -1.0);
            add_block(row, idx(off_x_, steps_, j, 0), model_.G, 1.0);
            add_block(row, idx_mean(off_mx_, steps_, 0), model_.G, -1.0);
            row += n_;
        }

        // mean-coupling rows
        for (int k = 0; k <= steps_; ++k) {
            const double w = 1.0 / static_cast<double>(tree_.nodes_at(k));
            for (int c = 0; c < n_; ++c) {
                triplets_.emplace_back(row + c, idx_mean(off_mx_, k, c), 1.0);
                triplets_.emplace_back(row + n_ + c, idx_mean(off_my_, k, c), 1.0);
            }
            for (std::int64_t j = 0; j < tree_.nodes_at(k); ++j) {
                for (int c = 0; c < n_; ++c) {
                    triplets_.emplace_back(row + c, idx(off_x_, k, j, c), -w);
                    triplets_.emplace_back(row + n_ + c, idx(off_y_, k, j, c), -w);
                }
            }
            row += 2 * n_;
        }

        if (row != total_) throw std::logic_error("solve_cc_direct_linear: row count mismatch");
    }

    CcSolution extract(const Eigen::VectorXd& sol, double residual) const {
        CcSolution out;
        out.state_x = TreeProcess(n_, steps_ + 1);
        out.state_y = TreeProcess(n_, steps_ + 1);
        out.state_z = TreeProcess(n_, steps_);
        out.adjoint_p = TreeProcess(n_, steps_ + 1);
        out.adjoint_q = TreeProcess(n_, steps_ + 1);
        out.adjoint_k = TreeProcess(n_, steps_);
        out.control = TreeProcess(model_.control_dim, steps_);
        for (int k = 0; k <= steps_; ++k) {
            for (std::int64_t j = 0; j < tree_.nodes_at(k); ++j) {
                for (int c = 0; c < n_; ++c) {
                    out.state_x.at(k)(c, j) = sol[idx(off_x_, k, j, c)];
                    out.state_y.at(k)(c, j) = sol[idx(off_y_, k, j, c)];
                    out.adjoint_p.at(k)(c, j) = sol[idx(off_p_, k, j, c)];
                    out.adjoint_q.at(k)(c, j) = sol[idx(off_q_, k, j, c)];
                    if (k < steps_) {
                        out.state_z.at(k)(c, j) = sol[idx(off_z_, k, j, c)];
                        out.adjoint_k.at(k)(c, j) = sol[idx(off_k_, k, j, c)];
                    }
                }
            }
        }
        for (int k = 0; k < steps_; ++k) {
            const CoefficientSlice s = coeff_at(model_, tree_.time_at(k));
            const Eigen::LLT<Eigen::MatrixXd> llt(s.R);
            for (std::int64_t j = 0; j < tree_.nodes_at(k); ++j) {
                out.control.at(k).col(j) = llt.solve(
                    s.B.transpose() * out.adjoint_q.at(k).col(j) +
                    s.K.transpose() * out.adjoint_p.at(k).col(j) +
                    s.D.transpose() * out.adjoint_k.at(k).col(j));
            }
        }
        out.mean_x.resize(static_cast<std::size_t>(steps_ + 1));
        out.mean_y.resize(static_cast<std::size_t>(steps_ + 1));
        for (int k = 0; k <= steps_; ++k) {
            Eigen::VectorXd mx(n_), my(n_);
            for (int c = 0; c < n_; ++c) {
                mx[c] = sol[idx_mean(off_mx_, k, c)];
                my[c] = sol[idx_mean(off_my_, k, c)];
            }
            out.mean_x[static_cast<std::size_t>(k)] = mx;
            out.mean_y[static_cast<std::size_t>(k)] = my;
        }
        out.diag.converged = true;
        out.diag.final_residual = residual;
        out.diag.consistency_residual = residual;
        out.diag.alpha_path = {1.0};
        return out;
    }

    const ModelSpec& model_;
    const ScenarioTree& tree_;
    int n_, steps_;
    std::int64_t state_nodes_ = 0, step_nodes_ = 0;
    std::int64_t off_x_ = 0, off_y_ = 0, off_z_ = 0, off_p_ = 0, off_q_ = 0, off_k_ = 0;
    std::int64_t off_mx_ = 0, off_my_ = 0, total_ = 0;
    std::vector<Eigen::Triplet<double>> triplets_;
    Eigen::VectorXd rhs_;
};

}  // namespace

CcSolution solve_cc_direct_linear(const ModelSpec& model, const ScenarioTree& tree,
                                  bool allow_permissive) {
    if (model.control_set.kind() != SetKind::Whole)
        throw std::invalid_argument(
            "solve_cc_direct_linear: only control_set = whole is supported");
    check_solvable(model, tree, allow_permissive);
    DirectAssembler assembler(model, tree);
    return assembler.solve();
}

}  // namespace mfg
