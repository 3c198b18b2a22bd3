#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mfg/convex_set.hpp"

namespace mfg {

/// Piecewise-constant matrix-valued function of time on [0, T].
///
/// mesh holds the full breakpoint list t_0 = 0 < t_1 < ... < t_K = T and
/// values[j] is the value on [t_j, t_{j+1}); evaluation is right-continuous
/// at interior breakpoints and the last cell is closed at T. Vectors are
/// carried as single-column matrices.
struct PiecewiseMatrix {
    std::vector<double> mesh;
    std::vector<Eigen::MatrixXd> values;

    static PiecewiseMatrix constant(Eigen::MatrixXd v, double horizon);

    const Eigen::MatrixXd& at(double t) const;
    bool empty() const { return values.empty(); }
    Eigen::Index rows() const { return values.empty() ? 0 : values.front().rows(); }
    Eigen::Index cols() const { return values.empty() ? 0 : values.front().cols(); }
};

/// All coefficient data of the game. The paper-level letter U is used for
/// both a drift coefficient and the control set; here the coefficient is
/// U_coef and the set control_set.
struct ModelSpec {
    int state_dim = 0;    // n
    int control_dim = 0;  // m
    double horizon = 0.0; // T
    Eigen::VectorXd x0;

    PiecewiseMatrix A, F, M, U_coef, H, V;  // n x n drift coefficients
    PiecewiseMatrix B, D, K;                // n x m control loadings
    PiecewiseMatrix b, sigma, f;            // n-vector inhomogeneities
    PiecewiseMatrix Q, L;                   // n x n running weights (PSD)
    PiecewiseMatrix R;                      // m x m control weight (PD)
    Eigen::MatrixXd Phi;                    // n x n terminal coupling y_T = Phi x_T
    Eigen::MatrixXd G;                      // n x n terminal weight

    ConvexSet control_set{ConvexSet::whole(1)};
};

/// All coefficients evaluated at one time.
struct CoefficientSlice {
    Eigen::MatrixXd A, F, M, U_coef, H, V;
    Eigen::MatrixXd B, D, K;
    Eigen::VectorXd b, sigma, f;
    Eigen::MatrixXd Q, L, R;
};

/// Piecewise-constant value of every coefficient at t in [0, T].
/// Throws std::out_of_range outside the horizon.
CoefficientSlice coeff_at(const ModelSpec& spec, double t);

enum class ValidationMode { Strict, Permissive };

struct Violation {
    std::string field;
    std::string rule;
    std::string detail;
};

struct ValidationReport {
    bool strict_pass = false;  // pass under the requested mode
    std::vector<Violation> violations;
};

/// Checks the standing assumptions on the coefficients. Strict mode enforces
/// them verbatim (G > 0); permissive mode relaxes the terminal weight to
/// G >= 0 so that degenerate analytic fixtures are admissible.
///
/// Dimension mismatches and non-symmetric weights are hard errors
/// (std::invalid_argument) in both modes; they cannot be downgraded.
ValidationReport validate(const ModelSpec& spec, ValidationMode mode);

/// Replaces the weight matrices by their exact symmetrizations (X + X^T)/2.
/// Inputs asymmetric beyond roundoff tolerance are rejected. Called by the
/// JSON loader so accepted specs satisfy ||Q - Q^T|| = 0 exactly.
void symmetrize_weights(ModelSpec& spec);

}  // namespace mfg
