#include "mfg/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mfg {

PiecewiseMatrix PiecewiseMatrix::constant(Eigen::MatrixXd v, double horizon) {
    PiecewiseMatrix p;
    p.mesh = {0.0, horizon};
    p.values.push_back(std::move(v));
    return p;
}

const Eigen::MatrixXd& PiecewiseMatrix::at(double t) const {
    if (values.empty()) throw std::logic_error("PiecewiseMatrix: empty function");
    if (t < mesh.front() || t > mesh.back())
        throw std::out_of_range("PiecewiseMatrix: t outside [0, T]");
    // right-continuous: last breakpoint <= t, clamped into the final cell
    std::size_t j = 0;
    while (j + 1 < mesh.size() && mesh[j + 1] <= t) ++j;
    if (j >= values.size()) j = values.size() - 1;
    return values[j];
}

CoefficientSlice coeff_at(const ModelSpec& spec, double t) {
    if (t < 0.0 || t > spec.horizon)
        throw std::out_of_range("coeff_at: t outside [0, T]");
    CoefficientSlice s;
    s.A = spec.A.at(t);
    s.F = spec.F.at(t);
    s.M = spec.M.at(t);
    s.U_coef = spec.U_coef.at(t);
    s.H = spec.H.at(t);
    s.V = spec.V.at(t);
    s.B = spec.B.at(t);
    s.D = spec.D.at(t);
    s.K = spec.K.at(t);
    s.b = spec.b.at(t).col(0);
    s.sigma = spec.sigma.at(t).col(0);
    s.f = spec.f.at(t).col(0);
    s.Q = spec.Q.at(t);
    s.L = spec.L.at(t);
    s.R = spec.R.at(t);
    return s;
}

namespace {

struct PwRef {
    const char* name;
    const PiecewiseMatrix* fn;
    Eigen::Index rows;
    Eigen::Index cols;
};

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument("ModelSpec: " + msg);
}

void check_mesh(const char* name, const PiecewiseMatrix& fn, double horizon) {
    require(!fn.values.empty(), std::string(name) + " has no values");
    require(fn.mesh.size() == fn.values.size() + 1,
            std::string(name) + " mesh must have values.size()+1 breakpoints");
    require(std::abs(fn.mesh.front()) <= 1e-12, std::string(name) + " mesh must start at 0");
    require(std::abs(fn.mesh.back() - horizon) <= 1e-12 * std::max(1.0, horizon),
            std::string(name) + " mesh must end at T");
    for (std::size_t j = 0; j + 1 < fn.mesh.size(); ++j)
        require(fn.mesh[j] < fn.mesh[j + 1], std::string(name) + " mesh must be strictly increasing");
}

bool all_finite(const PiecewiseMatrix& fn) {
    for (const auto& v : fn.values)
        if (!v.allFinite()) return false;
    return true;
}

double asym_norm(const Eigen::MatrixXd& x) {
    return (x - x.transpose()).cwiseAbs().maxCoeff();
}

double sym_tolerance(const Eigen::MatrixXd& x) {
    return 1e-12 * std::max(1.0, x.cwiseAbs().maxCoeff());
}

double min_eigenvalue(const Eigen::MatrixXd& x) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

double condition_number(const Eigen::MatrixXd& x) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (lo <= 0.0) return std::numeric_limits<double>::infinity();
    return hi / lo;
}

}  // namespace

ValidationReport validate(const ModelSpec& spec, ValidationMode mode) {
    const int n = spec.state_dim;
    const int m = spec.control_dim;
    require(n >= 1 && m >= 1, "state and control dimensions must be >= 1");
    require(spec.horizon > 0.0 && std::isfinite(spec.horizon), "horizon must be positive and finite");
    require(spec.x0.size() == n, "x0 dimension mismatch");
    require(spec.control_set.dim() == m, "control_set dimension mismatch");
    require(spec.Phi.rows() == n && spec.Phi.cols() == n, "Phi dimension mismatch");
    require(spec.G.rows() == n && spec.G.cols() == n, "G dimension mismatch");

    const PwRef refs[] = {
        {"A", &spec.A, n, n},      {"F", &spec.F, n, n},      {"M", &spec.M, n, n},
        {"U_coef", &spec.U_coef, n, n}, {"H", &spec.H, n, n}, {"V", &spec.V, n, n},
        {"B", &spec.B, n, m},      {"D", &spec.D, n, m},      {"K", &spec.K, n, m},
        {"b", &spec.b, n, 1},      {"sigma", &spec.sigma, n, 1}, {"f", &spec.f, n, 1},
        {"Q", &spec.Q, n, n},      {"L", &spec.L, n, n},      {"R", &spec.R, m, m},
    };
    for (const auto& r : refs) {
        check_mesh(r.name, *r.fn, spec.horizon);
        for (const auto& v : r.fn->values)
            require(v.rows() == r.rows && v.cols() == r.cols,
                    std::string(r.name) + " dimension mismatch");
    }

    // Non-symmetric weights cannot be downgraded.
    for (const auto& v : spec.Q.values)
        require(asym_norm(v) <= sym_tolerance(v), "Q must be symmetric");
    for (const auto& v : spec.L.values)
        require(asym_norm(v) <= sym_tolerance(v), "L must be symmetric");
    for (const auto& v : spec.R.values)
        require(asym_norm(v) <= sym_tolerance(v), "R must be symmetric");
    require(asym_norm(spec.G) <= sym_tolerance(spec.G), "G must be symmetric");

    ValidationReport report;
    auto violate = [&report](const char* field, const char* rule, std::string detail) {
        report.violations.push_back({field, rule, std::move(detail)});
    };

    for (const auto& r : refs) {
        if (!all_finite(*r.fn)) violate(r.name, "finite", "coefficient has non-finite entries");
    }
    if (!spec.Phi.allFinite()) violate("Phi", "finite", "non-finite entries");
    if (!spec.G.allFinite()) violate("G", "finite", "non-finite entries");
    if (!spec.x0.allFinite()) violate("x0", "finite", "non-finite entries");

    // Drift coefficients are symmetric matrices under the standing
    // assumptions; permissive mode admits general square matrices.
    if (mode == ValidationMode::Strict) {
        const PwRef square[] = {refs[0], refs[1], refs[2], refs[3], refs[4], refs[5]};
        for (const auto& r : square) {
            for (const auto& v : r.fn->values) {
                if (asym_norm(v) > sym_tolerance(v)) {
                    violate(r.name, "symmetric", "drift coefficient not symmetric");
                    break;
                }
            }
        }
    }

    const double psd_slack = 1e-10;
    for (std::size_t j = 0; j < spec.Q.values.size(); ++j) {
        const double ev = min_eigenvalue(spec.Q.values[j]);
        if (ev < -psd_slack) {
            violate("Q", "psd", "min eigenvalue " + std::to_string(ev));
            break;
        }
    }
    for (std::size_t j = 0; j < spec.L.values.size(); ++j) {
        const double ev = min_eigenvalue(spec.L.values[j]);
        if (ev < -psd_slack) {
            violate("L", "psd", "min eigenvalue " + std::to_string(ev));
            break;
        }
    }
    for (std::size_t j = 0; j < spec.R.values.size(); ++j) {
        const double ev = min_eigenvalue(spec.R.values[j]);
        if (!(ev > 0.0)) {
            violate("R", "pd", "min eigenvalue " + std::to_string(ev));
            break;
        }
        const double cond = condition_number(spec.R.values[j]);
        if (cond > 1e8) {
            violate("R", "condition", "condition number " + std::to_string(cond));
            break;
        }
    }
    {
        const double ev = min_eigenvalue(spec.G);
        if (mode == ValidationMode::Strict) {
            if (!(ev > 0.0)) violate("G", "pd", "min eigenvalue " + std::to_string(ev));
        } else {
            if (ev < -psd_slack) violate("G", "psd", "min eigenvalue " + std::to_string(ev));
        }
    }

    report.strict_pass = report.violations.empty();
    return report;
}

void symmetrize_weights(ModelSpec& spec) {
    auto sym = [](Eigen::MatrixXd& x, const char* name) {
        if (x.rows() != x.cols())
            throw std::invalid_argument(std::string("ModelSpec: ") + name + " must be square");
        if (asym_norm(x) > sym_tolerance(x))
            throw std::invalid_argument(std::string("ModelSpec: ") + name + " must be symmetric");
        // commutativity of + makes the result bitwise symmetric
        x = 0.5 * (x + x.transpose()).eval();
    };
    for (auto& v : spec.Q.values) sym(v, "Q");
    for (auto& v : spec.L.values) sym(v, "L");
    for (auto& v : spec.R.values) sym(v, "R");
    sym(spec.G, "G");
}

}  // namespace mfg
