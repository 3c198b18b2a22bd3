#include "mfg/convex_set.hpp"

#include <cmath>
#include <stdexcept>

#include "mfg/rng.hpp"

namespace mfg {

std::string to_string(SetKind kind) {
    switch (kind) {
        case SetKind::Whole: return "whole";
        case SetKind::Box: return "box";
        case SetKind::Ball: return "ball";
        case SetKind::Orthant: return "orthant";
    }
    return "?";
}

ConvexSet ConvexSet::whole(int dim) {
    if (dim < 1) throw std::invalid_argument("ConvexSet: dim must be >= 1");
    ConvexSet s;
    s.kind_ = SetKind::Whole;
    s.dim_ = dim;
    return s;
}

ConvexSet ConvexSet::box(Eigen::VectorXd lo, Eigen::VectorXd hi) {
    if (lo.size() != hi.size() || lo.size() < 1)
        throw std::invalid_argument("ConvexSet: box bounds must have equal positive dimension");
    if (((hi - lo).array() < 0.0).any())
        throw std::invalid_argument("ConvexSet: box requires lo <= hi componentwise");
    ConvexSet s;
    s.kind_ = SetKind::Box;
    s.dim_ = static_cast<int>(lo.size());
    s.lo_ = std::move(lo);
    s.hi_ = std::move(hi);
    return s;
}

ConvexSet ConvexSet::ball(Eigen::VectorXd center, double radius) {
    if (center.size() < 1) throw std::invalid_argument("ConvexSet: ball center must be nonempty");
    if (!(radius > 0.0)) throw std::invalid_argument("ConvexSet: ball radius must be > 0");
    ConvexSet s;
    s.kind_ = SetKind::Ball;
    s.dim_ = static_cast<int>(center.size());
    s.center_ = std::move(center);
    s.radius_ = radius;
    return s;
}

ConvexSet ConvexSet::orthant(int dim) {
    if (dim < 1) throw std::invalid_argument("ConvexSet: dim must be >= 1");
    ConvexSet s;
    s.kind_ = SetKind::Orthant;
    s.dim_ = dim;
    return s;
}

Eigen::VectorXd ConvexSet::euclidean_project(const Eigen::VectorXd& v) const {
    if (v.size() != dim_) throw std::invalid_argument("ConvexSet: dimension mismatch");
    switch (kind_) {
        case SetKind::Whole:
            return v;
        case SetKind::Box:
            return v.cwiseMax(lo_).cwiseMin(hi_);
        case SetKind::Orthant:
            return v.cwiseMax(0.0);
        case SetKind::Ball: {
            const Eigen::VectorXd d = v - center_;
            const double norm = d.norm();
            if (norm <= radius_) return v;
            return center_ + (radius_ / norm) * d;
        }
    }
    throw std::logic_error("unreachable");
}

double ConvexSet::euclidean_distance(const Eigen::VectorXd& v) const {
    if (kind_ == SetKind::Ball) {
        // avoids cancellation for points far outside
        return std::max(0.0, (v - center_).norm() - radius_);
    }
    return (v - euclidean_project(v)).norm();
}

bool ConvexSet::contains(const Eigen::VectorXd& v, double tol) const {
    if (v.size() != dim_) throw std::invalid_argument("ConvexSet: dimension mismatch");
    return euclidean_distance(v) <= tol;
}

namespace {

void check_spd(const Eigen::MatrixXd& R, int dim) {
    if (R.rows() != dim || R.cols() != dim)
        throw std::invalid_argument("project: weight matrix dimension mismatch");
    const double scale = std::max(1.0, R.cwiseAbs().maxCoeff());
    if ((R - R.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw std::invalid_argument("project: weight matrix must be symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(R);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("project: weight matrix must be positive definite");
}

bool is_diagonal(const Eigen::MatrixXd& R) {
    for (Eigen::Index i = 0; i < R.rows(); ++i)
        for (Eigen::Index j = 0; j < R.cols(); ++j)
            if (i != j && R(i, j) != 0.0) return false;
    return true;
}

}  // namespace

WeightedProjectionResult project(const ConvexSet& set, const Eigen::MatrixXd& R,
                                 const Eigen::VectorXd& v) {
    if (v.size() != set.dim()) throw std::invalid_argument("project: point dimension mismatch");
    check_spd(R, set.dim());

    WeightedProjectionResult res;
    if (set.kind() == SetKind::Whole) {
        res.point = v;
        return res;
    }
    // Componentwise clamp is exact when the objective separates.
    if (is_diagonal(R) && (set.kind() == SetKind::Box || set.kind() == SetKind::Orthant)) {
        res.point = set.euclidean_project(v);
        return res;
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R);
    const double lambda_max = es.eigenvalues().maxCoeff();
    if (!(lambda_max > 0.0))
        throw std::invalid_argument("project: weight matrix must be positive definite");
    const double step = 1.0 / lambda_max;

    constexpr double kKktTol = 1e-12;
    constexpr int kMaxIters = 100000;

    Eigen::VectorXd u = set.euclidean_project(v);
    double residual = 0.0;
    for (int it = 0; it < kMaxIters; ++it) {
        const Eigen::VectorXd grad = R * (u - v);
        const Eigen::VectorXd next = set.euclidean_project(u - step * grad);
        residual = (u - next).lpNorm<Eigen::Infinity>() / step;
        res.iterations = it + 1;
        if (residual < kKktTol) {
            res.point = next;
            res.kkt_residual = residual;
            return res;
        }
        u = next;
    }
    throw std::runtime_error("project: projected gradient failed to reach KKT residual 1e-12 in 1e5 iterations");
}

std::vector<Eigen::VectorXd> sample_boundary_and_interior(const ConvexSet& set, int count,
                                                          std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("sample_boundary_and_interior: count must be >= 1");
    Rng rng = make_rng(derive_seed(seed, 0xC0FFEEULL));
    const int m = set.dim();
    std::vector<Eigen::VectorXd> pts;
    pts.reserve(static_cast<std::size_t>(count));
    for (int c = 0; c < count; ++c) {
        Eigen::VectorXd p(m);
        const bool boundary = (c % 3 == 2);
        switch (set.kind()) {
            case SetKind::Whole:
                for (int i = 0; i < m; ++i) p[i] = 2.0 * normal(rng);
                break;
            case SetKind::Box: {
                for (int i = 0; i < m; ++i) {
                    const double t = uniform01(rng);
                    p[i] = set.lo()[i] + t * (set.hi()[i] - set.lo()[i]);
                }
                p = p.cwiseMax(set.lo()).cwiseMin(set.hi());
                if (boundary) {
                    const int i = static_cast<int>(rng() % static_cast<std::uint64_t>(m));
                    p[i] = (rng() & 1) ? set.hi()[i] : set.lo()[i];
                }
                break;
            }
            case SetKind::Orthant: {
                for (int i = 0; i < m; ++i) p[i] = std::abs(normal(rng));
                if (boundary) p[static_cast<int>(rng() % static_cast<std::uint64_t>(m))] = 0.0;
                break;
            }
            case SetKind::Ball: {
                Eigen::VectorXd dir(m);
                double norm = 0.0;
                do {
                    for (int i = 0; i < m; ++i) dir[i] = normal(rng);
                    norm = dir.norm();
                } while (norm < 1e-12);
                dir /= norm;
                const double rho = boundary ? 1.0 : std::pow(uniform01(rng), 1.0 / m);
                p = set.center() + (set.radius() * rho) * dir;
                // snap roundoff back inside
                p = set.euclidean_project(p);
                break;
            }
        }
        pts.push_back(std::move(p));
    }
    return pts;
}

}  // namespace mfg
