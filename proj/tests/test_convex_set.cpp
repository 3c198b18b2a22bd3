#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "mfg/convex_set.hpp"
#include "mfg/rng.hpp"

using namespace mfg;

namespace {

Eigen::MatrixXd random_spd(int m, Rng& rng, double eig_lo = 0.5, double eig_hi = 3.0) {
    Eigen::MatrixXd a(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) a(i, j) = normal(rng);
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    const Eigen::MatrixXd q = qr.householderQ();
    Eigen::VectorXd eig(m);
    for (int i = 0; i < m; ++i) eig[i] = eig_lo + uniform01(rng) * (eig_hi - eig_lo);
    Eigen::MatrixXd r = q * eig.asDiagonal() * q.transpose();
    return 0.5 * (r + r.transpose());
}

ConvexSet random_set(int kind, int m, Rng& rng) {
    switch (kind) {
        case 0: return ConvexSet::whole(m);
        case 1: {
            Eigen::VectorXd lo(m), hi(m);
            for (int i = 0; i < m; ++i) {
                const double a = -1.0 + 2.0 * uniform01(rng);
                const double b = -1.0 + 2.0 * uniform01(rng);
                lo[i] = std::min(a, b);
                hi[i] = std::max(a, b);
            }
            return ConvexSet::box(lo, hi);
        }
        case 2: {
            Eigen::VectorXd c(m);
            for (int i = 0; i < m; ++i) c[i] = normal(rng);
            return ConvexSet::ball(c, 0.2 + 2.0 * uniform01(rng));
        }
        default: return ConvexSet::orthant(m);
    }
}

/// Dense grid minimizer of the weighted distance over a window, iteratively
/// refined; independent of the production projection path.
Eigen::Vector2d grid_minimize_orthant(const Eigen::Matrix2d& R, const Eigen::Vector2d& v) {
    Eigen::Vector2d center(1.5, 1.5);
    double span = 3.0;
    Eigen::Vector2d best = center;
    for (int stage = 0; stage < 5; ++stage) {
        double best_val = std::numeric_limits<double>::infinity();
        Eigen::Vector2d best_pt = best;
        const int grid = 100;
        for (int i = 0; i <= grid; ++i) {
            for (int j = 0; j <= grid; ++j) {
                Eigen::Vector2d u(center[0] - span / 2 + span * i / grid,
                                  center[1] - span / 2 + span * j / grid);
                u = u.cwiseMax(0.0);  // stay in the orthant
                const double val = (u - v).dot(R * (u - v));
                if (val < best_val) {
                    best_val = val;
                    best_pt = u;
                }
            }
        }
        best = best_pt;
        center = best_pt;
        span = 4.0 * span / grid;
    }
    return best;
}

}  // namespace

TEST_CASE("projection closed forms") {
    Eigen::VectorXd v(2);
    v << 3.0, -2.0;
    auto res = project(ConvexSet::whole(2), Eigen::MatrixXd::Identity(2, 2), v);
    CHECK(res.point == v);
    CHECK(res.iterations == 0);

    Eigen::VectorXd lo = Eigen::VectorXd::Zero(2), hi = Eigen::VectorXd::Ones(2);
    v << 2.0, 0.5;
    res = project(ConvexSet::box(lo, hi), Eigen::MatrixXd::Identity(2, 2), v);
    CHECK(res.point[0] == 1.0);
    CHECK(res.point[1] == 0.5);
}

TEST_CASE("weighted orthant projection against grid oracle") {
    Eigen::Matrix2d R;
    R << 2.0, 1.0, 1.0, 2.0;
    Eigen::Vector2d v(1.0, -1.0);
    const auto res = project(ConvexSet::orthant(2), R, v);
    // active-set value, confirmed by the refined grid minimizer
    CHECK(std::abs(res.point[0] - 0.5) <= 1e-9);
    CHECK(std::abs(res.point[1] - 0.0) <= 1e-9);
    const Eigen::Vector2d oracle = grid_minimize_orthant(R, v);
    CHECK((res.point - oracle).norm() <= 1e-6);
}

TEST_CASE("contains") {
    Eigen::VectorXd u(2);
    u << 0.5, 0.5;
    CHECK(ConvexSet::box(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2)).contains(u, 0.0));
    u << -1e-13, 0.0;
    CHECK(ConvexSet::orthant(2).contains(u, 1e-12));
    u << 2.0, 0.0;
    CHECK_FALSE(ConvexSet::ball(Eigen::VectorXd::Zero(2), 1.0).contains(u, 1e-9));
}

TEST_CASE("sampling is deterministic and feasible") {
    const auto a = sample_boundary_and_interior(ConvexSet::whole(3), 3, 7);
    const auto b = sample_boundary_and_interior(ConvexSet::whole(3), 3, 7);
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

    Rng rng = make_rng(20240);
    for (int kind = 0; kind < 4; ++kind) {
        for (int m : {1, 2, 4}) {
            const ConvexSet set = random_set(kind, m, rng);
            const auto pts = sample_boundary_and_interior(set, 60, 5 + kind);
            for (const auto& p : pts) CHECK(set.contains(p, 1e-12));
        }
    }

    const auto ball_pts =
        sample_boundary_and_interior(ConvexSet::ball(Eigen::VectorXd::Zero(2), 1.0), 100, 1);
    for (const auto& p : ball_pts) CHECK(p.norm() <= 1.0 + 1e-12);
}

TEST_CASE("variational characterization, nonexpansiveness, monotonicity, idempotence") {
    Rng rng = make_rng(314159);
    for (int trial = 0; trial < 200; ++trial) {
        const int m = (trial % 3 == 0) ? 1 : (trial % 3 == 1 ? 2 : 4);
        const ConvexSet set = random_set(trial % 4, m, rng);
        const Eigen::MatrixXd R = random_spd(m, rng);
        Eigen::VectorXd vx(m), vy(m);
        for (int i = 0; i < m; ++i) {
            vx[i] = 2.0 * normal(rng);
            vy[i] = 2.0 * normal(rng);
        }
        const Eigen::VectorXd px = project(set, R, vx).point;
        const Eigen::VectorXd py = project(set, R, vy).point;

        // <R(px - vx), px - y> <= 0 for all y in the set
        const auto ys = sample_boundary_and_interior(set, 50, derive_seed(1, trial));
        for (const auto& y : ys) CHECK((R * (px - vx)).dot(px - y) <= 1e-10);

        const Eigen::VectorXd d = px - py;
        const double firm = (R * d).dot(vx - vy);
        CHECK(d.dot(R * d) <= firm + 1e-10);                       // firm nonexpansiveness
        const double lips = (vx - vy).dot(R * (vx - vy));
        CHECK(std::sqrt(std::max(0.0, d.dot(R * d))) <= std::sqrt(lips) + 1e-10);  // Lipschitz
        CHECK(firm >= -1e-10);                                     // monotonicity

        const Eigen::VectorXd twice = project(set, R, px).point;
        CHECK((twice - px).lpNorm<Eigen::Infinity>() <= 1e-12);    // idempotence
    }
}

TEST_CASE("invalid weights are rejected") {
    Eigen::MatrixXd bad(2, 2);
    bad << 1.0, 0.5, -0.5, 1.0;  // asymmetric
    Eigen::VectorXd v = Eigen::VectorXd::Zero(2);
    CHECK_THROWS_AS(project(ConvexSet::orthant(2), bad, v), std::invalid_argument);
    bad << 1.0, 0.0, 0.0, -1.0;  // indefinite
    CHECK_THROWS_AS(project(ConvexSet::orthant(2), bad, v), std::invalid_argument);
    CHECK_THROWS_AS(ConvexSet::box(Eigen::VectorXd::Ones(2), Eigen::VectorXd::Zero(2)),
                    std::invalid_argument);
    CHECK_THROWS_AS(ConvexSet::ball(Eigen::VectorXd::Zero(2), 0.0), std::invalid_argument);
}
