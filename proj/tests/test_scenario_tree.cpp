#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "mfg/rng.hpp"
#include "mfg/scenario_tree.hpp"

using namespace mfg;

TEST_CASE("tree construction and counting") {
    ScenarioTree t1(1, 1.0);
    CHECK(t1.total_nodes() == 3);
    CHECK(t1.sqrt_dt() == 1.0);  // leaf increments are +-1

    ScenarioTree t2(2, 1.0);
    CHECK(t2.total_nodes() == 7);
    CHECK(t2.node_probability(2) == 0.25);

    ScenarioTree t12(12, 0.5);
    CHECK(t12.total_nodes() == (1 << 13) - 1);

    CHECK_THROWS_AS(ScenarioTree(0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(ScenarioTree(21, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(ScenarioTree(4, 0.0), std::invalid_argument);
}

TEST_CASE("expectation of constants and noise moments") {
    // T = 1, n = 4: sqrt(dt) = 1/2, every path value is dyadic so the sums
    // below are exact
    ScenarioTree tree(4, 1.0);
    Eigen::VectorXd c(2);
    c << 3.5, -1.25;
    TreeProcess constant = TreeProcess::constant(c, tree.steps() + 1);
    for (int k = 0; k <= tree.steps(); ++k) CHECK((expectation(constant, k) - c).norm() == 0.0);

    TreeProcess w = noise_path(tree);
    for (int k = 0; k <= tree.steps(); ++k) {
        CHECK(expectation(w, k)[0] == 0.0);
        TreeProcess w2(1, k + 1);
        w2.at(k) = w.at(k).cwiseProduct(w.at(k));
        CHECK(expectation(w2, k)[0] == k * tree.dt());
    }

    // non-dyadic step: exact up to float roundoff
    ScenarioTree tf(5, 1.0);
    TreeProcess wf = noise_path(tf);
    for (int k = 0; k <= tf.steps(); ++k) {
        CHECK(std::abs(expectation(wf, k)[0]) <= 1e-14);
        TreeProcess w2(1, k + 1);
        w2.at(k) = wf.at(k).cwiseProduct(wf.at(k));
        CHECK(std::abs(expectation(w2, k)[0] - k * tf.dt()) <= 1e-14);
    }
}

TEST_CASE("conditional expectation and tower property") {
    ScenarioTree tree(3, 1.0);
    TreeProcess proc(1, 4);
    Rng rng = make_rng(42);
    for (int k = 0; k <= 3; ++k)
        for (std::int64_t j = 0; j < tree.nodes_at(k); ++j) proc.at(k)(0, j) = normal(rng);

    // equal children -> that value; (a, b) -> (a+b)/2
    TreeProcess pair(1, 2);
    pair.at(1)(0, 0) = 7.0;
    pair.at(1)(0, 1) = 7.0;
    CHECK(conditional_expectation(pair, 0, 0)[0] == 7.0);
    pair.at(1)(0, 0) = 1.0;
    pair.at(1)(0, 1) = 2.0;
    CHECK(conditional_expectation(pair, 0, 0)[0] == 1.5);

    // E[E[xi | level 2] | level 1] == E[xi | level 1] for xi at level 3
    TreeProcess level2(1, 3);
    for (std::int64_t j = 0; j < 4; ++j)
        level2.at(2).col(j) = conditional_expectation(proc, 2, j);
    ConditionalTable table(proc);
    for (std::int64_t j = 0; j < 2; ++j) {
        const double nested = conditional_expectation(level2, 1, j)[0];
        const double direct = table.value(3, 1, j)[0];
        CHECK(nested == direct);
    }

    CHECK_THROWS_AS(conditional_expectation(proc, 3, 0), std::out_of_range);
}

TEST_CASE("martingale representation") {
    ScenarioTree tree(4, 1.0);  // sqrt(dt) = 1/2: dyadic, reconstruction exact
    Eigen::VectorXd c(1), up(1), dn(1);

    c << 4.25;
    auto split = martingale_representation(tree, c, c);
    CHECK(split.mean[0] == 4.25);
    CHECK(split.z[0] == 0.0);

    up << tree.sqrt_dt();
    dn << -tree.sqrt_dt();
    split = martingale_representation(tree, up, dn);
    CHECK(split.mean[0] == 0.0);
    CHECK(split.z[0] == 1.0);

    Rng rng = make_rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        // dyadic-valued pair on the dyadic tree: reconstruction is exact
        up << static_cast<double>(static_cast<std::int64_t>(rng() % 4096) - 2048) * 0.0625;
        dn << static_cast<double>(static_cast<std::int64_t>(rng() % 4096) - 2048) * 0.0625;
        split = martingale_representation(tree, up, dn);
        CHECK(split.mean[0] + split.z[0] * tree.sqrt_dt() == up[0]);
        CHECK(split.mean[0] - split.z[0] * tree.sqrt_dt() == dn[0]);
        // generic doubles: exact up to a rounding of the half-sums
        up << normal(rng);
        dn << normal(rng);
        split = martingale_representation(tree, up, dn);
        CHECK(std::abs(split.mean[0] + split.z[0] * tree.sqrt_dt() - up[0]) <= 1e-15);
        CHECK(std::abs(split.mean[0] - split.z[0] * tree.sqrt_dt() - dn[0]) <= 1e-15);
    }
}

TEST_CASE("one backward sweep solves an affine discrete BSDE exactly") {
    ScenarioTree tree(6, 0.75);
    const double dt = tree.dt();
    const double sdt = tree.sqrt_dt();
    const double a = 0.4, b = -0.3, c = 0.2;  // driver g(y, z) = a y + b z + c

    TreeProcess y(1, tree.steps() + 1), z(1, tree.steps());
    Rng rng = make_rng(11);
    for (std::int64_t j = 0; j < tree.nodes_at(tree.steps()); ++j)
        y.at(tree.steps())(0, j) = normal(rng);

    for (int k = tree.steps() - 1; k >= 0; --k) {
        for (std::int64_t j = 0; j < tree.nodes_at(k); ++j) {
            const double y_up = y.at(k + 1)(0, ScenarioTree::child_up(j));
            const double y_dn = y.at(k + 1)(0, ScenarioTree::child_down(j));
            const double zv = (y_up - y_dn) / (2.0 * sdt);
            // y = mean + dt (a y + b z + c), implicit in y
            const double yv = (0.5 * (y_up + y_dn) + dt * (b * zv + c)) / (1.0 - dt * a);
            y.at(k)(0, j) = yv;
            z.at(k)(0, j) = zv;
        }
    }
    // re-substitution: the one-step equations hold on every node
    for (int k = 0; k < tree.steps(); ++k) {
        for (std::int64_t j = 0; j < tree.nodes_at(k); ++j) {
            const double y_up = y.at(k + 1)(0, ScenarioTree::child_up(j));
            const double y_dn = y.at(k + 1)(0, ScenarioTree::child_down(j));
            const double yv = y.at(k)(0, j);
            const double zv = z.at(k)(0, j);
            const double resid =
                yv - 0.5 * (y_up + y_dn) - dt * (a * yv + b * zv + c);
            CHECK(std::abs(resid) <= 1e-14);
            CHECK(std::abs(0.5 * (y_up + y_dn) + zv * sdt - y_up) <= 1e-14);
        }
    }
}

TEST_CASE("conditional table matches level expectation from the root") {
    ScenarioTree tree(5, 1.0);
    TreeProcess proc(2, tree.steps() + 1);
    Rng rng = make_rng(99);
    for (int k = 0; k <= tree.steps(); ++k)
        for (std::int64_t j = 0; j < tree.nodes_at(k); ++j)
            for (int ccomp = 0; ccomp < 2; ++ccomp) proc.at(k)(ccomp, j) = normal(rng);
    ConditionalTable table(proc);
    for (int s = 0; s <= tree.steps(); ++s)
        CHECK((table.value(s, 0, 0) - expectation(proc, s)).norm() <= 1e-14);
}
