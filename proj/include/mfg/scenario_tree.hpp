#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace mfg {

/// Non-recombining binary scenario tree over [0, T] with `steps` time steps.
///
/// Nodes are addressed by (level k, path index j), 0 <= j < 2^k. The two
/// children of (k, j) are (k+1, 2j) with increment +sqrt(dt) and (k+1, 2j+1)
/// with increment -sqrt(dt). Every node at level k carries probability 2^-k,
/// so expectations are exact dyadic-weighted sums and the first two moments
/// of the increments match Brownian motion per step: E[dW | node] = 0,
/// E[dW^2 | node] = dt.
///
/// Indexing is level-major with path index within level; sweeps that follow
/// it are bit-reproducible.
class ScenarioTree {
public:
    /// steps must lie in [1, 20]; 2^20 leaves is the hard cap.
    ScenarioTree(int steps, double horizon);

    int steps() const { return steps_; }
    double horizon() const { return horizon_; }
    double dt() const { return dt_; }
    double sqrt_dt() const { return sqrt_dt_; }

    std::int64_t nodes_at(int level) const { return std::int64_t{1} << level; }
    std::int64_t total_nodes() const { return (std::int64_t{2} << steps_) - 1; }
    double node_probability(int level) const;

    /// Time of level k.
    double time_at(int level) const { return dt_ * level; }

    static std::int64_t parent(std::int64_t j) { return j >> 1; }
    static std::int64_t child_up(std::int64_t j) { return 2 * j; }
    static std::int64_t child_down(std::int64_t j) { return 2 * j + 1; }
    /// Branch sign of child index: +1 for even (up), -1 for odd (down).
    static double branch_sign(std::int64_t child_index) { return (child_index & 1) ? -1.0 : 1.0; }

private:
    int steps_;
    double horizon_;
    double dt_;
    double sqrt_dt_;
};

/// A process adapted to the tree: one d-vector per node, for levels
/// 0..num_levels-1. Forward/backward states span steps+1 levels; step
/// quantities (controls, diffusion coefficients) span steps levels.
struct TreeProcess {
    int dim = 0;
    std::vector<Eigen::MatrixXd> levels;  // levels[k]: dim x 2^k

    TreeProcess() = default;
    TreeProcess(int dim_, int num_levels);

    int num_levels() const { return static_cast<int>(levels.size()); }
    Eigen::MatrixXd& at(int level) { return levels[static_cast<std::size_t>(level)]; }
    const Eigen::MatrixXd& at(int level) const { return levels[static_cast<std::size_t>(level)]; }

    Eigen::VectorXd value(int level, std::int64_t node) const { return at(level).col(node); }

    /// Constant process over num_levels levels.
    static TreeProcess constant(const Eigen::VectorXd& v, int num_levels);
};

/// E[proc at level k]: equal-weight average over the 2^k nodes.
Eigen::VectorXd expectation(const TreeProcess& proc, int level);

/// E[proc(k+1) | node (k, j)]: average of the two child values.
Eigen::VectorXd conditional_expectation(const TreeProcess& proc, int level, std::int64_t node);

struct MartingaleSplit {
    Eigen::VectorXd mean;  // E[xi | node]
    Eigen::VectorXd z;     // diffusion loading: xi = mean + z * dW on both branches
};

/// Two equations, two unknowns on a binary branch: mean = (up+dn)/2,
/// z = (up-dn)/(2 sqrt(dt)). Reconstruction is exact when sqrt(dt) is a
/// power of two and exact to a few ulps otherwise.
MartingaleSplit martingale_representation(const ScenarioTree& tree,
                                          const Eigen::VectorXd& xi_up,
                                          const Eigen::VectorXd& xi_down);

/// Cumulative noise path W: levels 0..steps, W(0)=0, W(child) = W(parent) +- sqrt(dt).
TreeProcess noise_path(const ScenarioTree& tree);

/// Table of forward-looking conditional expectations of a process:
/// at(s, k) holds E[proc(s) | node (k, j)] for every node j of level k <= s.
/// Built by iterated pairwise child averaging, so every entry is exact.
class ConditionalTable {
public:
    explicit ConditionalTable(const TreeProcess& proc);

    int num_levels() const { return static_cast<int>(table_.size()); }
    /// dim x 2^level matrix of E[proc(target) | node at `level`].
    const Eigen::MatrixXd& at(int target_level, int level) const {
        return table_[static_cast<std::size_t>(target_level)][static_cast<std::size_t>(level)];
    }
    Eigen::VectorXd value(int target_level, int level, std::int64_t node) const {
        return at(target_level, level).col(node);
    }

private:
    // table_[s][k]: dim x 2^k
    std::vector<std::vector<Eigen::MatrixXd>> table_;
};

}  // namespace mfg
