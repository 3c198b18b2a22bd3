#include "mfg/scenario_tree.hpp"

#include <cmath>
#include <stdexcept>

namespace mfg {

ScenarioTree::ScenarioTree(int steps, double horizon)
    : steps_(steps), horizon_(horizon) {
    if (steps < 1 || steps > 20)
        throw std::invalid_argument("ScenarioTree: steps must be in [1, 20]");
    if (!(horizon > 0.0) || !std::isfinite(horizon))
        throw std::invalid_argument("ScenarioTree: horizon must be positive and finite");
    dt_ = horizon_ / steps_;
    sqrt_dt_ = std::sqrt(dt_);
}

double ScenarioTree::node_probability(int level) const {
    if (level < 0 || level > steps_)
        throw std::out_of_range("ScenarioTree: level out of range");
    return std::ldexp(1.0, -level);  // exact 2^-level
}

TreeProcess::TreeProcess(int dim_, int num_levels) : dim(dim_) {
    levels.reserve(static_cast<std::size_t>(num_levels));
    for (int k = 0; k < num_levels; ++k)
        levels.emplace_back(Eigen::MatrixXd::Zero(dim, std::int64_t{1} << k));
}

TreeProcess TreeProcess::constant(const Eigen::VectorXd& v, int num_levels) {
    TreeProcess p(static_cast<int>(v.size()), num_levels);
    for (auto& m : p.levels) m.colwise() = v;
    return p;
}

Eigen::VectorXd expectation(const TreeProcess& proc, int level) {
    if (level < 0 || level >= proc.num_levels())
        throw std::out_of_range("expectation: process not defined at level");
    const Eigen::MatrixXd& m = proc.at(level);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(proc.dim);
    for (std::int64_t j = 0; j < m.cols(); ++j) sum += m.col(j);
    return sum / static_cast<double>(m.cols());
}

Eigen::VectorXd conditional_expectation(const TreeProcess& proc, int level, std::int64_t node) {
    if (level + 1 >= proc.num_levels())
        throw std::out_of_range("conditional_expectation: node has no children in process");
    const Eigen::MatrixXd& next = proc.at(level + 1);
    return 0.5 * (next.col(ScenarioTree::child_up(node)) + next.col(ScenarioTree::child_down(node)));
}

MartingaleSplit martingale_representation(const ScenarioTree& tree,
                                          const Eigen::VectorXd& xi_up,
                                          const Eigen::VectorXd& xi_down) {
    MartingaleSplit s;
    s.mean = 0.5 * (xi_up + xi_down);
    s.z = (xi_up - xi_down) / (2.0 * tree.sqrt_dt());
    return s;
}

TreeProcess noise_path(const ScenarioTree& tree) {
    TreeProcess w(1, tree.steps() + 1);
    for (int k = 0; k < tree.steps(); ++k) {
        const Eigen::MatrixXd& cur = w.at(k);
        Eigen::MatrixXd& next = w.at(k + 1);
        for (std::int64_t j = 0; j < cur.cols(); ++j) {
            next(0, ScenarioTree::child_up(j)) = cur(0, j) + tree.sqrt_dt();
            next(0, ScenarioTree::child_down(j)) = cur(0, j) - tree.sqrt_dt();
        }
    }
    return w;
}

ConditionalTable::ConditionalTable(const TreeProcess& proc) {
    const int n_levels = proc.num_levels();
    table_.resize(static_cast<std::size_t>(n_levels));
    for (int s = 0; s < n_levels; ++s) {
        auto& row = table_[static_cast<std::size_t>(s)];
        row.resize(static_cast<std::size_t>(s) + 1);
        row[static_cast<std::size_t>(s)] = proc.at(s);
        for (int k = s - 1; k >= 0; --k) {
            const Eigen::MatrixXd& below = row[static_cast<std::size_t>(k) + 1];
            Eigen::MatrixXd& here = row[static_cast<std::size_t>(k)];
            here.resize(proc.dim, std::int64_t{1} << k);
            for (std::int64_t j = 0; j < here.cols(); ++j)
                here.col(j) = 0.5 * (below.col(2 * j) + below.col(2 * j + 1));
        }
    }
}

}  // namespace mfg
