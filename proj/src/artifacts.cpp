#include "mfg/artifacts.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mfg {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::uint64_t fnv1a(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string config_hash(const nlohmann::json& config) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a(config.dump())));
    return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path);
}

void write_json_file(const std::string& path, const nlohmann::json& doc) {
    write_text_file(path, doc.dump(2) + "\n");
}

namespace {

void header_components(std::ostringstream& os, const char* stem, Eigen::Index dim) {
    for (Eigen::Index c = 0; c < dim; ++c) os << "," << stem << c;
}

}  // namespace

std::string tree_process_csv(const TreeProcess& proc, const char* stem) {
    std::ostringstream os;
    os << "level,path";
    header_components(os, stem, proc.dim);
    os << "\r\n";
    for (int k = 0; k < proc.num_levels(); ++k) {
        for (Eigen::Index j = 0; j < proc.at(k).cols(); ++j) {
            os << k << "," << j;
            for (int c = 0; c < proc.dim; ++c) os << "," << format_double(proc.at(k)(c, j));
            os << "\r\n";
        }
    }
    return os.str();
}

std::string means_csv(const ScenarioTree& tree, const CcSolution& sol) {
    std::ostringstream os;
    const Eigen::Index n = sol.mean_x.empty() ? 0 : sol.mean_x.front().size();
    os << "level,t";
    header_components(os, "mx_", n);
    header_components(os, "my_", n);
    os << "\r\n";
    for (int k = 0; k <= tree.steps(); ++k) {
        os << k << "," << format_double(tree.time_at(k));
        for (Eigen::Index c = 0; c < n; ++c)
            os << "," << format_double(sol.mean_x[static_cast<std::size_t>(k)][c]);
        for (Eigen::Index c = 0; c < n; ++c)
            os << "," << format_double(sol.mean_y[static_cast<std::size_t>(k)][c]);
        os << "\r\n";
    }
    return os.str();
}

std::string strategy_csv(const ScenarioTree& tree, const CcSolution& sol) {
    std::ostringstream os;
    const Eigen::Index m = sol.control.dim;
    os << "level,path";
    header_components(os, "u_", m);
    os << "\r\n";
    for (int k = 0; k < tree.steps(); ++k) {
        for (std::int64_t j = 0; j < tree.nodes_at(k); ++j) {
            os << k << "," << j;
            for (Eigen::Index c = 0; c < m; ++c)
                os << "," << format_double(sol.control.at(k)(c, j));
            os << "\r\n";
        }
    }
    return os.str();
}

nlohmann::json diagnostics_to_json(const SolveDiagnostics& diag) {
    nlohmann::json j;
    j["iterations"] = diag.iterations;
    j["converged"] = diag.converged;
    j["final_residual"] = diag.final_residual;
    j["consistency_residual"] = diag.consistency_residual;
    j["residual_history"] = diag.residual_history;
    j["alpha_path"] = diag.alpha_path;
    j["theta_final"] = diag.theta_final;
    j["used_continuation"] = diag.used_continuation;
    return j;
}

std::string gap_table_csv(const GapTable& table) {
    std::ostringstream os;
    os << "N,replications,gap_x_avg,gap_y_avg,gap_x_indiv,gap_y_indiv,cost_gap\r\n";
    for (const auto& r : table.rows) {
        os << r.num_agents << "," << r.replications << "," << format_double(r.gap_x_avg) << ","
           << format_double(r.gap_y_avg) << "," << format_double(r.gap_x_indiv) << ","
           << format_double(r.gap_y_indiv) << "," << format_double(r.cost_gap) << "\r\n";
    }
    return os.str();
}

std::string nash_report_csv(const NashReport& report) {
    std::ostringstream os;
    os << "N,replications,cost_equilibrium,best_cost,eps_hat,std_error,best_candidate\r\n";
    for (const auto& r : report.rows) {
        os << r.num_agents << "," << r.replications << "," << format_double(r.cost_equilibrium)
           << "," << format_double(r.best_cost) << "," << format_double(r.eps_hat) << ","
           << format_double(r.std_error) << "," << r.best_candidate << "\r\n";
    }
    return os.str();
}

std::string population_runs_csv(const ScenarioTree& tree,
                                const std::vector<PopulationRun>& runs,
                                const std::vector<MeanPath>& aggregate_y) {
    std::ostringstream os;
    const Eigen::Index n =
        runs.empty() || runs.front().aggregate_x.empty() ? 0 : runs.front().aggregate_x.front().size();
    os << "replication,level,t";
    header_components(os, "xavg_", n);
    header_components(os, "yavg_", n);
    os << "\r\n";
    for (std::size_t r = 0; r < runs.size(); ++r) {
        for (int k = 0; k <= tree.steps(); ++k) {
            os << r << "," << k << "," << format_double(tree.time_at(k));
            for (Eigen::Index c = 0; c < n; ++c)
                os << "," << format_double(runs[r].aggregate_x[static_cast<std::size_t>(k)][c]);
            for (Eigen::Index c = 0; c < n; ++c)
                os << "," << format_double(aggregate_y[r][static_cast<std::size_t>(k)][c]);
            os << "\r\n";
        }
    }
    return os.str();
}

std::string population_costs_csv(const std::vector<std::vector<CostBreakdown>>& costs) {
    std::ostringstream os;
    os << "replication,agent,tracking_x,tracking_y,control_effort,terminal,total,y0_gap\r\n";
    for (std::size_t r = 0; r < costs.size(); ++r) {
        for (std::size_t i = 0; i < costs[r].size(); ++i) {
            const CostBreakdown& c = costs[r][i];
            os << r << "," << i << "," << format_double(c.tracking_x) << ","
               << format_double(c.tracking_y) << "," << format_double(c.control_effort) << ","
               << format_double(c.terminal) << "," << format_double(c.total) << ","
               << format_double(c.y0_gap) << "\r\n";
        }
    }
    return os.str();
}

}  // namespace mfg
