#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "mfg/cc_solver.hpp"
#include "mfg/nash_lab.hpp"
#include "mfg/population.hpp"
#include "mfg/scenario_tree.hpp"

namespace mfg {

/// Shortest round-trippable decimal form, '.' decimal separator, no locale.
std::string format_double(double v);

/// FNV-1a 64-bit hash, used to stamp artifacts with the config identity.
std::uint64_t fnv1a(const std::string& data);
std::string config_hash(const nlohmann::json& config);

void write_text_file(const std::string& path, const std::string& content);
void write_json_file(const std::string& path, const nlohmann::json& doc);

/// Debug dump of any tree process: level, path, value components.
std::string tree_process_csv(const TreeProcess& proc, const char* stem);

/// means CSV: level, t, mean-x components, mean-y components.
std::string means_csv(const ScenarioTree& tree, const CcSolution& sol);
/// strategy CSV: level, path, control components (one row per step node).
std::string strategy_csv(const ScenarioTree& tree, const CcSolution& sol);

nlohmann::json diagnostics_to_json(const SolveDiagnostics& diag);

std::string gap_table_csv(const GapTable& table);
std::string nash_report_csv(const NashReport& report);

/// simulate artifacts: per-replication aggregate paths and per-agent costs.
std::string population_runs_csv(const ScenarioTree& tree,
                                const std::vector<PopulationRun>& runs,
                                const std::vector<MeanPath>& aggregate_y);
std::string population_costs_csv(const std::vector<std::vector<CostBreakdown>>& costs);

}  // namespace mfg
