#pragma once

#include <json.hpp>
#include <string>

#include "mfg/model.hpp"

namespace mfg {

/// Builds a ModelSpec from the JSON model document. Matrices are row-major
/// nested arrays (a bare number is accepted for 1x1), vectors are flat
/// arrays, and any coefficient may be wrapped as {"mesh": [t0..tK],
/// "values": [...]} for a piecewise-constant function. Omitted coefficients
/// default to zero; an omitted control_set defaults to the whole space.
/// Weight matrices are stored in exactly symmetrized form.
ModelSpec model_from_json(const nlohmann::json& doc);

/// Reads and parses a model file. Throws std::runtime_error on IO failure
/// and std::invalid_argument on malformed content.
ModelSpec load_model(const std::string& path);

nlohmann::json control_set_to_json(const ConvexSet& set);
ConvexSet control_set_from_json(const nlohmann::json& doc);

nlohmann::json validation_report_to_json(const ValidationReport& report);

}  // namespace mfg
