#pragma once

#include <json.hpp>

#include "mfg/nash_lab.hpp"

namespace mfg {

/// Pinned thresholds for the empirical rate checks. The aggregate and
/// individual mean-square gaps must fit a log-log slope in
/// [-1.35, -0.65] with R^2 >= 0.9; the cost gap a slope in [-0.85, -0.25]
/// with R^2 >= 0.8; the measured best-response gain must be nonincreasing
/// across the grid up to 2 Monte Carlo standard errors and stay under the
/// envelope C / sqrt(N) with C = 2 * eps(N_min) * sqrt(N_min).
struct RateGates {
    static constexpr double kGapSlopeLo = -1.35;
    static constexpr double kGapSlopeHi = -0.65;
    static constexpr double kGapR2Min = 0.9;
    static constexpr double kCostSlopeLo = -0.85;
    static constexpr double kCostSlopeHi = -0.25;
    static constexpr double kCostR2Min = 0.8;
};

struct GateOutcome {
    RateFit fit;
    bool pass = false;
};

struct RateGateReport {
    GateOutcome gap_x_avg;
    GateOutcome gap_y_avg;
    GateOutcome gap_x_indiv;
    GateOutcome cost_gap;
    bool eps_monotone = false;
    bool eps_envelope = false;
    double envelope_constant = 0.0;

    bool all_pass() const {
        return gap_x_avg.pass && gap_y_avg.pass && gap_x_indiv.pass && cost_gap.pass &&
               eps_monotone && eps_envelope;
    }
};

RateGateReport evaluate_rate_gates(const GapTable& gaps, const NashReport& nash);

nlohmann::json rate_gate_report_to_json(const RateGateReport& report);

}  // namespace mfg
