#include "mfg/rate_gates.hpp"

#include <cmath>

namespace mfg {

namespace {

GateOutcome fit_and_gate(const std::vector<std::pair<double, double>>& rows, double slope_lo,
                         double slope_hi, double r2_min) {
    GateOutcome out;
    out.fit = rate_fit(rows);
    out.pass = out.fit.slope >= slope_lo && out.fit.slope <= slope_hi &&
               out.fit.r_squared >= r2_min;
    return out;
}

}  // namespace

RateGateReport evaluate_rate_gates(const GapTable& gaps, const NashReport& nash) {
    RateGateReport report;
    std::vector<std::pair<double, double>> xa, ya, xi, cg;
    for (const auto& r : gaps.rows) {
        xa.emplace_back(r.num_agents, r.gap_x_avg);
        ya.emplace_back(r.num_agents, r.gap_y_avg);
        xi.emplace_back(r.num_agents, r.gap_x_indiv);
        cg.emplace_back(r.num_agents, r.cost_gap);
    }
    report.gap_x_avg = fit_and_gate(xa, RateGates::kGapSlopeLo, RateGates::kGapSlopeHi,
                                    RateGates::kGapR2Min);
    report.gap_y_avg = fit_and_gate(ya, RateGates::kGapSlopeLo, RateGates::kGapSlopeHi,
                                    RateGates::kGapR2Min);
    report.gap_x_indiv = fit_and_gate(xi, RateGates::kGapSlopeLo, RateGates::kGapSlopeHi,
                                      RateGates::kGapR2Min);
    report.cost_gap = fit_and_gate(cg, RateGates::kCostSlopeLo, RateGates::kCostSlopeHi,
                                   RateGates::kCostR2Min);

    report.eps_monotone = !nash.rows.empty();
    for (std::size_t i = 0; i + 1 < nash.rows.size(); ++i) {
        const auto& a = nash.rows[i];
        const auto& b = nash.rows[i + 1];
        const double slack =
            2.0 * std::sqrt(a.std_error * a.std_error + b.std_error * b.std_error);
        if (b.eps_hat > a.eps_hat + slack) report.eps_monotone = false;
    }
    if (!nash.rows.empty()) {
        const auto& first = nash.rows.front();
        report.envelope_constant =
            2.0 * first.eps_hat * std::sqrt(static_cast<double>(first.num_agents));
        report.eps_envelope = true;
        for (const auto& r : nash.rows) {
            if (r.eps_hat >
                report.envelope_constant / std::sqrt(static_cast<double>(r.num_agents)))
                report.eps_envelope = false;
        }
    }
    return report;
}

nlohmann::json rate_gate_report_to_json(const RateGateReport& report) {
    auto fit_json = [](const GateOutcome& g) {
        nlohmann::json j;
        j["slope"] = g.fit.slope;
        j["intercept"] = g.fit.intercept;
        j["r_squared"] = g.fit.r_squared;
        j["rows_used"] = g.fit.rows_used;
        if (!g.fit.note.empty()) j["note"] = g.fit.note;
        j["pass"] = g.pass;
        return j;
    };
    nlohmann::json j;
    j["gap_x_avg"] = fit_json(report.gap_x_avg);
    j["gap_y_avg"] = fit_json(report.gap_y_avg);
    j["gap_x_indiv"] = fit_json(report.gap_x_indiv);
    j["cost_gap"] = fit_json(report.cost_gap);
    j["eps_monotone"] = report.eps_monotone;
    j["eps_envelope"] = report.eps_envelope;
    j["envelope_constant"] = report.envelope_constant;
    j["thresholds"] = {
        {"gap_slope", {RateGates::kGapSlopeLo, RateGates::kGapSlopeHi}},
        {"gap_r_squared_min", RateGates::kGapR2Min},
        {"cost_slope", {RateGates::kCostSlopeLo, RateGates::kCostSlopeHi}},
        {"cost_r_squared_min", RateGates::kCostR2Min},
        {"eps_monotone_slack_std_errors", 2.0},
    };
    j["all_pass"] = report.all_pass();
    return j;
}

}  // namespace mfg
