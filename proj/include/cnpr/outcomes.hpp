#pragma once

#include <optional>
#include <string>
#include <utility>

#include "cnpr/cohort.hpp"

namespace cnpr {

// Outcome metrics on the unified 4-hour grid. Stays shorter than the metric
// horizon are extended by a fixed rule: post-discharge intervals count as
// alive, support-free and shock-free for survivors, and as dead (shock
// unresolved) for decedents.
struct OutcomeRecord {
    std::string id;
    double osfd7 = 0;                     // days in [0, 7]
    std::optional<double> tsr_hours;      // multiples of 4, capped at 72; empty if never in shock
    double iv_burden = 0;                 // mean iv bin per recorded step
    double vaso_burden = 0;               // mean vaso bin per recorded step
    std::optional<int> discharge_score;   // 0..7; empty for unmappable destinations
    bool mortality = false;
};

// Days alive and free of vasopressors, ventilation and renal replacement
// over the first 42 intervals; six intervals make a day.
double osfd7(const Trajectory& traj);

// Hours until the first of 3 consecutive shock-free intervals, where shock
// is vasopressor support or MAP < 65. Undefined when shock never occurs in
// the 72-hour horizon; 72 when unresolved. Windows truncated by the horizon
// do not qualify.
std::optional<double> time_to_shock_resolution(const Trajectory& traj);

// Mean discretized treatment level per recorded step: (iv, vaso).
std::pair<double, double> treatment_burden(const Trajectory& traj);

std::optional<int> discharge_score(DischargeCategory category);

OutcomeRecord compute_outcomes(const Trajectory& traj);

void write_outcomes_csv(const std::vector<OutcomeRecord>& records, const std::string& path);

} // namespace cnpr
