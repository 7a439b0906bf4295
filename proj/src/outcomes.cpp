#include "cnpr/outcomes.hpp"

#include <tuple>

#include "cnpr/util.hpp"

namespace cnpr {

namespace {

constexpr int kOsfdIntervals = 42; // 7 days
constexpr int kTsrIntervals = 18;  // 72 hours
constexpr int kTsrWindow = 3;      // 12 consecutive shock-free hours

struct GridStatus {
    bool alive;
    bool support;
    bool shock;
};

// Status at interval t under the grid-extension rule.
GridStatus status_at(const Trajectory& traj, int t) {
    const int T = static_cast<int>(traj.length());
    if (t < T) {
        const StepFlags& f = traj.flags[static_cast<std::size_t>(t)];
        bool support = f.vasopressor_on || f.mech_vent || f.rrt;
        bool shock = f.vasopressor_on || traj.map_mmhg[static_cast<std::size_t>(t)] < 65.0;
        return GridStatus{f.alive, support, shock};
    }
    if (traj.mortality) return GridStatus{false, false, true};
    return GridStatus{true, false, false};
}

} // namespace

double osfd7(const Trajectory& traj) {
    if (traj.length() == 0) throw ValidationError("osfd7 of empty trajectory");
    int free_intervals = 0;
    for (int t = 0; t < kOsfdIntervals; ++t) {
        GridStatus st = status_at(traj, t);
        if (st.alive && !st.support) ++free_intervals;
    }
    return static_cast<double>(free_intervals) / 6.0;
}

std::optional<double> time_to_shock_resolution(const Trajectory& traj) {
    if (traj.length() == 0) throw ValidationError("tsr of empty trajectory");
    bool shock_free[kTsrIntervals];
    bool any_shock = false;
    for (int t = 0; t < kTsrIntervals; ++t) {
        GridStatus st = status_at(traj, t);
        shock_free[t] = !st.shock;
        any_shock = any_shock || st.shock;
    }
    if (!any_shock) return std::nullopt;
    for (int t = 0; t + kTsrWindow <= kTsrIntervals; ++t) {
        bool ok = true;
        for (int k = 0; k < kTsrWindow; ++k) ok = ok && shock_free[t + k];
        if (ok) return 4.0 * t;
    }
    return 72.0;
}

std::pair<double, double> treatment_burden(const Trajectory& traj) {
    if (traj.length() == 0) throw ValidationError("treatment_burden of empty trajectory");
    double iv = 0, vaso = 0;
    for (const Action& a : traj.actions) {
        iv += a.iv_bin;
        vaso += a.vaso_bin;
    }
    auto T = static_cast<double>(traj.length());
    return {iv / T, vaso / T};
}

std::optional<int> discharge_score(DischargeCategory category) {
    switch (category) {
        case DischargeCategory::Home: return 7;
        case DischargeCategory::HomeHealth: return 6;
        case DischargeCategory::Rehab: return 5;
        case DischargeCategory::AssistedLiving: return 4;
        case DischargeCategory::SkilledNursing: return 3;
        case DischargeCategory::LongTermAcuteCare: return 2;
        case DischargeCategory::AcuteHospitalTransfer: return 1;
        case DischargeCategory::HospiceOrDeath: return 0;
        case DischargeCategory::Other:
        case DischargeCategory::AgainstMedicalAdvice:
        case DischargeCategory::Psychiatric:
        case DischargeCategory::Missing: return std::nullopt;
    }
    return std::nullopt;
}

OutcomeRecord compute_outcomes(const Trajectory& traj) {
    OutcomeRecord r;
    r.id = traj.id;
    r.osfd7 = osfd7(traj);
    r.tsr_hours = time_to_shock_resolution(traj);
    std::tie(r.iv_burden, r.vaso_burden) = treatment_burden(traj);
    r.discharge_score = discharge_score(traj.discharge);
    r.mortality = traj.mortality;
    return r;
}

void write_outcomes_csv(const std::vector<OutcomeRecord>& records, const std::string& path) {
    CsvWriter csv(path);
    csv.row({"id", "osfd7", "tsr_hours", "iv_burden", "vaso_burden", "discharge_score",
             "mortality"});
    for (const OutcomeRecord& r : records)
        csv.row({r.id, fmt_double(r.osfd7), r.tsr_hours ? fmt_double(*r.tsr_hours) : "",
                 fmt_double(r.iv_burden), fmt_double(r.vaso_burden),
                 r.discharge_score ? std::to_string(*r.discharge_score) : "",
                 r.mortality ? "1" : "0"});
}

} // namespace cnpr
