#include "cnpr/baselines.hpp"

#include <cmath>

namespace cnpr {

double mortality_reward(const Trajectory& traj, std::size_t t, double terminal_magnitude) {
    if (t >= traj.length()) throw ValidationError("step index out of range");
    if (t + 1 < traj.length()) return 0.0;
    return traj.mortality ? -terminal_magnitude : terminal_magnitude;
}

double sofa_lac_reward(const Trajectory& traj, std::size_t t, const SofaLacCoeffs& coeffs,
                       const FeatureMap& fm) {
    if (t >= traj.length()) throw ValidationError("step index out of range");
    const bool terminal = t + 1 == traj.length();
    const auto fsofa = static_cast<std::size_t>(fm.sofa);
    const auto flac = static_cast<std::size_t>(fm.lactate);

    double positive_count;
    if (traj.sofa_subscores) {
        int n = 0;
        for (int v : (*traj.sofa_subscores)[t])
            if (v > 0) ++n;
        positive_count = n;
    } else {
        positive_count = traj.states[t][fsofa] > 0 ? 1.0 : 0.0;
    }

    double sofa_delta = 0, lac_delta = 0;
    if (!terminal) {
        sofa_delta = traj.states[t + 1][fsofa] - traj.states[t][fsofa];
        lac_delta = traj.states[t + 1][flac] - traj.states[t][flac];
    }

    double r = coeffs.c0 * std::tanh(positive_count) + coeffs.c1 * sofa_delta +
               coeffs.c2 * std::tanh(lac_delta);
    if (terminal) r += traj.mortality ? coeffs.r_outcome_die : coeffs.r_outcome_survive;
    return r;
}

News2Components news2_score(double resp_rate, double spo2_pct, bool supplemental_o2,
                            double sbp_mmhg, double heart_rate, double temp_c, double gcs) {
    News2Components c;

    if (resp_rate <= 8)
        c.s_rr = 3;
    else if (resp_rate <= 11)
        c.s_rr = 1;
    else if (resp_rate <= 20)
        c.s_rr = 0;
    else if (resp_rate <= 24)
        c.s_rr = 2;
    else
        c.s_rr = 3;

    if (spo2_pct <= 91)
        c.s_spo2 = 3;
    else if (spo2_pct <= 93)
        c.s_spo2 = 2;
    else if (spo2_pct <= 95)
        c.s_spo2 = 1;
    else
        c.s_spo2 = 0;

    c.s_o2 = supplemental_o2 ? 2 : 0;

    if (sbp_mmhg <= 90)
        c.s_bp = 3;
    else if (sbp_mmhg <= 100)
        c.s_bp = 2;
    else if (sbp_mmhg <= 110)
        c.s_bp = 1;
    else if (sbp_mmhg <= 219)
        c.s_bp = 0;
    else
        c.s_bp = 3;

    if (heart_rate <= 40)
        c.s_hr = 3;
    else if (heart_rate <= 50)
        c.s_hr = 1;
    else if (heart_rate <= 90)
        c.s_hr = 0;
    else if (heart_rate <= 110)
        c.s_hr = 1;
    else if (heart_rate <= 130)
        c.s_hr = 2;
    else
        c.s_hr = 3;

    if (temp_c <= 35.0)
        c.s_temp = 3;
    else if (temp_c <= 36.0)
        c.s_temp = 1;
    else if (temp_c <= 38.0)
        c.s_temp = 0;
    else if (temp_c <= 39.0)
        c.s_temp = 1;
    else
        c.s_temp = 2;

    c.s_cns = gcs < 15 ? 3 : 0;

    c.total = c.s_rr + c.s_spo2 + c.s_o2 + c.s_bp + c.s_hr + c.s_temp + c.s_cns;
    return c;
}

double news2_reward(const Trajectory& traj, std::size_t t, const FeatureMap& fm, double r_die,
                    double r_survive) {
    if (t >= traj.length()) throw ValidationError("step index out of range");
    if (t + 1 == traj.length()) return traj.mortality ? r_die : r_survive;

    const StateVector& next = traj.states[t + 1];
    auto f = [&](int ix) { return next[static_cast<std::size_t>(ix)]; };
    News2Components c =
        news2_score(f(fm.resp_rate), f(fm.spo2), traj.flags[t + 1].mech_vent, f(fm.sbp),
                    f(fm.heart_rate), f(fm.temperature), f(fm.gcs));
    return -static_cast<double>(c.total) / 20.0;
}

int random_policy(int num_actions, RngStream& rng) {
    if (num_actions < 1) throw ValidationError("num_actions must be >= 1");
    return rng.uniform_int(num_actions);
}

} // namespace cnpr
