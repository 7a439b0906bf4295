#pragma once

#include "cnpr/cohort.hpp"
#include "cnpr/rng.hpp"

namespace cnpr {

// Sparse terminal-survival reward: zero everywhere except the final step,
// +R for survivors and -R for non-survivors.
double mortality_reward(const Trajectory& traj, std::size_t t, double terminal_magnitude);

// Organ-dysfunction shaping. Coefficients follow the common lineage of this
// reward in the sepsis RL literature and are config-exposed.
struct SofaLacCoeffs {
    double c0 = -0.025; // tanh of positive organ-subscore count
    double c1 = -0.125; // SOFA delta
    double c2 = -2.0;   // tanh of lactate delta
    double r_outcome_survive = 15.0;
    double r_outcome_die = -15.0;
};

// Presence and worsening of organ dysfunction plus lactate dynamics, with a
// terminal survival term. At the final step the delta terms are zero (no
// next state is fabricated). When per-organ subscores are absent the count
// term falls back to 1{SOFA_t > 0}.
double sofa_lac_reward(const Trajectory& traj, std::size_t t, const SofaLacCoeffs& coeffs,
                       const FeatureMap& fm);

struct News2Components {
    int s_rr = 0;
    int s_spo2 = 0;
    int s_o2 = 0;
    int s_bp = 0;
    int s_hr = 0;
    int s_temp = 0;
    int s_cns = 0;
    int total = 0;
};

// Standard NEWS2 scale-1 thresholds, frozen here as the normative table.
// Supplemental oxygen is proxied by the mechanical ventilation flag; the CNS
// component by GCS < 15.
News2Components news2_score(double resp_rate, double spo2_pct, bool supplemental_o2,
                            double sbp_mmhg, double heart_rate, double temp_c, double gcs);

// Negative normalized next-state NEWS2; at the terminal step the reward is
// overridden to -1 on death and `r_survive` on survival.
double news2_reward(const Trajectory& traj, std::size_t t, const FeatureMap& fm,
                    double r_die = -1.0, double r_survive = 0.0);

// Uniform draw over the joint action space.
int random_policy(int num_actions, RngStream& rng);

} // namespace cnpr
