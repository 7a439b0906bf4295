#pragma once

#include <array>
#include <cstdint>

#include "cnpr/cohort.hpp"

namespace cnpr {

// Synthetic ICU-style cohort generator. A latent quality q* in [0,1] drives
// the trajectory quality score through a noisy channel and, independently of
// baseline severity, the direction of the physiologic course. Outcome fields
// (mortality, support flags, MAP, discharge destination) all derive from the
// same latent state, so metric and regression recoveries can be checked
// against known ground truth.
struct SynthConfig {
    int n = 2000;
    bool reduced_features = false;
    int min_steps = 5;
    int max_steps = 18; // 72-hour window at 4-hour resolution

    // TQS channel: cumulative label shares for scores 1..4; score 5 takes the
    // remainder. Defaults reproduce a right-skewed marginal with most mass
    // on 4 and 5.
    std::array<double, 4> tqs_cumulative = {0.03, 0.09, 0.16, 0.50};
    double tqs_noise = 0.02;
    double unscorable_frac = 0.02;

    // Outcome channel: death when q* + noise falls below this threshold.
    double death_threshold = 0.13;
    double death_noise = 0.05;

    // Severity dynamics.
    double baseline_sev_quality_coupling = 0.15;
    double sev_drift_gain = 0.10;
    double sev_step_noise = 0.03;
    double state_noise = 1.0; // multiplier on all per-feature noise scales
};

struct SynthGroundTruth {
    std::vector<double> latent_quality; // q* per trajectory, generation order
};

Cohort generate_synthetic_cohort(const SynthConfig& config, std::uint64_t seed,
                                 SynthGroundTruth* truth = nullptr);

} // namespace cnpr
