#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cnpr/errors.hpp"

namespace cnpr {

using StateVector = std::vector<double>;

// Discretized treatment pair. Five bins per axis, 25 joint actions.
struct Action {
    int iv_bin = 0;
    int vaso_bin = 0;

    int joint() const { return 5 * iv_bin + vaso_bin; }
    static Action from_joint(int j) { return Action{j / 5, j % 5}; }

    bool operator==(const Action&) const = default;
};

inline constexpr int kNumIvBins = 5;
inline constexpr int kNumVasoBins = 5;
inline constexpr int kNumJointActions = 25;

// 4-hourly dose quantile thresholds. Bin 0 is exactly zero dose; bin k
// covers (t_{k-1}, t_k] (upper-inclusive); bin 4 is strictly above the
// last threshold.
inline constexpr std::array<double, 3> kIvThresholdsMl = {50.05, 213.33, 520.0};
inline constexpr std::array<double, 3> kVasoThresholdsMcgKg = {7.20, 17.41, 40.06};

Action discretize_dose(double iv_ml_per_4h, double vaso_mcg_per_kg_per_4h);

enum class DischargeCategory {
    Home,
    HomeHealth,
    Rehab,
    AssistedLiving,
    SkilledNursing,
    LongTermAcuteCare,
    AcuteHospitalTransfer,
    HospiceOrDeath,
    Other,
    AgainstMedicalAdvice,
    Psychiatric,
    Missing, // no destination recorded
};

std::string discharge_category_name(DischargeCategory c);
DischargeCategory discharge_category_from_name(const std::string& name);

struct StepFlags {
    bool vasopressor_on = false;
    bool mech_vent = false;
    bool rrt = false;
    bool alive = true;
};

struct Covariates {
    double age = 0;
    int sofa_baseline = 0;
    std::optional<int> elixhauser;
    double lactate = 0;
    double shock_index = 0;
    bool mech_vent_baseline = false;
};

// One time-discretized patient episode on the fixed 4-hour grid.
// `states` holds raw clinical values as ingested or generated; `states_std`
// is filled by the train-split scaler and is what the learned models consume.
struct Trajectory {
    std::string id;
    std::vector<StateVector> states;
    std::vector<StateVector> states_std;
    std::vector<Action> actions;
    int step_hours = 4;
    bool mortality = false;
    int tqs = 0;            // 1..5, 0 = unscorable
    double confidence = 0;  // [0,1], 0 when tqs == 0
    std::vector<StepFlags> flags;
    std::vector<double> map_mmhg;
    DischargeCategory discharge = DischargeCategory::Missing;
    std::optional<std::vector<std::array<int, 6>>> sofa_subscores;
    Covariates cov;

    std::size_t length() const { return states.size(); }

    // Model input: standardized states when the scaler has run, raw otherwise.
    const std::vector<StateVector>& model_states() const {
        return states_std.empty() ? states : states_std;
    }
};

enum class Split : std::uint8_t { Train, Test };

// Per-feature mean/std affine transform, fitted on the train split only.
struct Scaler {
    std::vector<double> mean;
    std::vector<double> stddev;
    std::vector<std::string> degenerate_features; // zero train variance, std forced to 1

    StateVector transform(const StateVector& s) const;
};

Scaler fit_scaler(const std::vector<const Trajectory*>& train, std::size_t dim,
                  const std::vector<std::string>& feature_names);

struct Cohort {
    std::vector<std::string> feature_names;
    std::vector<Trajectory> trajectories;
    std::vector<Split> split;       // parallel to trajectories; empty before splitting
    std::optional<Scaler> scaler;

    std::size_t feature_count() const { return feature_names.size(); }
    int feature_index(const std::string& name) const; // throws ValidationError if absent

    bool has_split() const { return !split.empty(); }
    bool is_train(std::size_t i) const { return split.at(i) == Split::Train; }
};

// Canonical 48-variable feature list; the reduced variant drops the four
// variables unavailable in the external-validation configuration
// (PT, INR, PaCO2, Elixhauser).
std::vector<std::string> default_feature_names(bool reduced);

// Resolved indices for the features the reward baselines and outcome
// metrics read by name.
struct FeatureMap {
    int sofa = -1;
    int lactate = -1;
    int resp_rate = -1;
    int spo2 = -1;
    int sbp = -1;
    int heart_rate = -1;
    int temperature = -1;
    int gcs = -1;
    int mech_vent = -1;
    int mbp = -1;

    static FeatureMap from(const std::vector<std::string>& names);
};

// Seeded shuffle split (train_frac rounded to the nearest count), then
// scaler fit on train states and applied to both splits in place.
void fit_split_and_scaler(Cohort& cohort, double train_frac, std::uint64_t seed);

// JSON-lines ingestion and persistence. One trajectory record per line; an
// optional leading meta record carries feature names and split tags.
Cohort load_cohort(const std::string& path);
void save_cohort(const Cohort& cohort, const std::string& path);

// Throws ValidationError naming the offending field (and line when known).
void validate_trajectory(const Trajectory& t, std::size_t feature_count, long line_no = -1);

// Per-feature statistics plus cohort-level counts, as two CSV files.
void write_cohort_feature_summary(const Cohort& cohort, const std::string& path);
void write_cohort_overview(const Cohort& cohort, const std::string& path);

} // namespace cnpr
