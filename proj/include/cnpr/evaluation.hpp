#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cnpr/cohort.hpp"
#include "cnpr/forest.hpp"

namespace cnpr {

// Per-step action gap between a policy recommendation and the clinician.
struct ActionDistance {
    double d_iv = 0;
    double d_vaso = 0;
    double d_joint = 0;
};

ActionDistance action_distance(Action policy_action, Action clinician_action);

// A policy maps (trajectory, step) to an action; covers greedy Q policies,
// the random baseline and the clinician-copy identity.
using PolicyFn = std::function<Action(const Trajectory&, std::size_t)>;

// Mean per-step joint distance over the trajectory.
double trajectory_distance(const PolicyFn& policy, const Trajectory& traj);

// Z-scores a column; throws NumericError when the column is constant.
std::vector<double> zscore(const std::vector<double>& v);

struct RegressionResult {
    std::vector<std::string> names;
    std::vector<double> beta;
    std::vector<double> se;
    std::vector<double> ci_lo, ci_hi; // beta +/- 1.96 se
    std::vector<double> p_value;      // two-sided normal
    std::string model_type;           // "ols_hc3" or "logistic"
    std::size_t n = 0;

    double coef(const std::string& name) const;
};

// OLS through a column-pivoted QR with HC3 sandwich standard errors.
// Rank deficiency names the collinear columns; a unit leverage is an error.
RegressionResult ols_hc3(const std::vector<double>& y, const Eigen::MatrixXd& X,
                         const std::vector<std::string>& names);

// Logistic regression by iteratively reweighted least squares; standard
// errors from the inverse observed information at the optimum.
RegressionResult logistic_fit(const std::vector<int>& y, const Eigen::MatrixXd& X,
                              const std::vector<std::string>& names);

// Pearson correlation of mid-ranks (ties receive average ranks).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct EffectSize {
    double d = 0;
    double ci_lo = 0, ci_hi = 0;
};

// Pooled-SD Cohen's d with a seeded percentile-bootstrap CI.
EffectSize cohens_d(const std::vector<double>& group_a, const std::vector<double>& group_b,
                    int n_boot, std::uint64_t seed);

// Normalized joint-action frequencies per severity stratum (baseline SOFA
// below / at-or-above the threshold).
struct ActionHeatmap {
    std::array<std::array<double, 5>, 5> low{};  // [iv][vaso]
    std::array<std::array<double, 5>, 5> high{};
    std::size_t n_low_steps = 0, n_high_steps = 0;
};

ActionHeatmap action_heatmap(const PolicyFn& policy, const Cohort& cohort,
                             const std::vector<std::size_t>& traj_indices,
                             int sofa_threshold = 8);

struct FeatureImportance {
    std::string feature;
    double importance = 0; // mean held-out accuracy drop over permutations
};

// Random-forest permutation importance for predicting a per-step action bin
// from states. Rows are split into fit/hold-out sets; each feature column is
// permuted k times on the hold-out set. Returned sorted by importance
// (descending), deterministic per seed.
std::vector<FeatureImportance> permutation_importance(
    const std::vector<double>& X_row_major, std::size_t n_rows,
    const std::vector<std::string>& feature_names, const std::vector<int>& labels, int n_classes,
    const ForestConfig& forest_cfg, int k_repeats, double holdout_frac, std::uint64_t seed);

} // namespace cnpr
