#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cnpr/cohort.hpp"
#include "cnpr/rewardnet.hpp"

namespace cnpr {

// Ordered trajectory comparison: the winner carries the strictly higher
// quality score. The pair weight scales with the score gap and both
// confidences; the margin demanded of the return difference grows with the
// gap.
struct PreferencePair {
    std::size_t winner = 0; // index into cohort.trajectories
    std::size_t loser = 0;
    double score_gap = 0;   // y_winner - y_loser
    double weight = 0;      // gap * c_winner * c_loser
    double margin = 0;      // margin_base + margin_per_gap * gap
};

struct PrefTrainConfig {
    int min_gap = 1;
    long max_pairs = -1;          // <= 0 resolves to 50 * (scored train trajectories)
    int partners_per_traj = 10;   // lower-scored partners sampled per trajectory
    double margin_base = 0.0;
    double margin_per_gap = 0.5;
    double reward_l2 = 1e-3;      // penalty on squared per-step rewards
    double lr = 1e-3;
    int batch_pairs = 128;
    int max_epochs = 10;
    int patience = 3;
    double val_frac = 0.1;
    int hidden = 128;
    double dropout = 0.2;
    double grad_clip_norm = 1.0;
    std::uint64_t seed = 1;
};

std::vector<PreferencePair> build_pairs(const Cohort& cohort, const PrefTrainConfig& cfg);

// Numerically safe log(1 + exp(x)) and logistic sigmoid.
double softplus_stable(double x);
double sigmoid_stable(double x);

// Weighted margin loss of one pair under eval-mode returns. The squared
// reward penalty is accounted in batch_loss, not here.
double pair_loss(const RewardModel& model, const PreferencePair& pair, const Cohort& cohort);

// Mean pair loss plus reward_l2 times the mean squared per-step reward over
// every step occurring in the batch (both members, per pair occurrence).
double batch_loss(const RewardModel& model, std::span<const PreferencePair> pairs,
                  const Cohort& cohort, const PrefTrainConfig& cfg);

// Same objective in train mode with dropout masks drawn from dropout_seed,
// accumulating exact gradients. Returns the loss value.
double batch_loss_and_grad(const RewardModel& model, std::span<const PreferencePair> pairs,
                           const Cohort& cohort, const PrefTrainConfig& cfg,
                           std::uint64_t dropout_seed, std::vector<double>& grads);

struct TrainLogRow {
    int epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    double val_pair_accuracy = 0;
};

struct RewardTrainResult {
    RewardModel model;
    std::vector<TrainLogRow> log;
    int best_epoch = 0;
    std::size_t n_pairs_train = 0;
    std::size_t n_pairs_val = 0;
};

// Seeded mini-batch training with a validation pair split, early stopping on
// validation loss, and best-checkpoint restore.
RewardTrainResult train_reward(const Cohort& cohort, const PrefTrainConfig& cfg);

void write_train_log_csv(const std::vector<TrainLogRow>& log, const std::string& path);

// Post-hoc reward squashing: clip to the [1st, 99th] percentile band of the
// raw train rewards, then tanh with scale max(|lo|, |hi|).
struct NormalizationParams {
    double lo = 0;
    double hi = 0;
    double scale_c = 1;
};

NormalizationParams fit_normalization(const RewardModel& model, const Cohort& cohort);
double normalize_reward(double raw, const NormalizationParams& p);

} // namespace cnpr
