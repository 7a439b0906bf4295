#pragma once

#include <string>
#include <vector>

#include "cnpr/cohort.hpp"
#include "cnpr/offline_rl.hpp"
#include "cnpr/preference.hpp"
#include "cnpr/rewardnet.hpp"

namespace cnpr {

// Versioned JSON containers for trained models. Loads validate dimensions
// against the stored parameter arrays and reject mismatches.

struct RewardCheckpoint {
    RewardModel model;
    Scaler scaler;
    std::vector<std::string> feature_names;
    NormalizationParams norm;
};

void save_reward_checkpoint(const RewardCheckpoint& ckpt, const std::string& path);
RewardCheckpoint load_reward_checkpoint(const std::string& path);

struct PolicyCheckpoint {
    QModel model;
    std::vector<std::string> feature_names;
    std::string reward_source; // cnpr | mortality | sofa_lac | news2
    double gamma = 0.99;
};

void save_policy_checkpoint(const PolicyCheckpoint& ckpt, const std::string& path);
PolicyCheckpoint load_policy_checkpoint(const std::string& path);

} // namespace cnpr
