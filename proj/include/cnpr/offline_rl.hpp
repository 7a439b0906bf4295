#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cnpr/cohort.hpp"
#include "cnpr/rewardnet.hpp"

namespace cnpr {

struct Transition {
    std::vector<double> state;
    std::vector<double> next_state; // empty iff done
    int action = 0;                 // joint index 0..24
    double reward = 0;
    bool done = false;
};

using StepRewardFn = std::function<double(const Trajectory&, std::size_t)>;

// One transition per step; the final step of each trajectory is terminal.
// Uses the train split when the cohort is split and train_only is set.
std::vector<Transition> build_transitions(const Cohort& cohort, const StepRewardFn& reward_fn,
                                          bool train_only = true);

struct QNetConfig {
    int hidden = 128;
    double leaky_slope = 0.01;
    double lr = 1e-3;
    double gamma = 0.99;
    int batch_size = 256;
    double cql_alpha = 0.5;
    int target_sync_interval = 500; // gradient steps between target copies
    double huber_delta = 1.0;
    int epochs = 15;
    double grad_clip_norm = 0.0; // disabled
    std::uint64_t seed = 1;
};

// Dueling Q-network over the 25 joint actions with a lagged target copy.
// Flat parameter layout: w1[H][D] | b1[H] | w2[H][H] | b2[H] | wv[H] | bv
// | wa[25][H] | ba[25].
class QModel {
  public:
    static constexpr int kActions = kNumJointActions;

    QModel(int state_dim, int hidden, double leaky_slope = 0.01);
    static QModel init(int state_dim, int hidden, double leaky_slope, RngStream& rng);

    int state_dim() const { return state_dim_; }
    int hidden() const { return hidden_; }
    double leaky_slope() const { return leaky_slope_; }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    std::vector<double>& target_params() { return target_params_; }
    const std::vector<double>& target_params() const { return target_params_; }
    std::size_t param_count() const { return params_.size(); }
    void sync_target() { target_params_ = params_; }

    std::size_t off_w1() const { return 0; }
    std::size_t off_b1() const { return off_w1() + static_cast<std::size_t>(hidden_) * state_dim_; }
    std::size_t off_w2() const { return off_b1() + static_cast<std::size_t>(hidden_); }
    std::size_t off_b2() const { return off_w2() + static_cast<std::size_t>(hidden_) * hidden_; }
    std::size_t off_wv() const { return off_b2() + static_cast<std::size_t>(hidden_); }
    std::size_t off_bv() const { return off_wv() + static_cast<std::size_t>(hidden_); }
    std::size_t off_wa() const { return off_bv() + 1; }
    std::size_t off_ba() const { return off_wa() + static_cast<std::size_t>(kActions) * hidden_; }

  private:
    int state_dim_;
    int hidden_;
    double leaky_slope_;
    std::vector<double> params_;
    std::vector<double> target_params_;
};

// Dueling aggregation Q(s,a) = V(s) + A(s,a) - mean_a' A(s,a'). `use_target`
// evaluates the lagged copy.
std::array<double, QModel::kActions> q_values(const QModel& model, std::span<const double> state,
                                              bool use_target = false);

// Argmax with deterministic lowest-index tie breaking.
int greedy_action(const QModel& model, std::span<const double> state);

// Double-DQN target pieces, exposed so the decoupling is testable: action
// selection uses online weights, evaluation uses the target copy.
int select_next_action(const QModel& model, std::span<const double> next_state);
double double_dqn_target(const QModel& model, const Transition& tr, double gamma);

// Huber TD loss against the double-DQN target plus the conservative penalty
// cql_alpha * mean[logsumexp_a Q(s,a) - Q(s, a_data)].
double td_cql_loss(const QModel& model, std::span<const Transition> batch, const QNetConfig& cfg);
double td_cql_loss_and_grad(const QModel& model, std::span<const Transition> batch,
                            const QNetConfig& cfg, std::vector<double>& grads);

struct PolicyLogRow {
    int epoch = 0;
    double loss = 0;
    double mean_dataset_q = 0;
};

struct PolicyTrainResult {
    QModel model;
    std::vector<PolicyLogRow> log;
};

PolicyTrainResult train_policy(const std::vector<Transition>& transitions, int state_dim,
                               const QNetConfig& cfg);

void write_policy_log_csv(const std::vector<PolicyLogRow>& log, const std::string& path);

} // namespace cnpr
