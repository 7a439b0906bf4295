#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cnpr/cohort.hpp"
#include "cnpr/rng.hpp"

namespace cnpr {

// Per-step reward network: the state vector is concatenated with learnable
// embeddings for the two treatment bins and passed through a two-layer
// rectifier MLP (hidden size H) with dropout, producing a scalar reward.
//
// Parameters live in one flat vector so the optimizer, gradient clipping and
// finite-difference checks treat every layer uniformly. Layout:
//   emb_iv[5][8] | emb_vaso[5][8] | w1[H][D+16] | b1[H] | w2[H][H] | b2[H]
//   | w3[H] | b3
class RewardModel {
  public:
    static constexpr int kBins = 5;
    static constexpr int kEmbDim = 8;

    RewardModel(int state_dim, int hidden = 128, double dropout_p = 0.2);

    static RewardModel he_init(int state_dim, int hidden, double dropout_p, RngStream& rng);

    int state_dim() const { return state_dim_; }
    int hidden() const { return hidden_; }
    int input_dim() const { return state_dim_ + 2 * kEmbDim; }
    double dropout_p() const { return dropout_p_; }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    std::size_t param_count() const { return params_.size(); }

    // Offsets into the flat parameter vector.
    std::size_t off_emb_iv() const { return 0; }
    std::size_t off_emb_vaso() const { return off_emb_iv() + kBins * kEmbDim; }
    std::size_t off_w1() const { return off_emb_vaso() + kBins * kEmbDim; }
    std::size_t off_b1() const { return off_w1() + static_cast<std::size_t>(hidden_) * input_dim(); }
    std::size_t off_w2() const { return off_b1() + static_cast<std::size_t>(hidden_); }
    std::size_t off_b2() const { return off_w2() + static_cast<std::size_t>(hidden_) * hidden_; }
    std::size_t off_w3() const { return off_b2() + static_cast<std::size_t>(hidden_); }
    std::size_t off_b3() const { return off_w3() + static_cast<std::size_t>(hidden_); }

  private:
    int state_dim_;
    int hidden_;
    double dropout_p_;
    std::vector<double> params_;
};

enum class ForwardMode { Train, Eval };

// Activations recorded by a train-mode forward, consumed by backward_step.
struct StepTape {
    std::vector<double> input;      // [s, emb_iv, emb_vaso]
    std::vector<double> z1, h1, z2, h2;
    std::vector<std::uint8_t> keep1, keep2; // dropout keep masks
    int iv_bin = 0, vaso_bin = 0;
    double reward = 0;
    bool recorded = false;
};

// r_theta(s, a). Train mode applies inverted dropout from `rng` and, when a
// tape is supplied, records everything backward needs. Eval mode is a pure
// deterministic function of (model, s, a).
double forward_step_reward(const RewardModel& model, std::span<const double> state, Action action,
                           ForwardMode mode, RngStream* rng = nullptr, StepTape* tape = nullptr);

// Sum of eval-mode per-step rewards over the whole trajectory (standardized
// states when the scaler has run).
double trajectory_return(const RewardModel& model, const Trajectory& traj);

// Accumulates d(loss)/d(params) for one recorded step given the upstream
// gradient on its scalar reward. Throws StateError without a recorded tape.
void backward_step(const RewardModel& model, const StepTape& tape, double upstream,
                   std::vector<double>& grads);

// Adam with global-norm gradient clipping and bias correction.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip_norm = 1.0; // <= 0 disables clipping
    long step = 0;
    std::vector<double> m, v;

    explicit AdamState(std::size_t n_params, double lr_ = 1e-3, double clip = 1.0)
        : lr(lr_), grad_clip_norm(clip), m(n_params, 0.0), v(n_params, 0.0) {}
};

// In-place clip of `grads` to the given global L2 norm. Returns the pre-clip norm.
double clip_global_norm(std::vector<double>& grads, double max_norm);

// One optimizer step. Returns false (and leaves parameters untouched) when
// the gradient contains non-finite entries; the incident is logged to stderr.
bool adam_step(std::vector<double>& params, std::vector<double>& grads, AdamState& opt);

} // namespace cnpr
