#include "cnpr/rewardnet.hpp"

#include <cmath>
#include <iostream>

#include "cnpr/errors.hpp"

namespace cnpr {

RewardModel::RewardModel(int state_dim, int hidden, double dropout_p)
    : state_dim_(state_dim), hidden_(hidden), dropout_p_(dropout_p) {
    if (state_dim <= 0 || hidden <= 0) throw ConfigError("reward model dims must be positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must be in [0,1)");
    params_.assign(off_b3() + 1, 0.0);
}

RewardModel RewardModel::he_init(int state_dim, int hidden, double dropout_p, RngStream& rng) {
    RewardModel m(state_dim, hidden, dropout_p);
    auto& p = m.params_;
    // Embeddings small so early returns stay near zero.
    for (std::size_t i = 0; i < 2ul * kBins * kEmbDim; ++i) p[i] = rng.uniform(-0.1, 0.1);
    auto uniform_fan_in = [&](std::size_t off, std::size_t rows, std::size_t cols) {
        double bound = std::sqrt(6.0 / static_cast<double>(cols));
        for (std::size_t i = 0; i < rows * cols; ++i) p[off + i] = rng.uniform(-bound, bound);
    };
    auto H = static_cast<std::size_t>(hidden);
    auto Din = static_cast<std::size_t>(m.input_dim());
    uniform_fan_in(m.off_w1(), H, Din);
    uniform_fan_in(m.off_w2(), H, H);
    uniform_fan_in(m.off_w3(), 1, H);
    return m;
}

double forward_step_reward(const RewardModel& model, std::span<const double> state, Action action,
                           ForwardMode mode, RngStream* rng, StepTape* tape) {
    const int D = model.state_dim();
    const int H = model.hidden();
    const int Din = model.input_dim();
    if (static_cast<int>(state.size()) != D)
        throw ValidationError("state dimension " + std::to_string(state.size()) +
                              " does not match model input " + std::to_string(D));
    if (action.iv_bin < 0 || action.iv_bin >= RewardModel::kBins || action.vaso_bin < 0 ||
        action.vaso_bin >= RewardModel::kBins)
        throw ValidationError("action bin outside 0..4");
    const bool train = mode == ForwardMode::Train;
    if (train && model.dropout_p() > 0.0 && rng == nullptr)
        throw StateError("train-mode forward with dropout requires an rng");

    const auto& p = model.params();
    std::vector<double> x(static_cast<std::size_t>(Din));
    for (int i = 0; i < D; ++i) x[static_cast<std::size_t>(i)] = state[static_cast<std::size_t>(i)];
    const double* eiv = &p[model.off_emb_iv() + static_cast<std::size_t>(action.iv_bin) * RewardModel::kEmbDim];
    const double* eva = &p[model.off_emb_vaso() + static_cast<std::size_t>(action.vaso_bin) * RewardModel::kEmbDim];
    for (int i = 0; i < RewardModel::kEmbDim; ++i) {
        x[static_cast<std::size_t>(D + i)] = eiv[i];
        x[static_cast<std::size_t>(D + RewardModel::kEmbDim + i)] = eva[i];
    }

    const double keep = 1.0 - model.dropout_p();
    const double inv_keep = 1.0 / keep;

    std::vector<double> z1(static_cast<std::size_t>(H)), h1(static_cast<std::size_t>(H));
    std::vector<std::uint8_t> keep1(static_cast<std::size_t>(H), 1), keep2(static_cast<std::size_t>(H), 1);
    const double* w1 = &p[model.off_w1()];
    const double* b1 = &p[model.off_b1()];
    for (int h = 0; h < H; ++h) {
        const double* row = w1 + static_cast<std::size_t>(h) * Din;
        double acc = b1[h];
        for (int i = 0; i < Din; ++i) acc += row[i] * x[static_cast<std::size_t>(i)];
        z1[static_cast<std::size_t>(h)] = acc;
        double a = acc > 0.0 ? acc : 0.0;
        if (train && model.dropout_p() > 0.0) {
            bool k = rng->uniform() >= model.dropout_p();
            keep1[static_cast<std::size_t>(h)] = k ? 1 : 0;
            a = k ? a * inv_keep : 0.0;
        }
        h1[static_cast<std::size_t>(h)] = a;
    }

    std::vector<double> z2(static_cast<std::size_t>(H)), h2(static_cast<std::size_t>(H));
    const double* w2 = &p[model.off_w2()];
    const double* b2 = &p[model.off_b2()];
    for (int h = 0; h < H; ++h) {
        const double* row = w2 + static_cast<std::size_t>(h) * H;
        double acc = b2[h];
        for (int i = 0; i < H; ++i) acc += row[i] * h1[static_cast<std::size_t>(i)];
        z2[static_cast<std::size_t>(h)] = acc;
        double a = acc > 0.0 ? acc : 0.0;
        if (train && model.dropout_p() > 0.0) {
            bool k = rng->uniform() >= model.dropout_p();
            keep2[static_cast<std::size_t>(h)] = k ? 1 : 0;
            a = k ? a * inv_keep : 0.0;
        }
        h2[static_cast<std::size_t>(h)] = a;
    }

    const double* w3 = &p[model.off_w3()];
    double r = p[model.off_b3()];
    for (int i = 0; i < H; ++i) r += w3[i] * h2[static_cast<std::size_t>(i)];

    if (tape) {
        tape->input = std::move(x);
        tape->z1 = std::move(z1);
        tape->h1 = std::move(h1);
        tape->z2 = std::move(z2);
        tape->h2 = std::move(h2);
        tape->keep1 = std::move(keep1);
        tape->keep2 = std::move(keep2);
        tape->iv_bin = action.iv_bin;
        tape->vaso_bin = action.vaso_bin;
        tape->reward = r;
        tape->recorded = true;
    }
    return r;
}

double trajectory_return(const RewardModel& model, const Trajectory& traj) {
    if (traj.length() == 0) throw ValidationError("trajectory_return of empty trajectory");
    const auto& states = traj.model_states();
    double total = 0;
    for (std::size_t t = 0; t < states.size(); ++t)
        total += forward_step_reward(model, states[t], traj.actions[t], ForwardMode::Eval);
    return total;
}

void backward_step(const RewardModel& model, const StepTape& tape, double upstream,
                   std::vector<double>& grads) {
    if (!tape.recorded) throw StateError("backward_step without a recorded forward tape");
    if (grads.size() != model.param_count())
        throw StateError("gradient buffer size does not match parameter count");
    if (upstream == 0.0) return;

    const int D = model.state_dim();
    const int H = model.hidden();
    const int Din = model.input_dim();
    const auto& p = model.params();
    const double inv_keep = 1.0 / (1.0 - model.dropout_p());

    // Head.
    const double* w3 = &p[model.off_w3()];
    double* gw3 = &grads[model.off_w3()];
    std::vector<double> dz2(static_cast<std::size_t>(H));
    for (int h = 0; h < H; ++h) {
        gw3[h] += upstream * tape.h2[static_cast<std::size_t>(h)];
        double dh2 = upstream * w3[h];
        bool dropped = tape.keep2[static_cast<std::size_t>(h)] == 0;
        double scale = (model.dropout_p() > 0.0 && !dropped) ? inv_keep : 1.0;
        if (model.dropout_p() > 0.0 && dropped)
            dz2[static_cast<std::size_t>(h)] = 0.0;
        else
            dz2[static_cast<std::size_t>(h)] =
                tape.z2[static_cast<std::size_t>(h)] > 0.0 ? dh2 * scale : 0.0;
    }
    grads[model.off_b3()] += upstream;

    // Second hidden layer.
    const double* w2 = &p[model.off_w2()];
    double* gw2 = &grads[model.off_w2()];
    double* gb2 = &grads[model.off_b2()];
    std::vector<double> dh1(static_cast<std::size_t>(H), 0.0);
    for (int h = 0; h < H; ++h) {
        double d = dz2[static_cast<std::size_t>(h)];
        if (d == 0.0) continue;
        gb2[h] += d;
        double* grow = gw2 + static_cast<std::size_t>(h) * H;
        const double* row = w2 + static_cast<std::size_t>(h) * H;
        for (int i = 0; i < H; ++i) {
            grow[i] += d * tape.h1[static_cast<std::size_t>(i)];
            dh1[static_cast<std::size_t>(i)] += d * row[i];
        }
    }

    // First hidden layer.
    double* gw1 = &grads[model.off_w1()];
    double* gb1 = &grads[model.off_b1()];
    const double* w1 = &p[model.off_w1()];
    std::vector<double> dx_emb(2 * RewardModel::kEmbDim, 0.0);
    for (int h = 0; h < H; ++h) {
        bool dropped = tape.keep1[static_cast<std::size_t>(h)] == 0;
        double scale = (model.dropout_p() > 0.0 && !dropped) ? inv_keep : 1.0;
        double d = (model.dropout_p() > 0.0 && dropped)
                       ? 0.0
                       : (tape.z1[static_cast<std::size_t>(h)] > 0.0
                              ? dh1[static_cast<std::size_t>(h)] * scale
                              : 0.0);
        if (d == 0.0) continue;
        gb1[h] += d;
        double* grow = gw1 + static_cast<std::size_t>(h) * Din;
        const double* row = w1 + static_cast<std::size_t>(h) * Din;
        for (int i = 0; i < Din; ++i) grow[i] += d * tape.input[static_cast<std::size_t>(i)];
        // Input gradient is only needed for the embedding slots.
        for (int i = 0; i < 2 * RewardModel::kEmbDim; ++i)
            dx_emb[static_cast<std::size_t>(i)] += d * row[D + i];
    }
    double* geiv = &grads[model.off_emb_iv() + static_cast<std::size_t>(tape.iv_bin) * RewardModel::kEmbDim];
    double* geva = &grads[model.off_emb_vaso() + static_cast<std::size_t>(tape.vaso_bin) * RewardModel::kEmbDim];
    for (int i = 0; i < RewardModel::kEmbDim; ++i) {
        geiv[i] += dx_emb[static_cast<std::size_t>(i)];
        geva[i] += dx_emb[static_cast<std::size_t>(RewardModel::kEmbDim + i)];
    }
}

double clip_global_norm(std::vector<double>& grads, double max_norm) {
    double sq = 0;
    for (double g : grads) sq += g * g;
    double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        double scale = max_norm / norm;
        for (double& g : grads) g *= scale;
    }
    return norm;
}

bool adam_step(std::vector<double>& params, std::vector<double>& grads, AdamState& opt) {
    if (params.size() != grads.size() || params.size() != opt.m.size())
        throw StateError("adam_step: shape mismatch");
    for (double g : grads)
        if (!std::isfinite(g)) {
            std::cerr << "warning: non-finite gradient encountered; update skipped\n";
            return false;
        }
    clip_global_norm(grads, opt.grad_clip_norm);
    opt.step += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * grads[i];
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * grads[i] * grads[i];
        double mhat = opt.m[i] / bc1;
        double vhat = opt.v[i] / bc2;
        params[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
    return true;
}

} // namespace cnpr
