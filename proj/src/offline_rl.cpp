#include "cnpr/offline_rl.hpp"

#include <algorithm>
#include <cmath>

#include "cnpr/util.hpp"

namespace cnpr {

std::vector<Transition> build_transitions(const Cohort& cohort, const StepRewardFn& reward_fn,
                                          bool train_only) {
    std::vector<Transition> out;
    for (std::size_t i = 0; i < cohort.trajectories.size(); ++i) {
        if (train_only && cohort.has_split() && !cohort.is_train(i)) continue;
        const Trajectory& t = cohort.trajectories[i];
        const auto& states = t.model_states();
        for (std::size_t s = 0; s < states.size(); ++s) {
            Transition tr;
            tr.state = states[s];
            tr.action = t.actions[s].joint();
            tr.reward = reward_fn(t, s);
            tr.done = s + 1 == states.size();
            if (!tr.done) tr.next_state = states[s + 1];
            out.push_back(std::move(tr));
        }
    }
    return out;
}

QModel::QModel(int state_dim, int hidden, double leaky_slope)
    : state_dim_(state_dim), hidden_(hidden), leaky_slope_(leaky_slope) {
    if (state_dim <= 0 || hidden <= 0) throw ConfigError("q model dims must be positive");
    params_.assign(off_ba() + kActions, 0.0);
    target_params_ = params_;
}

QModel QModel::init(int state_dim, int hidden, double leaky_slope, RngStream& rng) {
    QModel m(state_dim, hidden, leaky_slope);
    auto fan_in = [&](std::size_t off, std::size_t rows, std::size_t cols) {
        double bound = std::sqrt(6.0 / static_cast<double>(cols));
        for (std::size_t i = 0; i < rows * cols; ++i)
            m.params_[off + i] = rng.uniform(-bound, bound);
    };
    auto H = static_cast<std::size_t>(hidden);
    fan_in(m.off_w1(), H, static_cast<std::size_t>(state_dim));
    fan_in(m.off_w2(), H, H);
    fan_in(m.off_wv(), 1, H);
    fan_in(m.off_wa(), kActions, H);
    m.sync_target();
    return m;
}

namespace {

struct QTape {
    std::vector<double> x, z1, h1, z2, h2;
    std::array<double, QModel::kActions> q{};
};

std::array<double, QModel::kActions> forward_q(const QModel& m, std::span<const double> state,
                                               const std::vector<double>& p, QTape* tape) {
    const int D = m.state_dim();
    const int H = m.hidden();
    if (static_cast<int>(state.size()) != D)
        throw ValidationError("state dimension " + std::to_string(state.size()) +
                              " does not match q model input " + std::to_string(D));
    const double slope = m.leaky_slope();

    std::vector<double> z1(static_cast<std::size_t>(H)), h1(static_cast<std::size_t>(H));
    const double* w1 = &p[m.off_w1()];
    const double* b1 = &p[m.off_b1()];
    for (int h = 0; h < H; ++h) {
        const double* row = w1 + static_cast<std::size_t>(h) * D;
        double acc = b1[h];
        for (int i = 0; i < D; ++i) acc += row[i] * state[static_cast<std::size_t>(i)];
        z1[static_cast<std::size_t>(h)] = acc;
        h1[static_cast<std::size_t>(h)] = acc > 0 ? acc : slope * acc;
    }
    std::vector<double> z2(static_cast<std::size_t>(H)), h2(static_cast<std::size_t>(H));
    const double* w2 = &p[m.off_w2()];
    const double* b2 = &p[m.off_b2()];
    for (int h = 0; h < H; ++h) {
        const double* row = w2 + static_cast<std::size_t>(h) * H;
        double acc = b2[h];
        for (int i = 0; i < H; ++i) acc += row[i] * h1[static_cast<std::size_t>(i)];
        z2[static_cast<std::size_t>(h)] = acc;
        h2[static_cast<std::size_t>(h)] = acc > 0 ? acc : slope * acc;
    }

    const double* wv = &p[m.off_wv()];
    double v = p[m.off_bv()];
    for (int i = 0; i < H; ++i) v += wv[i] * h2[static_cast<std::size_t>(i)];

    std::array<double, QModel::kActions> adv{};
    const double* wa = &p[m.off_wa()];
    const double* ba = &p[m.off_ba()];
    double adv_mean = 0;
    for (int a = 0; a < QModel::kActions; ++a) {
        const double* row = wa + static_cast<std::size_t>(a) * H;
        double acc = ba[a];
        for (int i = 0; i < H; ++i) acc += row[i] * h2[static_cast<std::size_t>(i)];
        adv[static_cast<std::size_t>(a)] = acc;
        adv_mean += acc;
    }
    adv_mean /= QModel::kActions;

    std::array<double, QModel::kActions> q{};
    for (int a = 0; a < QModel::kActions; ++a)
        q[static_cast<std::size_t>(a)] = v + adv[static_cast<std::size_t>(a)] - adv_mean;

    if (tape) {
        tape->x.assign(state.begin(), state.end());
        tape->z1 = std::move(z1);
        tape->h1 = std::move(h1);
        tape->z2 = std::move(z2);
        tape->h2 = std::move(h2);
        tape->q = q;
    }
    return q;
}

// Gradient of the dueling head and trunk given dL/dQ for one state.
void backward_q(const QModel& m, const QTape& tape, const std::array<double, QModel::kActions>& dq,
                std::vector<double>& grads) {
    const int D = m.state_dim();
    const int H = m.hidden();
    const double slope = m.leaky_slope();
    const auto& p = m.params();

    double dsum = 0;
    for (double d : dq) dsum += d;
    const double dmean = dsum / QModel::kActions;

    // dV = sum(dq); dA_a = dq_a - mean(dq).
    std::vector<double> dh2(static_cast<std::size_t>(H), 0.0);
    const double* wv = &p[m.off_wv()];
    double* gwv = &grads[m.off_wv()];
    for (int i = 0; i < H; ++i) {
        gwv[i] += dsum * tape.h2[static_cast<std::size_t>(i)];
        dh2[static_cast<std::size_t>(i)] += dsum * wv[i];
    }
    grads[m.off_bv()] += dsum;

    const double* wa = &p[m.off_wa()];
    double* gwa = &grads[m.off_wa()];
    double* gba = &grads[m.off_ba()];
    for (int a = 0; a < QModel::kActions; ++a) {
        double da = dq[static_cast<std::size_t>(a)] - dmean;
        if (da == 0.0) continue;
        gba[a] += da;
        const double* row = wa + static_cast<std::size_t>(a) * H;
        double* grow = gwa + static_cast<std::size_t>(a) * H;
        for (int i = 0; i < H; ++i) {
            grow[i] += da * tape.h2[static_cast<std::size_t>(i)];
            dh2[static_cast<std::size_t>(i)] += da * row[i];
        }
    }

    std::vector<double> dh1(static_cast<std::size_t>(H), 0.0);
    const double* w2 = &p[m.off_w2()];
    double* gw2 = &grads[m.off_w2()];
    double* gb2 = &grads[m.off_b2()];
    for (int h = 0; h < H; ++h) {
        double dz = dh2[static_cast<std::size_t>(h)] *
                    (tape.z2[static_cast<std::size_t>(h)] > 0 ? 1.0 : slope);
        if (dz == 0.0) continue;
        gb2[h] += dz;
        const double* row = w2 + static_cast<std::size_t>(h) * H;
        double* grow = gw2 + static_cast<std::size_t>(h) * H;
        for (int i = 0; i < H; ++i) {
            grow[i] += dz * tape.h1[static_cast<std::size_t>(i)];
            dh1[static_cast<std::size_t>(i)] += dz * row[i];
        }
    }

    double* gw1 = &grads[m.off_w1()];
    double* gb1 = &grads[m.off_b1()];
    for (int h = 0; h < H; ++h) {
        double dz = dh1[static_cast<std::size_t>(h)] *
                    (tape.z1[static_cast<std::size_t>(h)] > 0 ? 1.0 : slope);
        if (dz == 0.0) continue;
        gb1[h] += dz;
        double* grow = gw1 + static_cast<std::size_t>(h) * D;
        for (int i = 0; i < D; ++i) grow[i] += dz * tape.x[static_cast<std::size_t>(i)];
    }
}

int argmax_lowest(const std::array<double, QModel::kActions>& q) {
    int best = 0;
    for (int a = 1; a < QModel::kActions; ++a)
        if (q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(best)]) best = a;
    return best;
}

double logsumexp(const std::array<double, QModel::kActions>& q) {
    double mx = q[0];
    for (double v : q) mx = std::max(mx, v);
    double s = 0;
    for (double v : q) s += std::exp(v - mx);
    return mx + std::log(s);
}

} // namespace

std::array<double, QModel::kActions> q_values(const QModel& model, std::span<const double> state,
                                              bool use_target) {
    return forward_q(model, state, use_target ? model.target_params() : model.params(), nullptr);
}

int greedy_action(const QModel& model, std::span<const double> state) {
    return argmax_lowest(q_values(model, state));
}

int select_next_action(const QModel& model, std::span<const double> next_state) {
    return argmax_lowest(q_values(model, next_state, /*use_target=*/false));
}

double double_dqn_target(const QModel& model, const Transition& tr, double gamma) {
    if (tr.done) return tr.reward;
    int a_star = select_next_action(model, tr.next_state);
    auto qt = q_values(model, tr.next_state, /*use_target=*/true);
    return tr.reward + gamma * qt[static_cast<std::size_t>(a_star)];
}

namespace {

double loss_impl(const QModel& model, std::span<const Transition> batch, const QNetConfig& cfg,
                 std::vector<double>* grads) {
    if (batch.empty()) throw ValidationError("td_cql_loss of empty batch");
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double td_total = 0, cql_total = 0;
    QTape tape;
    for (const Transition& tr : batch) {
        auto q = forward_q(model, tr.state, model.params(), grads ? &tape : nullptr);
        const auto ai = static_cast<std::size_t>(tr.action);
        const double y = double_dqn_target(model, tr, cfg.gamma);
        const double e = q[ai] - y;
        const double ae = std::abs(e);
        td_total += ae <= cfg.huber_delta ? 0.5 * e * e
                                          : cfg.huber_delta * (ae - 0.5 * cfg.huber_delta);
        const double lse = logsumexp(q);
        cql_total += lse - q[ai];

        if (grads) {
            std::array<double, QModel::kActions> dq{};
            dq[ai] += std::clamp(e, -cfg.huber_delta, cfg.huber_delta) * inv_b;
            if (cfg.cql_alpha != 0.0) {
                // d(lse - q_a) = softmax - onehot.
                for (int a = 0; a < QModel::kActions; ++a)
                    dq[static_cast<std::size_t>(a)] +=
                        cfg.cql_alpha * std::exp(q[static_cast<std::size_t>(a)] - lse) * inv_b;
                dq[ai] -= cfg.cql_alpha * inv_b;
            }
            backward_q(model, tape, dq, *grads);
        }
    }
    return td_total * inv_b + cfg.cql_alpha * cql_total * inv_b;
}

} // namespace

double td_cql_loss(const QModel& model, std::span<const Transition> batch, const QNetConfig& cfg) {
    return loss_impl(model, batch, cfg, nullptr);
}

double td_cql_loss_and_grad(const QModel& model, std::span<const Transition> batch,
                            const QNetConfig& cfg, std::vector<double>& grads) {
    if (grads.size() != model.param_count()) grads.assign(model.param_count(), 0.0);
    return loss_impl(model, batch, cfg, &grads);
}

PolicyTrainResult train_policy(const std::vector<Transition>& transitions, int state_dim,
                               const QNetConfig& cfg) {
    if (transitions.empty()) throw ConfigError("cannot train a policy on zero transitions");
    if (cfg.batch_size < 1 || cfg.epochs < 1)
        throw ConfigError("batch_size and epochs must be positive");

    RngStream init_rng(cfg.seed, "rl-init");
    QModel model = QModel::init(state_dim, cfg.hidden, cfg.leaky_slope, init_rng);
    AdamState opt(model.param_count(), cfg.lr, cfg.grad_clip_norm);
    RngStream rng(cfg.seed, "rl");

    const std::size_t n = transitions.size();
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t steps_per_epoch = (n + batch - 1) / batch;

    // Fixed subsample for the dataset-action Q diagnostic.
    const std::size_t n_eval = std::min<std::size_t>(n, 4096);

    PolicyTrainResult result{model, {}};
    std::vector<double> grads(model.param_count(), 0.0);
    std::vector<Transition> minibatch(batch);
    long gradient_steps = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double epoch_loss = 0;
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            for (std::size_t b = 0; b < batch; ++b)
                minibatch[b] = transitions[rng.uniform_index(n)];
            std::fill(grads.begin(), grads.end(), 0.0);
            double loss = td_cql_loss_and_grad(model, minibatch, cfg, grads);
            if (!std::isfinite(loss))
                throw NumericError("policy training diverged: non-finite loss at epoch " +
                                   std::to_string(epoch));
            adam_step(model.params(), grads, opt);
            ++gradient_steps;
            if (cfg.target_sync_interval > 0 && gradient_steps % cfg.target_sync_interval == 0)
                model.sync_target();
            epoch_loss += loss;
        }
        double mean_q = 0;
        for (std::size_t i = 0; i < n_eval; ++i) {
            auto q = q_values(model, transitions[i].state);
            mean_q += q[static_cast<std::size_t>(transitions[i].action)];
        }
        mean_q /= static_cast<double>(n_eval);
        result.log.push_back(
            PolicyLogRow{epoch, epoch_loss / static_cast<double>(steps_per_epoch), mean_q});
    }
    result.model = model;
    return result;
}

void write_policy_log_csv(const std::vector<PolicyLogRow>& log, const std::string& path) {
    CsvWriter csv(path);
    csv.row({"epoch", "loss", "mean_dataset_q"});
    for (const PolicyLogRow& r : log)
        csv.row({std::to_string(r.epoch), fmt_double(r.loss), fmt_double(r.mean_dataset_q)});
}

} // namespace cnpr
