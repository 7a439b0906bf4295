#include "cnpr/preference.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cnpr/util.hpp"

namespace cnpr {

double softplus_stable(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double sigmoid_stable(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

namespace {

std::string score_histogram(const Cohort& cohort, const std::vector<std::size_t>& idx) {
    std::array<int, 6> hist{};
    for (std::size_t i : idx) hist[static_cast<std::size_t>(cohort.trajectories[i].tqs)]++;
    std::ostringstream os;
    os << "score histogram (train, tqs 0..5):";
    for (int s = 0; s <= 5; ++s) os << ' ' << hist[static_cast<std::size_t>(s)];
    return os.str();
}

} // namespace

std::vector<PreferencePair> build_pairs(const Cohort& cohort, const PrefTrainConfig& cfg) {
    if (cfg.min_gap < 1) throw ConfigError("min_gap must be >= 1");

    // Pairs are drawn from scored train trajectories only.
    std::vector<std::size_t> scored;
    for (std::size_t i = 0; i < cohort.trajectories.size(); ++i) {
        if (cohort.has_split() && !cohort.is_train(i)) continue;
        if (cohort.trajectories[i].tqs >= 1) scored.push_back(i);
    }
    if (scored.size() < 2)
        throw ConfigError("need at least 2 scored train trajectories; " +
                          score_histogram(cohort, scored));

    RngStream rng(cfg.seed, "pairs");
    std::vector<PreferencePair> pairs;
    std::vector<std::size_t> pool;
    for (std::size_t i : scored) {
        const int yi = cohort.trajectories[i].tqs;
        pool.clear();
        for (std::size_t j : scored)
            if (yi - cohort.trajectories[j].tqs >= cfg.min_gap) pool.push_back(j);
        if (pool.empty()) continue;
        auto take = static_cast<std::size_t>(std::max(0, cfg.partners_per_traj));
        auto chosen = rng.sample_indices(pool.size(), take);
        std::sort(chosen.begin(), chosen.end());
        for (std::size_t c : chosen) {
            std::size_t j = pool[c];
            const auto& wi = cohort.trajectories[i];
            const auto& lo = cohort.trajectories[j];
            PreferencePair p;
            p.winner = i;
            p.loser = j;
            p.score_gap = static_cast<double>(wi.tqs - lo.tqs);
            p.weight = p.score_gap * wi.confidence * lo.confidence;
            p.margin = cfg.margin_base + cfg.margin_per_gap * p.score_gap;
            pairs.push_back(p);
        }
    }
    if (pairs.empty())
        throw ConfigError("no preference pair satisfies min_gap=" + std::to_string(cfg.min_gap) +
                          "; " + score_histogram(cohort, scored));

    long cap = cfg.max_pairs > 0 ? cfg.max_pairs : 50l * static_cast<long>(scored.size());
    if (static_cast<long>(pairs.size()) > cap) {
        auto keep = rng.sample_indices(pairs.size(), static_cast<std::size_t>(cap));
        std::sort(keep.begin(), keep.end());
        std::vector<PreferencePair> sub;
        sub.reserve(keep.size());
        for (std::size_t k : keep) sub.push_back(pairs[k]);
        pairs = std::move(sub);
    }
    return pairs;
}

double pair_loss(const RewardModel& model, const PreferencePair& pair, const Cohort& cohort) {
    double rw = trajectory_return(model, cohort.trajectories[pair.winner]);
    double rl = trajectory_return(model, cohort.trajectories[pair.loser]);
    return pair.weight * softplus_stable(pair.margin - (rw - rl));
}

double batch_loss(const RewardModel& model, std::span<const PreferencePair> pairs,
                  const Cohort& cohort, const PrefTrainConfig& cfg) {
    if (pairs.empty()) throw ValidationError("batch_loss of empty pair set");
    double pref = 0, reg = 0;
    std::size_t n_steps = 0;
    for (const PreferencePair& p : pairs) {
        double rw = 0, rl = 0;
        for (std::size_t who = 0; who < 2; ++who) {
            const Trajectory& t = cohort.trajectories[who == 0 ? p.winner : p.loser];
            const auto& states = t.model_states();
            double sum = 0;
            for (std::size_t s = 0; s < states.size(); ++s) {
                double r = forward_step_reward(model, states[s], t.actions[s], ForwardMode::Eval);
                sum += r;
                reg += r * r;
                ++n_steps;
            }
            (who == 0 ? rw : rl) = sum;
        }
        pref += p.weight * softplus_stable(p.margin - (rw - rl));
    }
    return pref / static_cast<double>(pairs.size()) +
           cfg.reward_l2 * reg / static_cast<double>(n_steps);
}

double batch_loss_and_grad(const RewardModel& model, std::span<const PreferencePair> pairs,
                           const Cohort& cohort, const PrefTrainConfig& cfg,
                           std::uint64_t dropout_seed, std::vector<double>& grads) {
    if (pairs.empty()) throw ValidationError("batch_loss_and_grad of empty pair set");
    if (grads.size() != model.param_count()) grads.assign(model.param_count(), 0.0);

    RngStream drop(dropout_seed, "dropout");
    struct PairRecord {
        std::vector<StepTape> winner_tapes, loser_tapes;
        double rw = 0, rl = 0;
    };
    std::vector<PairRecord> records(pairs.size());

    std::size_t n_steps = 0;
    double reg = 0;
    for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
        const PreferencePair& p = pairs[pi];
        PairRecord& rec = records[pi];
        for (std::size_t who = 0; who < 2; ++who) {
            const Trajectory& t = cohort.trajectories[who == 0 ? p.winner : p.loser];
            const auto& states = t.model_states();
            auto& tapes = who == 0 ? rec.winner_tapes : rec.loser_tapes;
            tapes.resize(states.size());
            double sum = 0;
            for (std::size_t s = 0; s < states.size(); ++s) {
                double r = forward_step_reward(model, states[s], t.actions[s], ForwardMode::Train,
                                               &drop, &tapes[s]);
                sum += r;
                reg += r * r;
                ++n_steps;
            }
            (who == 0 ? rec.rw : rec.rl) = sum;
        }
    }

    const double inv_pairs = 1.0 / static_cast<double>(pairs.size());
    const double reg_coeff = 2.0 * cfg.reward_l2 / static_cast<double>(n_steps);
    double pref = 0;
    for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
        const PreferencePair& p = pairs[pi];
        PairRecord& rec = records[pi];
        const double u = p.margin - (rec.rw - rec.rl);
        pref += p.weight * softplus_stable(u);
        const double dpair = p.weight * sigmoid_stable(u) * inv_pairs; // d(mean pref)/dR_l
        for (const StepTape& tape : rec.winner_tapes)
            backward_step(model, tape, -dpair + reg_coeff * tape.reward, grads);
        for (const StepTape& tape : rec.loser_tapes)
            backward_step(model, tape, dpair + reg_coeff * tape.reward, grads);
    }
    return pref * inv_pairs + cfg.reward_l2 * reg / static_cast<double>(n_steps);
}

namespace {

double eval_pair_accuracy(const RewardModel& model, std::span<const PreferencePair> pairs,
                          const Cohort& cohort, const std::vector<double>& returns) {
    if (pairs.empty()) return 0.0;
    std::size_t ok = 0;
    for (const PreferencePair& p : pairs)
        if (returns[p.winner] > returns[p.loser]) ++ok;
    (void)model;
    (void)cohort;
    return static_cast<double>(ok) / static_cast<double>(pairs.size());
}

// Eval-mode returns for every trajectory referenced by at least one pair.
std::vector<double> cached_returns(const RewardModel& model, const Cohort& cohort,
                                   std::span<const PreferencePair> pairs) {
    std::vector<double> returns(cohort.trajectories.size(), 0.0);
    std::vector<char> needed(cohort.trajectories.size(), 0);
    for (const PreferencePair& p : pairs) {
        needed[p.winner] = 1;
        needed[p.loser] = 1;
    }
    for (std::size_t i = 0; i < needed.size(); ++i)
        if (needed[i]) returns[i] = trajectory_return(model, cohort.trajectories[i]);
    return returns;
}

double eval_set_loss(const RewardModel& model, std::span<const PreferencePair> pairs,
                     const Cohort& cohort, const PrefTrainConfig& cfg) {
    if (pairs.empty()) return 0.0;
    return batch_loss(model, pairs, cohort, cfg);
}

} // namespace

RewardTrainResult train_reward(const Cohort& cohort, const PrefTrainConfig& cfg) {
    if (!(cfg.val_frac >= 0.0 && cfg.val_frac < 1.0)) throw ConfigError("val_frac must be in [0,1)");
    if (cfg.batch_pairs < 1) throw ConfigError("batch_pairs must be >= 1");
    if (cfg.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");

    std::vector<PreferencePair> pairs = build_pairs(cohort, cfg);

    RngStream rng(cfg.seed, "pref-train");
    rng.shuffle(pairs);
    auto n_val = static_cast<std::size_t>(
        std::llround(cfg.val_frac * static_cast<double>(pairs.size())));
    if (n_val >= pairs.size()) n_val = pairs.size() - 1;
    std::vector<PreferencePair> val(pairs.begin(), pairs.begin() + static_cast<long>(n_val));
    std::vector<PreferencePair> train(pairs.begin() + static_cast<long>(n_val), pairs.end());

    const int D = static_cast<int>(cohort.feature_count());
    RngStream init_rng(cfg.seed, "init");
    RewardModel model = RewardModel::he_init(D, cfg.hidden, cfg.dropout, init_rng);
    AdamState opt(model.param_count(), cfg.lr, cfg.grad_clip_norm);

    RewardTrainResult result{model, {}, 0, train.size(), val.size()};
    std::vector<double> best_params = model.params();
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int bad_epochs = 0;
    std::vector<double> grads(model.param_count(), 0.0);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(train);
        double epoch_loss = 0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < train.size();
             start += static_cast<std::size_t>(cfg.batch_pairs)) {
            std::size_t end = std::min(train.size(), start + static_cast<std::size_t>(cfg.batch_pairs));
            std::span<const PreferencePair> batch(train.data() + start, end - start);
            std::fill(grads.begin(), grads.end(), 0.0);
            double loss = batch_loss_and_grad(model, batch, cohort, cfg, rng.next_u64(), grads);
            if (!std::isfinite(loss))
                throw NumericError("reward training diverged: non-finite loss at epoch " +
                                   std::to_string(epoch));
            adam_step(model.params(), grads, opt);
            epoch_loss += loss;
            ++n_batches;
        }
        epoch_loss /= static_cast<double>(n_batches);

        // Validation in eval mode; falls back to the train set when val_frac
        // rounds to zero pairs.
        std::span<const PreferencePair> monitor(val.empty() ? train : val);
        auto returns = cached_returns(model, cohort, monitor);
        double val_loss = eval_set_loss(model, monitor, cohort, cfg);
        double val_acc = eval_pair_accuracy(model, monitor, cohort, returns);
        result.log.push_back(TrainLogRow{epoch, epoch_loss, val_loss, val_acc});
        if (!std::isfinite(val_loss))
            throw NumericError("reward training diverged: non-finite validation loss");

        if (val_loss < best_val) {
            best_val = val_loss;
            best_params = model.params();
            best_epoch = epoch;
            bad_epochs = 0;
        } else {
            ++bad_epochs;
            if (bad_epochs > cfg.patience) break;
        }
    }

    model.params() = best_params;
    result.model = model;
    result.best_epoch = best_epoch;
    return result;
}

void write_train_log_csv(const std::vector<TrainLogRow>& log, const std::string& path) {
    CsvWriter csv(path);
    csv.row({"epoch", "train_loss", "val_loss", "val_pair_accuracy"});
    for (const TrainLogRow& r : log)
        csv.row({std::to_string(r.epoch), fmt_double(r.train_loss), fmt_double(r.val_loss),
                 fmt_double(r.val_pair_accuracy)});
}

NormalizationParams fit_normalization(const RewardModel& model, const Cohort& cohort) {
    std::vector<double> rewards;
    for (std::size_t i = 0; i < cohort.trajectories.size(); ++i) {
        if (cohort.has_split() && !cohort.is_train(i)) continue;
        const Trajectory& t = cohort.trajectories[i];
        const auto& states = t.model_states();
        for (std::size_t s = 0; s < states.size(); ++s)
            rewards.push_back(
                forward_step_reward(model, states[s], t.actions[s], ForwardMode::Eval));
    }
    if (rewards.empty()) throw ValidationError("no train steps available for normalization");
    std::sort(rewards.begin(), rewards.end());
    NormalizationParams p;
    p.lo = quantile_sorted(rewards, 0.01);
    p.hi = quantile_sorted(rewards, 0.99);
    if (!(p.lo < p.hi))
        throw NumericError("degenerate reward distribution: percentile band is empty (lo=" +
                           fmt_double(p.lo) + ", hi=" + fmt_double(p.hi) + ")");
    p.scale_c = std::max(std::abs(p.lo), std::abs(p.hi));
    return p;
}

double normalize_reward(double raw, const NormalizationParams& p) {
    if (!(p.lo < p.hi) || !(p.scale_c > 0.0))
        throw StateError("normalization parameters are degenerate");
    double clipped = std::clamp(raw, p.lo, p.hi);
    return std::tanh(clipped / p.scale_c);
}

} // namespace cnpr
