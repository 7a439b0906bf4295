#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cnpr/pipeline.hpp"

using namespace cnpr;

namespace {

// Flags layer on top of the config file: config-file < flag precedence.
struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::int64_t seed = -1;
    int threads = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("-c,--config", opts.config_path, "experiment config (JSON)");
    cmd->add_option("-o,--out", opts.out_dir, "output directory");
    cmd->add_option("--seed", opts.seed, "global seed");
    cmd->add_option("--threads", opts.threads, "intra-stage thread count");
}

ExperimentConfig resolve_config(const CommonOpts& opts) {
    ExperimentConfig cfg =
        opts.config_path.empty() ? ExperimentConfig{} : load_config(opts.config_path);
    if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
    if (opts.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed);
    if (opts.threads > 0) cfg.threads = opts.threads;
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"preference-based reward learning and offline policy evaluation "
                 "for ICU treatment trajectories"};
    app.require_subcommand(1);

    CommonOpts opts;

    // generate
    auto* gen = app.add_subcommand("generate", "generate a synthetic cohort (or ingest a file)");
    add_common(gen, opts);
    std::int64_t gen_n = -1;
    bool gen_reduced = false;
    std::string gen_cohort_path;
    gen->add_option("--n", gen_n, "number of synthetic trajectories");
    gen->add_flag("--reduced-features", gen_reduced, "use the reduced feature set");
    gen->add_option("--cohort", gen_cohort_path, "ingest this JSONL cohort instead of generating");

    // learn-reward
    auto* learn = app.add_subcommand("learn-reward", "train the preference-based reward model");
    add_common(learn, opts);
    struct {
        std::int64_t min_gap = -1, max_pairs = -1, partners = -1, batch_pairs = -1,
                     max_epochs = -1, patience = -1, hidden = -1;
        double margin_base = -1e30, margin_per_gap = -1e30, reward_l2 = -1e30, lr = -1e30,
               val_frac = -1e30, dropout = -1e30, grad_clip = -1e30;
        std::string cohort_path, checkpoint_out, log_out;
    } lr_opts;
    learn->add_option("--cohort", lr_opts.cohort_path, "cohort JSONL path (file source)");
    learn->add_option("--min-gap", lr_opts.min_gap, "minimum score gap for a pair");
    learn->add_option("--max-pairs", lr_opts.max_pairs, "cap on total pairs");
    learn->add_option("--partners-per-traj", lr_opts.partners, "lower-scored partners per trajectory");
    learn->add_option("--margin-base", lr_opts.margin_base, "margin intercept m0");
    learn->add_option("--margin-per-gap", lr_opts.margin_per_gap, "margin slope per score gap");
    learn->add_option("--reward-l2", lr_opts.reward_l2, "squared-reward penalty weight");
    learn->add_option("--lr", lr_opts.lr, "learning rate");
    learn->add_option("--batch-pairs", lr_opts.batch_pairs, "pairs per mini-batch");
    learn->add_option("--max-epochs", lr_opts.max_epochs, "epoch cap");
    learn->add_option("--patience", lr_opts.patience, "early-stopping patience");
    learn->add_option("--val-frac", lr_opts.val_frac, "validation fraction of pairs");
    learn->add_option("--hidden", lr_opts.hidden, "hidden layer width");
    learn->add_option("--dropout", lr_opts.dropout, "dropout probability");
    learn->add_option("--grad-clip", lr_opts.grad_clip, "global gradient-norm clip");
    learn->add_option("--checkpoint-out", lr_opts.checkpoint_out,
                      "reward checkpoint path (default <out>/reward_cnpr.json)");
    learn->add_option("--log-out", lr_opts.log_out,
                      "train-log CSV path (default <out>/reward_train_log.csv)");

    // score-baselines
    auto* score = app.add_subcommand("score-baselines",
                                     "export per-step reward traces for every formulation");
    add_common(score, opts);

    // train-policy
    auto* train = app.add_subcommand("train-policy", "train a policy under one reward source");
    add_common(train, opts);
    struct {
        std::string reward = "cnpr";
        std::int64_t hidden = -1, batch = -1, epochs = -1, sync = -1;
        double lr = -1e30, gamma = -1e30, cql_alpha = -1e30, huber = -1e30;
    } rl_opts;
    train->add_option("--reward", rl_opts.reward,
                      "reward source: cnpr | mortality | sofa_lac | news2 | all");
    train->add_option("--hidden", rl_opts.hidden, "hidden layer width");
    train->add_option("--lr", rl_opts.lr, "learning rate");
    train->add_option("--gamma", rl_opts.gamma, "discount factor");
    train->add_option("--batch", rl_opts.batch, "batch size");
    train->add_option("--cql-alpha", rl_opts.cql_alpha, "conservative penalty weight");
    train->add_option("--target-sync", rl_opts.sync, "gradient steps between target syncs");
    train->add_option("--huber-delta", rl_opts.huber, "Huber loss threshold");
    train->add_option("--epochs", rl_opts.epochs, "training epochs");

    // compute-outcomes
    auto* outcomes = app.add_subcommand("compute-outcomes", "emit per-trajectory outcome metrics");
    add_common(outcomes, opts);

    // evaluate
    auto* eval = app.add_subcommand("evaluate",
                                    "distances, regressions, correlations, heatmaps, importances");
    add_common(eval, opts);

    // report
    auto* report = app.add_subcommand("report", "aggregate a finished run into report.md");
    add_common(report, opts);

    // run (full pipeline)
    auto* run = app.add_subcommand("run", "run the full pipeline end to end");
    add_common(run, opts);
    std::int64_t run_n = -1;
    run->add_option("--n", run_n, "synthetic cohort size");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        ExperimentConfig cfg = resolve_config(opts);

        if (gen->parsed()) {
            if (gen_n >= 0) cfg.synth.n = static_cast<int>(gen_n);
            if (gen_reduced) cfg.synth.reduced_features = true;
            if (!gen_cohort_path.empty()) {
                cfg.cohort_source = "file";
                cfg.cohort_path = gen_cohort_path;
            }
            PipelineContext ctx{cfg, {}, {}, {}};
            stage_cohort(ctx);
        } else if (learn->parsed()) {
            if (!lr_opts.cohort_path.empty()) {
                cfg.cohort_source = "file";
                cfg.cohort_path = lr_opts.cohort_path;
            }
            if (lr_opts.min_gap >= 0) cfg.reward.min_gap = static_cast<int>(lr_opts.min_gap);
            if (lr_opts.max_pairs >= 0) cfg.reward.max_pairs = lr_opts.max_pairs;
            if (lr_opts.partners >= 0) cfg.reward.partners_per_traj = static_cast<int>(lr_opts.partners);
            if (lr_opts.margin_base > -1e29) cfg.reward.margin_base = lr_opts.margin_base;
            if (lr_opts.margin_per_gap > -1e29) cfg.reward.margin_per_gap = lr_opts.margin_per_gap;
            if (lr_opts.reward_l2 > -1e29) cfg.reward.reward_l2 = lr_opts.reward_l2;
            if (lr_opts.lr > -1e29) cfg.reward.lr = lr_opts.lr;
            if (lr_opts.batch_pairs >= 0) cfg.reward.batch_pairs = static_cast<int>(lr_opts.batch_pairs);
            if (lr_opts.max_epochs >= 0) cfg.reward.max_epochs = static_cast<int>(lr_opts.max_epochs);
            if (lr_opts.patience >= 0) cfg.reward.patience = static_cast<int>(lr_opts.patience);
            if (lr_opts.val_frac > -1e29) cfg.reward.val_frac = lr_opts.val_frac;
            if (lr_opts.hidden >= 0) cfg.reward.hidden = static_cast<int>(lr_opts.hidden);
            if (lr_opts.dropout > -1e29) cfg.reward.dropout = lr_opts.dropout;
            if (lr_opts.grad_clip > -1e29) cfg.reward.grad_clip_norm = lr_opts.grad_clip;
            PipelineContext ctx{cfg, {}, {}, {}};
            stage_learn_reward(ctx);
            // Optional copies at user-chosen paths.
            if (!lr_opts.checkpoint_out.empty())
                save_reward_checkpoint(*ctx.reward, lr_opts.checkpoint_out);
            if (!lr_opts.log_out.empty()) {
                std::ifstream src(std::string(cfg.out_dir) + "/reward_train_log.csv",
                                  std::ios::binary);
                std::ofstream dst(lr_opts.log_out, std::ios::binary);
                dst << src.rdbuf();
            }
        } else if (score->parsed()) {
            PipelineContext ctx{cfg, {}, {}, {}};
            stage_score_baselines(ctx);
        } else if (train->parsed()) {
            if (rl_opts.hidden >= 0) cfg.rl.hidden = static_cast<int>(rl_opts.hidden);
            if (rl_opts.lr > -1e29) cfg.rl.lr = rl_opts.lr;
            if (rl_opts.gamma > -1e29) cfg.rl.gamma = rl_opts.gamma;
            if (rl_opts.batch >= 0) cfg.rl.batch_size = static_cast<int>(rl_opts.batch);
            if (rl_opts.cql_alpha > -1e29) cfg.rl.cql_alpha = rl_opts.cql_alpha;
            if (rl_opts.sync >= 0) cfg.rl.target_sync_interval = static_cast<int>(rl_opts.sync);
            if (rl_opts.huber > -1e29) cfg.rl.huber_delta = rl_opts.huber;
            if (rl_opts.epochs >= 0) cfg.rl.epochs = static_cast<int>(rl_opts.epochs);
            PipelineContext ctx{cfg, {}, {}, {}};
            if (rl_opts.reward == "all") {
                for (const std::string& source : kRewardSources) stage_train_policy(ctx, source);
            } else {
                stage_train_policy(ctx, rl_opts.reward);
            }
        } else if (outcomes->parsed()) {
            PipelineContext ctx{cfg, {}, {}, {}};
            stage_compute_outcomes(ctx);
        } else if (eval->parsed()) {
            PipelineContext ctx{cfg, {}, {}, {}};
            stage_evaluate(ctx);
        } else if (report->parsed()) {
            PipelineContext ctx{cfg, {}, {}, {}};
            stage_report(ctx);
        } else if (run->parsed()) {
            if (run_n >= 0) cfg.synth.n = static_cast<int>(run_n);
            run_pipeline(cfg);
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
