#include "cnpr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "cnpr/evaluation.hpp"
#include "cnpr/outcomes.hpp"
#include "cnpr/util.hpp"

namespace fs = std::filesystem;

namespace cnpr {

using nlohmann::json;

// --------------------------------------------------------------------------
// Config serialization

namespace {

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

json synth_to_json(const SynthConfig& s) {
    return json{{"n", s.n},
                {"reduced_features", s.reduced_features},
                {"min_steps", s.min_steps},
                {"max_steps", s.max_steps},
                {"tqs_cumulative", s.tqs_cumulative},
                {"tqs_noise", s.tqs_noise},
                {"unscorable_frac", s.unscorable_frac},
                {"death_threshold", s.death_threshold},
                {"death_noise", s.death_noise},
                {"baseline_sev_quality_coupling", s.baseline_sev_quality_coupling},
                {"sev_drift_gain", s.sev_drift_gain},
                {"sev_step_noise", s.sev_step_noise},
                {"state_noise", s.state_noise}};
}

void synth_from_json(const json& j, SynthConfig& s) {
    get_if(j, "n", s.n);
    get_if(j, "reduced_features", s.reduced_features);
    get_if(j, "min_steps", s.min_steps);
    get_if(j, "max_steps", s.max_steps);
    get_if(j, "tqs_cumulative", s.tqs_cumulative);
    get_if(j, "tqs_noise", s.tqs_noise);
    get_if(j, "unscorable_frac", s.unscorable_frac);
    get_if(j, "death_threshold", s.death_threshold);
    get_if(j, "death_noise", s.death_noise);
    get_if(j, "baseline_sev_quality_coupling", s.baseline_sev_quality_coupling);
    get_if(j, "sev_drift_gain", s.sev_drift_gain);
    get_if(j, "sev_step_noise", s.sev_step_noise);
    get_if(j, "state_noise", s.state_noise);
}

json reward_to_json(const PrefTrainConfig& p) {
    return json{{"min_gap", p.min_gap},
                {"max_pairs", p.max_pairs},
                {"partners_per_traj", p.partners_per_traj},
                {"margin_base", p.margin_base},
                {"margin_per_gap", p.margin_per_gap},
                {"reward_l2", p.reward_l2},
                {"lr", p.lr},
                {"batch_pairs", p.batch_pairs},
                {"max_epochs", p.max_epochs},
                {"patience", p.patience},
                {"val_frac", p.val_frac},
                {"hidden", p.hidden},
                {"dropout", p.dropout},
                {"grad_clip_norm", p.grad_clip_norm}};
}

void reward_from_json(const json& j, PrefTrainConfig& p) {
    get_if(j, "min_gap", p.min_gap);
    get_if(j, "max_pairs", p.max_pairs);
    get_if(j, "partners_per_traj", p.partners_per_traj);
    get_if(j, "margin_base", p.margin_base);
    get_if(j, "margin_per_gap", p.margin_per_gap);
    get_if(j, "reward_l2", p.reward_l2);
    get_if(j, "lr", p.lr);
    get_if(j, "batch_pairs", p.batch_pairs);
    get_if(j, "max_epochs", p.max_epochs);
    get_if(j, "patience", p.patience);
    get_if(j, "val_frac", p.val_frac);
    get_if(j, "hidden", p.hidden);
    get_if(j, "dropout", p.dropout);
    get_if(j, "grad_clip_norm", p.grad_clip_norm);
}

json rl_to_json(const QNetConfig& q) {
    return json{{"hidden", q.hidden},
                {"leaky_slope", q.leaky_slope},
                {"lr", q.lr},
                {"gamma", q.gamma},
                {"batch_size", q.batch_size},
                {"cql_alpha", q.cql_alpha},
                {"target_sync_interval", q.target_sync_interval},
                {"huber_delta", q.huber_delta},
                {"epochs", q.epochs},
                {"grad_clip_norm", q.grad_clip_norm}};
}

void rl_from_json(const json& j, QNetConfig& q) {
    get_if(j, "hidden", q.hidden);
    get_if(j, "leaky_slope", q.leaky_slope);
    get_if(j, "lr", q.lr);
    get_if(j, "gamma", q.gamma);
    get_if(j, "batch_size", q.batch_size);
    get_if(j, "cql_alpha", q.cql_alpha);
    get_if(j, "target_sync_interval", q.target_sync_interval);
    get_if(j, "huber_delta", q.huber_delta);
    get_if(j, "epochs", q.epochs);
    get_if(j, "grad_clip_norm", q.grad_clip_norm);
}

json baselines_to_json(const BaselineConfig& b) {
    return json{{"mortality_terminal", b.mortality_terminal},
                {"sofa_lac",
                 {{"c0", b.sofa_lac.c0},
                  {"c1", b.sofa_lac.c1},
                  {"c2", b.sofa_lac.c2},
                  {"r_outcome_survive", b.sofa_lac.r_outcome_survive},
                  {"r_outcome_die", b.sofa_lac.r_outcome_die}}},
                {"news2_r_die", b.news2_r_die},
                {"news2_r_survive", b.news2_r_survive}};
}

void baselines_from_json(const json& j, BaselineConfig& b) {
    get_if(j, "mortality_terminal", b.mortality_terminal);
    if (j.contains("sofa_lac")) {
        const json& s = j.at("sofa_lac");
        get_if(s, "c0", b.sofa_lac.c0);
        get_if(s, "c1", b.sofa_lac.c1);
        get_if(s, "c2", b.sofa_lac.c2);
        get_if(s, "r_outcome_survive", b.sofa_lac.r_outcome_survive);
        get_if(s, "r_outcome_die", b.sofa_lac.r_outcome_die);
    }
    get_if(j, "news2_r_die", b.news2_r_die);
    get_if(j, "news2_r_survive", b.news2_r_survive);
}

json eval_to_json(const EvalConfig& e) {
    return json{{"n_boot", e.n_boot},
                {"heatmap_sofa_threshold", e.heatmap_sofa_threshold},
                {"forest",
                 {{"n_trees", e.forest.n_trees},
                  {"max_depth", e.forest.max_depth},
                  {"min_samples_split", e.forest.min_samples_split},
                  {"mtry", e.forest.mtry},
                  {"threads", e.forest.threads}}},
                {"forest_k_repeats", e.forest_k_repeats},
                {"forest_holdout_frac", e.forest_holdout_frac},
                {"forest_max_rows", e.forest_max_rows},
                {"use_test_split", e.use_test_split}};
}

void eval_from_json(const json& j, EvalConfig& e) {
    get_if(j, "n_boot", e.n_boot);
    get_if(j, "heatmap_sofa_threshold", e.heatmap_sofa_threshold);
    if (j.contains("forest")) {
        const json& f = j.at("forest");
        get_if(f, "n_trees", e.forest.n_trees);
        get_if(f, "max_depth", e.forest.max_depth);
        get_if(f, "min_samples_split", e.forest.min_samples_split);
        get_if(f, "mtry", e.forest.mtry);
        get_if(f, "threads", e.forest.threads);
    }
    get_if(j, "forest_k_repeats", e.forest_k_repeats);
    get_if(j, "forest_holdout_frac", e.forest_holdout_frac);
    get_if(j, "forest_max_rows", e.forest_max_rows);
    get_if(j, "use_test_split", e.use_test_split);
}

} // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    get_if(j, "seed", cfg.seed);
    get_if(j, "out_dir", cfg.out_dir);
    get_if(j, "threads", cfg.threads);
    if (j.contains("cohort")) {
        const json& c = j.at("cohort");
        get_if(c, "source", cfg.cohort_source);
        get_if(c, "path", cfg.cohort_path);
        get_if(c, "train_frac", cfg.train_frac);
        if (c.contains("synthetic")) synth_from_json(c.at("synthetic"), cfg.synth);
    }
    if (j.contains("reward")) reward_from_json(j.at("reward"), cfg.reward);
    if (j.contains("rl")) rl_from_json(j.at("rl"), cfg.rl);
    if (j.contains("baselines")) baselines_from_json(j.at("baselines"), cfg.baselines);
    if (j.contains("evaluation")) eval_from_json(j.at("evaluation"), cfg.eval);
    if (cfg.cohort_source != "synthetic" && cfg.cohort_source != "file")
        throw ConfigError("cohort.source must be 'synthetic' or 'file'");
    if (cfg.cohort_source == "file" && cfg.cohort_path.empty())
        throw ConfigError("cohort.source 'file' requires cohort.path");
    return cfg;
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    j["threads"] = cfg.threads;
    j["cohort"] = {{"source", cfg.cohort_source},
                   {"path", cfg.cohort_path},
                   {"train_frac", cfg.train_frac},
                   {"synthetic", synth_to_json(cfg.synth)}};
    j["reward"] = reward_to_json(cfg.reward);
    j["rl"] = rl_to_json(cfg.rl);
    j["baselines"] = baselines_to_json(cfg.baselines);
    j["evaluation"] = eval_to_json(cfg.eval);
    return j.dump(2) + "\n";
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    ExperimentConfig cfg = config_from_json_text(ss.str());
    // Environment may override only the output directory and thread count.
    if (const char* od = std::getenv("CNPR_OUT_DIR")) cfg.out_dir = od;
    if (const char* th = std::getenv("CNPR_THREADS")) cfg.threads = std::atoi(th);
    return cfg;
}

// --------------------------------------------------------------------------
// Hashing and manifest

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot hash missing file: " + path);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[65536];
    while (in) {
        in.read(buf, sizeof(buf));
        EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

namespace {

fs::path manifest_path(const std::string& out_dir) { return fs::path(out_dir) / "manifest.json"; }

json load_manifest(const std::string& out_dir) {
    std::ifstream in(manifest_path(out_dir));
    if (!in) return json{{"files", json::object()}};
    json j;
    try {
        in >> j;
    } catch (const json::exception&) {
        return json{{"files", json::object()}};
    }
    if (!j.contains("files")) j["files"] = json::object();
    return j;
}

} // namespace

void manifest_record(const std::string& out_dir, const std::vector<std::string>& rel_paths) {
    json m = load_manifest(out_dir);
    for (const std::string& rel : rel_paths)
        m["files"][rel] = sha256_file((fs::path(out_dir) / rel).string());
    std::ofstream out(manifest_path(out_dir));
    out << m.dump(2) << '\n';
}

void manifest_check_input(const std::string& out_dir, const std::string& rel_path) {
    json m = load_manifest(out_dir);
    if (!m["files"].contains(rel_path)) return;
    fs::path full = fs::path(out_dir) / rel_path;
    if (!fs::exists(full)) return;
    std::string current = sha256_file(full.string());
    std::string recorded = m["files"][rel_path].get<std::string>();
    if (current != recorded)
        std::cerr << "warning: input '" << rel_path
                  << "' does not match the manifest hash recorded when it was produced "
                     "(stale upstream?)\n";
}

// --------------------------------------------------------------------------
// Stage plumbing

namespace {

fs::path out_path(const PipelineContext& ctx, const std::string& rel) {
    return fs::path(ctx.cfg.out_dir) / rel;
}

void ensure_out_dir(const PipelineContext& ctx) { fs::create_directories(ctx.cfg.out_dir); }

void require_cohort(PipelineContext& ctx) {
    if (ctx.cohort) return;
    std::string rel = "cohort.jsonl";
    std::string path;
    if (ctx.cfg.cohort_source == "file") {
        path = ctx.cfg.cohort_path;
    } else {
        path = out_path(ctx, rel).string();
        manifest_check_input(ctx.cfg.out_dir, rel);
    }
    if (!fs::exists(path))
        throw ValidationError("cohort file not found: " + path + " (run the generate stage first?)");
    Cohort c = load_cohort(path);
    fit_split_and_scaler(c, ctx.cfg.train_frac, ctx.cfg.seed);
    ctx.cohort = std::move(c);
}

void require_reward(PipelineContext& ctx) {
    if (ctx.reward) return;
    std::string rel = "reward_cnpr.json";
    manifest_check_input(ctx.cfg.out_dir, rel);
    std::string path = out_path(ctx, rel).string();
    if (!fs::exists(path))
        throw ValidationError("reward checkpoint not found: " + path +
                              " (run the learn-reward stage first?)");
    ctx.reward = load_reward_checkpoint(path);
}

void require_policy(PipelineContext& ctx, const std::string& source) {
    if (ctx.policies.count(source)) return;
    std::string rel = "policy_" + source + ".json";
    manifest_check_input(ctx.cfg.out_dir, rel);
    std::string path = out_path(ctx, rel).string();
    if (!fs::exists(path))
        throw ValidationError("policy checkpoint not found: " + path +
                              " (run the train-policy stage first?)");
    ctx.policies.emplace(source, load_policy_checkpoint(path));
}

StepRewardFn make_reward_fn(PipelineContext& ctx, const std::string& source) {
    const FeatureMap fm = FeatureMap::from(ctx.cohort->feature_names);
    if (source == "cnpr") {
        require_reward(ctx);
        const RewardModel* model = &ctx.reward->model;
        NormalizationParams norm = ctx.reward->norm;
        return [model, norm](const Trajectory& t, std::size_t s) {
            double raw = forward_step_reward(*model, t.model_states()[s], t.actions[s],
                                             ForwardMode::Eval);
            return normalize_reward(raw, norm);
        };
    }
    if (source == "mortality") {
        double r = ctx.cfg.baselines.mortality_terminal;
        return [r](const Trajectory& t, std::size_t s) { return mortality_reward(t, s, r); };
    }
    if (source == "sofa_lac") {
        SofaLacCoeffs cf = ctx.cfg.baselines.sofa_lac;
        return [cf, fm](const Trajectory& t, std::size_t s) {
            return sofa_lac_reward(t, s, cf, fm);
        };
    }
    if (source == "news2") {
        double rd = ctx.cfg.baselines.news2_r_die, rs = ctx.cfg.baselines.news2_r_survive;
        return [fm, rd, rs](const Trajectory& t, std::size_t s) {
            return news2_reward(t, s, fm, rd, rs);
        };
    }
    throw ConfigError("unknown reward source: " + source);
}

// Deterministic per-(trajectory, step) uniform action, independent of
// evaluation order.
PolicyFn make_random_policy(std::uint64_t seed) {
    std::uint64_t base = derive_seed(seed, "random-policy");
    return [base](const Trajectory& t, std::size_t s) {
        RngStream r(splitmix64(derive_seed(base, fnv1a64(t.id)) ^ (s + 1)));
        return Action::from_joint(r.uniform_int(kNumJointActions));
    };
}

PolicyFn make_greedy_policy(const QModel& model) {
    return [&model](const Trajectory& t, std::size_t s) {
        return Action::from_joint(greedy_action(model, t.model_states()[s]));
    };
}

std::vector<std::size_t> eval_indices(const PipelineContext& ctx) {
    std::vector<std::size_t> idx;
    const Cohort& c = *ctx.cohort;
    for (std::size_t i = 0; i < c.trajectories.size(); ++i)
        if (!ctx.cfg.eval.use_test_split || !c.has_split() || !c.is_train(i)) idx.push_back(i);
    return idx;
}

} // namespace

// --------------------------------------------------------------------------
// Stages

void stage_cohort(PipelineContext& ctx) {
    ensure_out_dir(ctx);
    std::vector<std::string> outputs;
    if (ctx.cfg.cohort_source == "synthetic") {
        Cohort c = generate_synthetic_cohort(ctx.cfg.synth, ctx.cfg.seed);
        save_cohort(c, out_path(ctx, "cohort.jsonl").string());
        outputs.push_back("cohort.jsonl");
        fit_split_and_scaler(c, ctx.cfg.train_frac, ctx.cfg.seed);
        ctx.cohort = std::move(c);
    } else {
        require_cohort(ctx);
    }
    write_cohort_feature_summary(*ctx.cohort, out_path(ctx, "cohort_features.csv").string());
    write_cohort_overview(*ctx.cohort, out_path(ctx, "cohort_overview.csv").string());
    outputs.push_back("cohort_features.csv");
    outputs.push_back("cohort_overview.csv");
    manifest_record(ctx.cfg.out_dir, outputs);
}

void stage_learn_reward(PipelineContext& ctx) {
    ensure_out_dir(ctx);
    require_cohort(ctx);
    PrefTrainConfig cfg = ctx.cfg.reward;
    cfg.seed = ctx.cfg.seed;
    RewardTrainResult result = train_reward(*ctx.cohort, cfg);
    NormalizationParams norm = fit_normalization(result.model, *ctx.cohort);

    RewardCheckpoint ckpt{result.model, *ctx.cohort->scaler, ctx.cohort->feature_names, norm};
    save_reward_checkpoint(ckpt, out_path(ctx, "reward_cnpr.json").string());
    write_train_log_csv(result.log, out_path(ctx, "reward_train_log.csv").string());
    ctx.reward = std::move(ckpt);
    manifest_record(ctx.cfg.out_dir, {"reward_cnpr.json", "reward_train_log.csv"});
}

void stage_score_baselines(PipelineContext& ctx) {
    ensure_out_dir(ctx);
    require_cohort(ctx);
    std::vector<std::string> outputs;
    for (const std::string& source : kRewardSources) {
        if (source == "cnpr" && !ctx.reward &&
            !fs::exists(out_path(ctx, "reward_cnpr.json"))) {
            continue; // traces for the learned reward need its checkpoint
        }
        StepRewardFn fn = make_reward_fn(ctx, source);
        std::string rel = "reward_trace_" + source + ".csv";
        CsvWriter csv(out_path(ctx, rel).string());
        csv.row({"trajectory_id", "step", "reward"});
        for (const Trajectory& t : ctx.cohort->trajectories)
            for (std::size_t s = 0; s < t.length(); ++s)
                csv.row({t.id, std::to_string(s), fmt_double(fn(t, s))});
        outputs.push_back(rel);
    }
    manifest_record(ctx.cfg.out_dir, outputs);
}

void stage_train_policy(PipelineContext& ctx, const std::string& reward_source) {
    ensure_out_dir(ctx);
    require_cohort(ctx);
    StepRewardFn fn = make_reward_fn(ctx, reward_source);
    std::vector<Transition> transitions = build_transitions(*ctx.cohort, fn, /*train_only=*/true);

    QNetConfig cfg = ctx.cfg.rl;
    cfg.seed = derive_seed(derive_seed(ctx.cfg.seed, "rl"), reward_source);
    PolicyTrainResult result =
        train_policy(transitions, static_cast<int>(ctx.cohort->feature_count()), cfg);

    PolicyCheckpoint ckpt{result.model, ctx.cohort->feature_names, reward_source, cfg.gamma};
    std::string rel = "policy_" + reward_source + ".json";
    std::string log_rel = "policy_log_" + reward_source + ".csv";
    save_policy_checkpoint(ckpt, out_path(ctx, rel).string());
    write_policy_log_csv(result.log, out_path(ctx, log_rel).string());
    ctx.policies.insert_or_assign(reward_source, std::move(ckpt));
    manifest_record(ctx.cfg.out_dir, {rel, log_rel});
}

void stage_compute_outcomes(PipelineContext& ctx) {
    ensure_out_dir(ctx);
    require_cohort(ctx);
    std::vector<OutcomeRecord> records;
    for (const Trajectory& t : ctx.cohort->trajectories) records.push_back(compute_outcomes(t));
    write_outcomes_csv(records, out_path(ctx, "outcomes.csv").string());
    manifest_record(ctx.cfg.out_dir, {"outcomes.csv"});
}

namespace {

struct OutcomeColumns {
    std::vector<double> osfd7, iv_burden, vaso_burden;
    std::vector<int> mortality;
    std::vector<std::optional<double>> tsr, discharge;
};

OutcomeColumns outcome_columns(const Cohort& c, const std::vector<std::size_t>& idx) {
    OutcomeColumns col;
    for (std::size_t i : idx) {
        OutcomeRecord r = compute_outcomes(c.trajectories[i]);
        col.osfd7.push_back(r.osfd7);
        col.iv_burden.push_back(r.iv_burden);
        col.vaso_burden.push_back(r.vaso_burden);
        col.mortality.push_back(r.mortality ? 1 : 0);
        col.tsr.push_back(r.tsr_hours);
        col.discharge.push_back(r.discharge_score
                                    ? std::optional<double>(static_cast<double>(*r.discharge_score))
                                    : std::nullopt);
    }
    return col;
}

struct CovariateBlock {
    std::vector<std::string> names; // excluding intercept and distance
    std::vector<std::vector<double>> rows;
};

CovariateBlock covariate_block(const Cohort& c, const std::vector<std::size_t>& idx) {
    bool have_elix = true;
    for (std::size_t i : idx) have_elix = have_elix && c.trajectories[i].cov.elixhauser.has_value();
    CovariateBlock b;
    b.names = {"age", "sofa_baseline"};
    if (have_elix) b.names.push_back("elixhauser");
    b.names.push_back("lactate");
    b.names.push_back("shock_index");
    b.names.push_back("mech_vent");
    for (std::size_t i : idx) {
        const Covariates& cv = c.trajectories[i].cov;
        std::vector<double> row = {cv.age, static_cast<double>(cv.sofa_baseline)};
        if (have_elix) row.push_back(static_cast<double>(*cv.elixhauser));
        row.push_back(cv.lactate);
        row.push_back(cv.shock_index);
        row.push_back(cv.mech_vent_baseline ? 1.0 : 0.0);
        b.rows.push_back(std::move(row));
    }
    return b;
}

Eigen::MatrixXd build_design(const std::vector<double>& dist_z, const CovariateBlock& cov,
                             const std::vector<std::size_t>& keep) {
    const auto p = static_cast<Eigen::Index>(2 + cov.names.size());
    Eigen::MatrixXd X(static_cast<Eigen::Index>(keep.size()), p);
    for (std::size_t r = 0; r < keep.size(); ++r) {
        std::size_t i = keep[r];
        X(static_cast<Eigen::Index>(r), 0) = 1.0;
        X(static_cast<Eigen::Index>(r), 1) = dist_z[i];
        for (std::size_t k = 0; k < cov.names.size(); ++k)
            X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(2 + k)) = cov.rows[i][k];
    }
    return X;
}

std::vector<std::string> design_names(const CovariateBlock& cov) {
    std::vector<std::string> names = {"intercept", "distance"};
    names.insert(names.end(), cov.names.begin(), cov.names.end());
    return names;
}

void append_regression_rows(CsvWriter& csv, const std::string& policy,
                            const RegressionResult& r) {
    for (std::size_t j = 0; j < r.names.size(); ++j)
        csv.row({policy, r.names[j], fmt_double(r.beta[j]), fmt_double(r.se[j]),
                 fmt_double(r.ci_lo[j]), fmt_double(r.ci_hi[j]), fmt_double(r.p_value[j]),
                 std::to_string(r.n), r.model_type});
}

} // namespace

void stage_evaluate(PipelineContext& ctx) {
    ensure_out_dir(ctx);
    require_cohort(ctx);
    require_reward(ctx);
    for (const std::string& source : kRewardSources) require_policy(ctx, source);
    const Cohort& cohort = *ctx.cohort;
    const std::vector<std::size_t> idx = eval_indices(ctx);
    if (idx.size() < 20)
        throw ValidationError("evaluation split too small: " + std::to_string(idx.size()));

    // Policy functions under comparison.
    std::map<std::string, PolicyFn> policies;
    for (const std::string& source : kRewardSources)
        policies[source] = make_greedy_policy(ctx.policies.at(source).model);
    policies["random"] = make_random_policy(ctx.cfg.seed);

    // Per-trajectory mean joint distances, z-scored over the evaluation set.
    std::map<std::string, std::vector<double>> dist_raw, dist_z;
    for (const auto& [name, fn] : policies) {
        std::vector<double> d;
        d.reserve(idx.size());
        for (std::size_t i : idx) d.push_back(trajectory_distance(fn, cohort.trajectories[i]));
        dist_z[name] = zscore(d);
        dist_raw[name] = std::move(d);
    }
    {
        CsvWriter csv(out_path(ctx, "distances.csv").string());
        csv.row({"policy", "trajectory_id", "mean_joint_distance", "distance_z"});
        for (const auto& [name, d] : dist_raw)
            for (std::size_t r = 0; r < idx.size(); ++r)
                csv.row({name, cohort.trajectories[idx[r]].id, fmt_double(d[r]),
                         fmt_double(dist_z[name][r])});
    }

    // Regressions: outcome ~ distance_z + covariates, one table per outcome.
    OutcomeColumns out_cols = outcome_columns(cohort, idx);
    CovariateBlock cov = covariate_block(cohort, idx);
    auto names = design_names(cov);

    struct OutcomeSpec {
        std::string name;
        bool logistic;
        const std::vector<double>* linear;
        const std::vector<int>* binary;
        const std::vector<std::optional<double>>* optional_linear;
    };
    std::vector<OutcomeSpec> outcome_specs = {
        {"mortality", true, nullptr, &out_cols.mortality, nullptr},
        {"osfd7", false, &out_cols.osfd7, nullptr, nullptr},
        {"tsr_hours", false, nullptr, nullptr, &out_cols.tsr},
        {"discharge_score", false, nullptr, nullptr, &out_cols.discharge},
        {"iv_burden", false, &out_cols.iv_burden, nullptr, nullptr},
        {"vaso_burden", false, &out_cols.vaso_burden, nullptr, nullptr},
    };

    std::vector<std::string> outputs = {"distances.csv"};
    for (const OutcomeSpec& spec : outcome_specs) {
        std::string rel = "regression_" + spec.name + ".csv";
        CsvWriter csv(out_path(ctx, rel).string());
        csv.row({"policy", "term", "beta", "se", "ci_lo", "ci_hi", "p_value", "n", "model"});
        for (const std::string& policy : kPolicyNames) {
            std::vector<std::size_t> keep;
            for (std::size_t r = 0; r < idx.size(); ++r) {
                if (spec.optional_linear && !(*spec.optional_linear)[r].has_value()) continue;
                keep.push_back(r);
            }
            Eigen::MatrixXd X = build_design(dist_z[policy], cov, keep);
            try {
                RegressionResult rr;
                if (spec.logistic) {
                    std::vector<int> y;
                    for (std::size_t r : keep) y.push_back((*spec.binary)[r]);
                    rr = logistic_fit(y, X, names);
                } else {
                    std::vector<double> y;
                    for (std::size_t r : keep)
                        y.push_back(spec.linear ? (*spec.linear)[r]
                                                : *(*spec.optional_linear)[r]);
                    rr = ols_hc3(y, X, names);
                }
                append_regression_rows(csv, policy, rr);
            } catch (const std::exception& e) {
                std::cerr << "warning: regression " << spec.name << " / " << policy
                          << " failed: " << e.what() << "\n";
            }
        }
        outputs.push_back(rel);
    }

    // Correlation matrix: trajectory-level cumulative reward per formulation
    // against each outcome on the evaluation split.
    {
        std::string rel = "correlations.csv";
        CsvWriter csv(out_path(ctx, rel).string());
        csv.row({"reward", "outcome", "spearman", "n"});
        for (const std::string& source : kRewardSources) {
            StepRewardFn fn = make_reward_fn(ctx, source);
            std::vector<double> cumulative;
            for (std::size_t i : idx) {
                const Trajectory& t = cohort.trajectories[i];
                double sum = 0;
                for (std::size_t s = 0; s < t.length(); ++s) sum += fn(t, s);
                cumulative.push_back(sum);
            }
            auto emit = [&](const std::string& outcome, const std::vector<double>& x,
                            const std::vector<double>& y) {
                if (y.size() < 3) return;
                csv.row({source, outcome, fmt_double(spearman(x, y)), std::to_string(y.size())});
            };
            std::vector<double> mort(out_cols.mortality.begin(), out_cols.mortality.end());
            emit("osfd7", cumulative, out_cols.osfd7);
            emit("mortality", cumulative, mort);
            emit("iv_burden", cumulative, out_cols.iv_burden);
            emit("vaso_burden", cumulative, out_cols.vaso_burden);
            std::vector<double> xt, yt;
            for (std::size_t r = 0; r < idx.size(); ++r)
                if (out_cols.tsr[r]) {
                    xt.push_back(cumulative[r]);
                    yt.push_back(*out_cols.tsr[r]);
                }
            emit("tsr_hours", xt, yt);
            std::vector<double> xd, yd;
            for (std::size_t r = 0; r < idx.size(); ++r)
                if (out_cols.discharge[r]) {
                    xd.push_back(cumulative[r]);
                    yd.push_back(*out_cols.discharge[r]);
                }
            emit("discharge_score", xd, yd);
        }
        outputs.push_back(rel);
    }

    // Action heatmaps for the clinician and every policy, both strata.
    {
        std::string rel = "heatmaps.csv";
        CsvWriter csv(out_path(ctx, rel).string());
        csv.row({"policy", "stratum", "iv_bin", "vaso_bin", "proportion"});
        std::map<std::string, PolicyFn> with_clin = policies;
        with_clin["clinician"] = [](const Trajectory& t, std::size_t s) { return t.actions[s]; };
        for (const auto& [name, fn] : with_clin) {
            ActionHeatmap hm =
                action_heatmap(fn, cohort, idx, ctx.cfg.eval.heatmap_sofa_threshold);
            for (int iv = 0; iv < 5; ++iv)
                for (int va = 0; va < 5; ++va) {
                    csv.row({name, "low", std::to_string(iv), std::to_string(va),
                             fmt_double(hm.low[static_cast<std::size_t>(iv)][static_cast<std::size_t>(va)])});
                    csv.row({name, "high", std::to_string(iv), std::to_string(va),
                             fmt_double(hm.high[static_cast<std::size_t>(iv)][static_cast<std::size_t>(va)])});
                }
        }
        outputs.push_back(rel);
    }

    // Permutation importances for predicting per-step bins from states,
    // under the clinician and the learned-reward policy.
    {
        std::string rel = "importances.csv";
        CsvWriter csv(out_path(ctx, rel).string());
        csv.row({"policy", "target", "rank", "feature", "importance"});
        const std::size_t d = cohort.feature_count();
        std::vector<double> X;
        std::vector<int> iv_clin, vaso_clin, iv_cnpr, vaso_cnpr;
        const PolicyFn& cnpr_policy = policies.at("cnpr");
        for (std::size_t i : idx) {
            const Trajectory& t = cohort.trajectories[i];
            for (std::size_t s = 0; s < t.length(); ++s) {
                const auto& sv = t.model_states()[s];
                X.insert(X.end(), sv.begin(), sv.end());
                iv_clin.push_back(t.actions[s].iv_bin);
                vaso_clin.push_back(t.actions[s].vaso_bin);
                Action pa = cnpr_policy(t, s);
                iv_cnpr.push_back(pa.iv_bin);
                vaso_cnpr.push_back(pa.vaso_bin);
            }
        }
        std::size_t n_rows = iv_clin.size();
        // Subsample rows when the step count exceeds the forest budget.
        if (n_rows > ctx.cfg.eval.forest_max_rows) {
            RngStream rng(ctx.cfg.seed, "forest-subsample");
            auto keep = rng.sample_indices(n_rows, ctx.cfg.eval.forest_max_rows);
            std::sort(keep.begin(), keep.end());
            std::vector<double> X2;
            X2.reserve(keep.size() * d);
            std::vector<int> a(keep.size()), b(keep.size()), c2(keep.size()), e(keep.size());
            for (std::size_t k = 0; k < keep.size(); ++k) {
                std::size_t r = keep[k];
                X2.insert(X2.end(), X.begin() + static_cast<long>(r * d),
                          X.begin() + static_cast<long>((r + 1) * d));
                a[k] = iv_clin[r];
                b[k] = vaso_clin[r];
                c2[k] = iv_cnpr[r];
                e[k] = vaso_cnpr[r];
            }
            X = std::move(X2);
            iv_clin = std::move(a);
            vaso_clin = std::move(b);
            iv_cnpr = std::move(c2);
            vaso_cnpr = std::move(e);
            n_rows = keep.size();
        }

        ForestConfig fc = ctx.cfg.eval.forest;
        fc.threads = ctx.cfg.threads;
        struct Target {
            const char* policy;
            const char* target;
            const std::vector<int>* labels;
        };
        for (const Target& tg :
             {Target{"clinician", "iv", &iv_clin}, Target{"clinician", "vaso", &vaso_clin},
              Target{"cnpr", "iv", &iv_cnpr}, Target{"cnpr", "vaso", &vaso_cnpr}}) {
            try {
                auto imp = permutation_importance(
                    X, n_rows, cohort.feature_names, *tg.labels, 5, fc,
                    ctx.cfg.eval.forest_k_repeats, ctx.cfg.eval.forest_holdout_frac,
                    derive_seed(derive_seed(ctx.cfg.seed, "forest"),
                                std::string(tg.policy) + "-" + tg.target));
                for (std::size_t r = 0; r < imp.size(); ++r)
                    csv.row({tg.policy, tg.target, std::to_string(r + 1), imp[r].feature,
                             fmt_double(imp[r].importance)});
            } catch (const ValidationError& e) {
                std::cerr << "warning: importance " << tg.policy << "/" << tg.target
                          << " skipped: " << e.what() << "\n";
            }
        }
        outputs.push_back(rel);
    }

    // Figure-analogue long-format tables.
    {
        // Score distribution with mean confidence per score.
        std::string rel = "fig2_score_distribution.csv";
        CsvWriter csv(out_path(ctx, rel).string());
        csv.row({"tqs", "count", "share", "mean_confidence"});
        std::array<std::size_t, 6> hist{};
        std::array<double, 6> conf{};
        for (const Trajectory& t : cohort.trajectories) {
            hist[static_cast<std::size_t>(t.tqs)]++;
            conf[static_cast<std::size_t>(t.tqs)] += t.confidence;
        }
        for (int s = 0; s <= 5; ++s) {
            auto n = hist[static_cast<std::size_t>(s)];
            csv.row({std::to_string(s), std::to_string(n),
                     fmt_double(static_cast<double>(n) /
                                static_cast<double>(cohort.trajectories.size())),
                     n ? fmt_double(conf[static_cast<std::size_t>(s)] / static_cast<double>(n))
                       : "0"});
        }
        outputs.push_back(rel);
    }
    {
        // Per-trajectory mean normalized reward by score, plus the summary
        // rank statistics.
        std::string rel = "fig3_reward_by_tqs.csv";
        CsvWriter csv(out_path(ctx, rel).string());
        csv.row({"trajectory_id", "tqs", "mean_normalized_reward"});
        StepRewardFn fn = make_reward_fn(ctx, "cnpr");
        std::vector<double> scores, rewards;
        std::vector<double> g1, g5;
        for (std::size_t i : idx) {
            const Trajectory& t = cohort.trajectories[i];
            if (t.tqs < 1) continue;
            double sum = 0;
            for (std::size_t s = 0; s < t.length(); ++s) sum += fn(t, s);
            double mean = sum / static_cast<double>(t.length());
            csv.row({t.id, std::to_string(t.tqs), fmt_double(mean)});
            scores.push_back(t.tqs);
            rewards.push_back(mean);
            if (t.tqs == 1) g1.push_back(mean);
            if (t.tqs == 5) g5.push_back(mean);
        }
        outputs.push_back(rel);

        std::string rel2 = "fig3_summary.csv";
        CsvWriter csv2(out_path(ctx, rel2).string());
        csv2.row({"metric", "value", "ci_lo", "ci_hi"});
        csv2.row({"spearman_reward_tqs", fmt_double(spearman(rewards, scores)), "", ""});
        if (g1.size() >= 2 && g5.size() >= 2) {
            EffectSize es = cohens_d(g5, g1, ctx.cfg.eval.n_boot, ctx.cfg.seed);
            csv2.row({"cohens_d_tqs5_vs_tqs1", fmt_double(es.d), fmt_double(es.ci_lo),
                      fmt_double(es.ci_hi)});
        }
        outputs.push_back(rel2);
    }
    {
        // Adjusted outcome predictions along the standardized distance axis.
        std::string rel = "fig4_regression_curves.csv";
        CsvWriter csv(out_path(ctx, rel).string());
        csv.row({"policy", "outcome", "distance_z", "prediction"});
        std::vector<double> cov_means(cov.names.size(), 0.0);
        for (const auto& row : cov.rows)
            for (std::size_t k = 0; k < cov_means.size(); ++k) cov_means[k] += row[k];
        for (double& m : cov_means) m /= static_cast<double>(cov.rows.size());

        for (const OutcomeSpec& spec : outcome_specs) {
            for (const std::string& policy : kPolicyNames) {
                std::vector<std::size_t> keep;
                for (std::size_t r = 0; r < idx.size(); ++r) {
                    if (spec.optional_linear && !(*spec.optional_linear)[r].has_value()) continue;
                    keep.push_back(r);
                }
                Eigen::MatrixXd X = build_design(dist_z[policy], cov, keep);
                try {
                    RegressionResult rr;
                    if (spec.logistic) {
                        std::vector<int> y;
                        for (std::size_t r : keep) y.push_back((*spec.binary)[r]);
                        rr = logistic_fit(y, X, names);
                    } else {
                        std::vector<double> y;
                        for (std::size_t r : keep)
                            y.push_back(spec.linear ? (*spec.linear)[r]
                                                    : *(*spec.optional_linear)[r]);
                        rr = ols_hc3(y, X, names);
                    }
                    for (double z = -2.0; z <= 2.0 + 1e-9; z += 0.5) {
                        double eta = rr.beta[0] + rr.beta[1] * z;
                        for (std::size_t k = 0; k < cov_means.size(); ++k)
                            eta += rr.beta[2 + k] * cov_means[k];
                        double pred = spec.logistic ? 1.0 / (1.0 + std::exp(-eta)) : eta;
                        csv.row({policy, spec.name, fmt_double(z), fmt_double(pred)});
                    }
                } catch (const std::exception&) {
                    // Failure already reported by the regression pass.
                }
            }
        }
        outputs.push_back(rel);
    }

    manifest_record(ctx.cfg.out_dir, outputs);
}

namespace {

// Markdown table from a CSV produced by this pipeline (simple fields only).
void csv_to_markdown(const fs::path& csv_path, std::ostream& os, std::size_t max_rows = 60) {
    std::ifstream in(csv_path);
    if (!in) return;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line) && row <= max_rows) {
        std::ostringstream md;
        md << "| ";
        std::string cell;
        for (char ch : line) {
            if (ch == ',') {
                md << cell << " | ";
                cell.clear();
            } else {
                cell.push_back(ch);
            }
        }
        md << cell << " |";
        os << md.str() << '\n';
        if (row == 0) {
            std::size_t cols = 1 + static_cast<std::size_t>(
                                       std::count(line.begin(), line.end(), ','));
            os << "|";
            for (std::size_t c = 0; c < cols; ++c) os << " --- |";
            os << '\n';
        }
        ++row;
    }
}

} // namespace

void stage_report(PipelineContext& ctx) {
    ensure_out_dir(ctx);
    std::ofstream md(out_path(ctx, "report.md"));
    md << "# Run report\n\n";
    md << "- seed: " << ctx.cfg.seed << "\n";
    md << "- cohort source: " << ctx.cfg.cohort_source << "\n";
    md << "- pair weighting: margin_base=" << ctx.cfg.reward.margin_base
       << ", margin_per_gap=" << ctx.cfg.reward.margin_per_gap
       << ", reward_l2=" << ctx.cfg.reward.reward_l2 << ", min_gap=" << ctx.cfg.reward.min_gap
       << "\n";
    md << "- sofa_lac coefficients: c0=" << ctx.cfg.baselines.sofa_lac.c0
       << ", c1=" << ctx.cfg.baselines.sofa_lac.c1 << ", c2=" << ctx.cfg.baselines.sofa_lac.c2
       << ", r_outcome=+/-" << ctx.cfg.baselines.sofa_lac.r_outcome_survive << "\n";
    md << "- rl: lr=" << ctx.cfg.rl.lr << ", gamma=" << ctx.cfg.rl.gamma
       << ", batch=" << ctx.cfg.rl.batch_size << ", cql_alpha=" << ctx.cfg.rl.cql_alpha << "\n\n";

    struct Section {
        const char* title;
        const char* file;
    };
    for (const Section& s : {Section{"Cohort overview", "cohort_overview.csv"},
                             Section{"Reward training", "reward_train_log.csv"},
                             Section{"Reward alignment", "fig3_summary.csv"},
                             Section{"Reward/outcome correlations", "correlations.csv"},
                             Section{"Distance regression: mortality", "regression_mortality.csv"},
                             Section{"Distance regression: OSFD-7", "regression_osfd7.csv"},
                             Section{"Distance regression: shock resolution",
                                     "regression_tsr_hours.csv"},
                             Section{"Distance regression: discharge score",
                                     "regression_discharge_score.csv"},
                             Section{"Distance regression: IV burden", "regression_iv_burden.csv"},
                             Section{"Distance regression: vasopressor burden",
                                     "regression_vaso_burden.csv"}}) {
        fs::path p = out_path(ctx, s.file);
        if (!fs::exists(p)) continue;
        md << "## " << s.title << "\n\n";
        csv_to_markdown(p, md);
        md << '\n';
    }
    md.close();
    manifest_record(ctx.cfg.out_dir, {"report.md"});
}

void run_pipeline(const ExperimentConfig& cfg) {
    PipelineContext ctx{cfg, {}, {}, {}};
    ensure_out_dir(ctx);
    // Start from a clean manifest so reruns are comparable file-by-file.
    fs::remove(manifest_path(cfg.out_dir));
    fs::remove(out_path(ctx, "FAILED"));
    {
        // The output directory is where this file lives; leaving it out keeps
        // manifests of identical experiments comparable across run dirs.
        ExperimentConfig resolved = cfg;
        resolved.out_dir.clear();
        std::ofstream rc(out_path(ctx, "resolved_config.json"));
        rc << config_to_json_text(resolved);
    }
    manifest_record(cfg.out_dir, {"resolved_config.json"});

    struct Stage {
        std::string name;
        std::function<void()> run;
    };
    std::vector<Stage> stages = {
        {"generate_cohort", [&] { stage_cohort(ctx); }},
        {"learn_reward", [&] { stage_learn_reward(ctx); }},
        {"score_baselines", [&] { stage_score_baselines(ctx); }},
        {"train_policies",
         [&] {
             for (const std::string& source : kRewardSources) stage_train_policy(ctx, source);
         }},
        {"compute_outcomes", [&] { stage_compute_outcomes(ctx); }},
        {"evaluate", [&] { stage_evaluate(ctx); }},
        {"report", [&] { stage_report(ctx); }},
    };
    if (cfg.cohort_source == "file") stages[0].name = "load_cohort";

    for (const Stage& stage : stages) {
        auto mark = [&](const char* what) {
            std::ofstream failed(out_path(ctx, "FAILED"));
            failed << "stage: " << stage.name << "\nerror: " << what << "\n";
            return "stage " + stage.name + ": " + what;
        };
        try {
            stage.run();
        } catch (const ConfigError& e) {
            throw ConfigError(mark(e.what()));
        } catch (const ValidationError& e) {
            throw ValidationError(mark(e.what()));
        } catch (const NumericError& e) {
            throw NumericError(mark(e.what()));
        } catch (const std::exception& e) {
            mark(e.what());
            throw;
        }
    }
}

} // namespace cnpr
