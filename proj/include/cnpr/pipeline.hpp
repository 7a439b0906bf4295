#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cnpr/baselines.hpp"
#include "cnpr/checkpoint.hpp"
#include "cnpr/cohort.hpp"
#include "cnpr/forest.hpp"
#include "cnpr/offline_rl.hpp"
#include "cnpr/preference.hpp"
#include "cnpr/synth.hpp"

namespace cnpr {

struct EvalConfig {
    int n_boot = 1000;
    int heatmap_sofa_threshold = 8;
    ForestConfig forest{200, 12, 4, -1, 2, 1};
    int forest_k_repeats = 5;
    double forest_holdout_frac = 0.3;
    std::size_t forest_max_rows = 10000; // step subsample cap for forest fitting
    bool use_test_split = true;          // evaluate policies on held-out trajectories
};

struct BaselineConfig {
    double mortality_terminal = 15.0;
    SofaLacCoeffs sofa_lac{};
    double news2_r_die = -1.0;
    double news2_r_survive = 0.0;
};

// Full experiment description. Serializes losslessly; every run writes the
// resolved config (all defaults materialized) next to its outputs.
struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "run";
    int threads = 2;

    std::string cohort_source = "synthetic"; // "synthetic" | "file"
    std::string cohort_path;                 // for file source
    SynthConfig synth{};
    double train_frac = 0.8;

    PrefTrainConfig reward{};
    QNetConfig rl{};
    BaselineConfig baselines{};
    EvalConfig eval{};
};

ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config(const std::string& path); // applies env overrides
std::string config_to_json_text(const ExperimentConfig& cfg);

// The reward formulations a policy can be trained under.
inline const std::vector<std::string> kRewardSources = {"cnpr", "mortality", "sofa_lac", "news2"};
// Policies compared in evaluation (the four above plus the random baseline).
inline const std::vector<std::string> kPolicyNames = {"cnpr", "mortality", "sofa_lac", "news2",
                                                      "random"};

// In-memory state threaded through the stages; a stage loads any missing
// input from the run directory, so each is also runnable standalone.
struct PipelineContext {
    ExperimentConfig cfg;
    std::optional<Cohort> cohort;
    std::optional<RewardCheckpoint> reward;
    std::map<std::string, PolicyCheckpoint> policies;
};

void stage_cohort(PipelineContext& ctx);
void stage_learn_reward(PipelineContext& ctx);
void stage_score_baselines(PipelineContext& ctx);
void stage_train_policy(PipelineContext& ctx, const std::string& reward_source);
void stage_compute_outcomes(PipelineContext& ctx);
void stage_evaluate(PipelineContext& ctx);
void stage_report(PipelineContext& ctx);

// Runs every stage in order and finalizes the manifest. Throws on stage
// failure after writing a FAILED marker naming the stage.
void run_pipeline(const ExperimentConfig& cfg);

// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

// manifest.json bookkeeping: file hashes recorded after each stage, checked
// before a stage consumes an input (a mismatch logs a staleness warning).
void manifest_record(const std::string& out_dir, const std::vector<std::string>& rel_paths);
void manifest_check_input(const std::string& out_dir, const std::string& rel_path);

} // namespace cnpr
