#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cnpr/pipeline.hpp"

using namespace cnpr;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Small, fast configuration for pipeline-level tests.
ExperimentConfig tiny_config(const std::string& out_dir, std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.seed = seed;
    cfg.out_dir = out_dir;
    cfg.threads = 1;
    cfg.synth.n = 120;
    cfg.reward.max_epochs = 2;
    cfg.reward.patience = 2;
    cfg.reward.hidden = 16;
    cfg.rl.hidden = 16;
    cfg.rl.epochs = 2;
    cfg.rl.batch_size = 64;
    cfg.eval.forest.n_trees = 20;
    cfg.eval.forest.max_depth = 6;
    cfg.eval.n_boot = 50;
    cfg.eval.forest_max_rows = 2000;
    return cfg;
}

} // namespace

TEST_CASE("config: JSON round-trip is lossless") {
    ExperimentConfig cfg;
    cfg.seed = 99;
    cfg.out_dir = "somewhere";
    cfg.synth.n = 1234;
    cfg.reward.margin_per_gap = 0.75;
    cfg.rl.cql_alpha = 0.25;
    cfg.baselines.sofa_lac.c1 = -0.5;
    cfg.eval.forest.n_trees = 321;
    std::string text = config_to_json_text(cfg);
    ExperimentConfig back = config_from_json_text(text);
    CHECK(config_to_json_text(back) == text);
    CHECK(back.seed == 99);
    CHECK(back.synth.n == 1234);
    CHECK(back.reward.margin_per_gap == 0.75);
    CHECK(back.rl.cql_alpha == 0.25);
    CHECK(back.baselines.sofa_lac.c1 == -0.5);
    CHECK(back.eval.forest.n_trees == 321);
}

TEST_CASE("config: malformed input and bad source rejected") {
    CHECK_THROWS_AS(config_from_json_text("{not json"), ConfigError);
    CHECK_THROWS_AS(config_from_json_text(R"({"cohort":{"source":"bogus"}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json_text(R"({"cohort":{"source":"file"}})"), ConfigError);
}

TEST_CASE("run_pipeline: identical config and seed give hash-identical manifests") {
    fs::path a = fs::temp_directory_path() / "cnpr_det_a";
    fs::path b = fs::temp_directory_path() / "cnpr_det_b";
    fs::remove_all(a);
    fs::remove_all(b);
    run_pipeline(tiny_config(a.string(), 5));
    run_pipeline(tiny_config(b.string(), 5));

    std::string ma = slurp(a / "manifest.json");
    std::string mb = slurp(b / "manifest.json");
    REQUIRE(!ma.empty());
    CHECK(ma == mb);

    // A different seed must change content hashes.
    fs::path c = fs::temp_directory_path() / "cnpr_det_c";
    fs::remove_all(c);
    run_pipeline(tiny_config(c.string(), 6));
    CHECK(slurp(c / "manifest.json") != ma);

    fs::remove_all(a);
    fs::remove_all(b);
    fs::remove_all(c);
}

TEST_CASE("run_pipeline: missing cohort file fails in the load stage with a marker") {
    fs::path out = fs::temp_directory_path() / "cnpr_fail";
    fs::remove_all(out);
    ExperimentConfig cfg = tiny_config(out.string(), 1);
    cfg.cohort_source = "file";
    cfg.cohort_path = (out / "no_such_cohort.jsonl").string();
    try {
        run_pipeline(cfg);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("load_cohort") != std::string::npos);
    }
    std::string marker = slurp(out / "FAILED");
    CHECK(marker.find("stage: load_cohort") != std::string::npos);
    fs::remove_all(out);
}

TEST_CASE("stages: rerun with identical inputs reproduces identical outputs") {
    fs::path out = fs::temp_directory_path() / "cnpr_rerun";
    fs::remove_all(out);
    ExperimentConfig cfg = tiny_config(out.string(), 3);
    PipelineContext ctx{cfg, {}, {}, {}};
    stage_cohort(ctx);
    stage_compute_outcomes(ctx);
    std::string first = sha256_file((out / "outcomes.csv").string());

    PipelineContext ctx2{cfg, {}, {}, {}};
    stage_compute_outcomes(ctx2); // reloads the cohort from disk
    CHECK(sha256_file((out / "outcomes.csv").string()) == first);
    fs::remove_all(out);
}

TEST_CASE("manifest: stale upstream input triggers a warning") {
    fs::path out = fs::temp_directory_path() / "cnpr_stale";
    fs::remove_all(out);
    ExperimentConfig cfg = tiny_config(out.string(), 3);
    PipelineContext ctx{cfg, {}, {}, {}};
    stage_cohort(ctx);

    // Tamper with the recorded artifact.
    {
        std::ofstream f(out / "cohort.jsonl", std::ios::app);
        f << "\n";
    }
    std::stringstream captured;
    auto* old = std::cerr.rdbuf(captured.rdbuf());
    manifest_check_input(out.string(), "cohort.jsonl");
    std::cerr.rdbuf(old);
    CHECK(captured.str().find("stale") != std::string::npos);
    CHECK(captured.str().find("cohort.jsonl") != std::string::npos);
    fs::remove_all(out);
}

#ifdef CNPR_BIN
TEST_CASE("cli: exit codes follow the error taxonomy") {
    fs::path out = fs::temp_directory_path() / "cnpr_cli_codes";
    fs::remove_all(out);
    std::string bin = CNPR_BIN;

    // Config error: synthetic cohort too small to pair.
    int rc = std::system(
        (bin + " generate --out " + (out / "a").string() + " --n 1 2>/dev/null").c_str());
    CHECK(WEXITSTATUS(rc) == 2);

    // Validation error: evaluate without artifacts.
    rc = std::system((bin + " evaluate --out " + (out / "b").string() + " 2>/dev/null").c_str());
    CHECK(WEXITSTATUS(rc) == 3);

    // Success path.
    rc = std::system(
        (bin + " generate --out " + (out / "c").string() + " --n 30 2>/dev/null").c_str());
    CHECK(WEXITSTATUS(rc) == 0);
    CHECK(fs::exists(out / "c" / "cohort.jsonl"));
    fs::remove_all(out);
}
#endif
