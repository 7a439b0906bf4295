#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cnpr/cohort.hpp"
#include "cnpr/rng.hpp"
#include "cnpr/synth.hpp"

using namespace cnpr;

namespace {

// Mid-rank Spearman, local to the tests so generator checks do not depend on
// the evaluation module.
double spearman_ref(std::vector<double> x, std::vector<double> y) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        std::size_t i = 0;
        while (i < idx.size()) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            double mid = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = mid;
            i = j + 1;
        }
        return r;
    };
    auto rx = ranks(x), ry = ranks(y);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(rx.size());
    my /= static_cast<double>(ry.size());
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

Trajectory tiny_trajectory(const std::string& id, int tqs, double conf, bool dead) {
    Trajectory t;
    t.id = id;
    t.states = {{1.0, 2.0}, {3.0, 4.0}};
    t.actions = {Action{0, 0}, Action{1, 2}};
    t.flags = {StepFlags{false, false, false, true}, StepFlags{false, false, false, !dead}};
    t.map_mmhg = {80.0, 82.0};
    t.tqs = tqs;
    t.confidence = conf;
    t.mortality = dead;
    t.cov.age = 60;
    t.cov.sofa_baseline = 4;
    t.cov.lactate = 1.5;
    t.cov.shock_index = 0.7;
    return t;
}

std::string temp_path(const std::string& stem) {
    return (std::filesystem::temp_directory_path() / stem).string();
}

} // namespace

TEST_CASE("discretize_dose: zero, threshold membership, above-top") {
    CHECK(discretize_dose(0.0, 0.0) == Action{0, 0});
    CHECK(discretize_dose(0.0, 0.0).joint() == 0);

    // Thresholds are upper-inclusive.
    Action a = discretize_dose(213.33, 40.06);
    CHECK(a.iv_bin == 2);
    CHECK(a.vaso_bin == 3);
    CHECK(a.joint() == 13);

    Action b = discretize_dose(521.0, 40.07);
    CHECK(b.iv_bin == 4);
    CHECK(b.vaso_bin == 4);
    CHECK(b.joint() == 24);
}

TEST_CASE("discretize_dose: full boundary grid at eps above/below") {
    const double eps = 1e-9;
    // Probe values and the bin each must land in, per axis.
    struct Probe {
        double dose;
        int bin;
    };
    auto probes_for = [eps](const std::array<double, 3>& th) {
        return std::vector<Probe>{
            {0.0, 0},          {eps, 1},
            {th[0] - eps, 1},  {th[0], 1},  {th[0] + eps, 2},
            {th[1] - eps, 2},  {th[1], 2},  {th[1] + eps, 3},
            {th[2] - eps, 3},  {th[2], 3},  {th[2] + eps, 4},
            {th[2] * 10, 4},
        };
    };
    auto iv_probes = probes_for(kIvThresholdsMl);
    auto vaso_probes = probes_for(kVasoThresholdsMcgKg);
    for (const Probe& pi : iv_probes)
        for (const Probe& pv : vaso_probes) {
            Action a = discretize_dose(pi.dose, pv.dose);
            CHECK(a.iv_bin == pi.bin);
            CHECK(a.vaso_bin == pv.bin);
            CHECK(a.joint() == 5 * pi.bin + pv.bin);
        }
}

TEST_CASE("discretize_dose: monotone in dose, rejects bad input") {
    RngStream rng(99);
    for (int i = 0; i < 2000; ++i) {
        double d1 = rng.uniform(0, 800), d2 = rng.uniform(0, 800);
        if (d1 > d2) std::swap(d1, d2);
        CHECK(discretize_dose(d1, 0).iv_bin <= discretize_dose(d2, 0).iv_bin);
        double v1 = rng.uniform(0, 80), v2 = rng.uniform(0, 80);
        if (v1 > v2) std::swap(v1, v2);
        CHECK(discretize_dose(0, v1).vaso_bin <= discretize_dose(0, v2).vaso_bin);
    }
    CHECK_THROWS_AS(discretize_dose(-1.0, 0.0), ValidationError);
    CHECK_THROWS_AS(discretize_dose(0.0, std::nan("")), ValidationError);
}

TEST_CASE("synthetic cohort: determinism") {
    SynthConfig cfg;
    cfg.n = 100;
    Cohort a = generate_synthetic_cohort(cfg, 7);
    Cohort b = generate_synthetic_cohort(cfg, 7);
    REQUIRE(a.trajectories.size() == b.trajectories.size());
    for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
        const auto& x = a.trajectories[i];
        const auto& y = b.trajectories[i];
        CHECK(x.id == y.id);
        CHECK(x.tqs == y.tqs);
        CHECK(x.confidence == y.confidence);
        CHECK(x.states == y.states);
        CHECK(x.actions == y.actions);
        CHECK(x.map_mmhg == y.map_mmhg);
    }
    Cohort c = generate_synthetic_cohort(cfg, 8);
    CHECK(c.trajectories[0].states != a.trajectories[0].states);
}

TEST_CASE("synthetic cohort: latent-quality channel calibration") {
    SynthConfig cfg;
    cfg.n = 2000;
    SynthGroundTruth truth;
    Cohort c = generate_synthetic_cohort(cfg, 42, &truth);

    std::vector<double> q, tqs;
    std::size_t deaths = 0, low_scores = 0, scored = 0;
    for (std::size_t i = 0; i < c.trajectories.size(); ++i) {
        const auto& t = c.trajectories[i];
        deaths += t.mortality ? 1 : 0;
        if (t.tqs > 0) {
            ++scored;
            q.push_back(truth.latent_quality[i]);
            tqs.push_back(t.tqs);
            low_scores += t.tqs <= 3 ? 1 : 0;
        }
    }
    double rho = spearman_ref(q, tqs);
    CHECK(rho >= 0.9);

    double mortality = static_cast<double>(deaths) / static_cast<double>(c.trajectories.size());
    CHECK(mortality >= 0.10);
    CHECK(mortality <= 0.20);

    // Right-skewed marginal: scores 4-5 dominate.
    CHECK(static_cast<double>(low_scores) / static_cast<double>(scored) < 0.30);
    // Unscorables carry zero confidence.
    for (const auto& t : c.trajectories)
        if (t.tqs == 0) CHECK(t.confidence == 0.0);
}

TEST_CASE("synthetic cohort: rejects degenerate config") {
    SynthConfig cfg;
    cfg.n = 1;
    CHECK_THROWS_AS(generate_synthetic_cohort(cfg, 1), ConfigError);
}

TEST_CASE("save/load round-trip is structurally equal") {
    SynthConfig cfg;
    cfg.n = 20;
    Cohort a = generate_synthetic_cohort(cfg, 3);
    std::string path = temp_path("cnpr_roundtrip.jsonl");
    save_cohort(a, path);
    Cohort b = load_cohort(path);
    REQUIRE(b.trajectories.size() == a.trajectories.size());
    CHECK(b.feature_names == a.feature_names);
    for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
        const auto& x = a.trajectories[i];
        const auto& y = b.trajectories[i];
        CHECK(x.id == y.id);
        CHECK(x.tqs == y.tqs);
        CHECK(x.confidence == y.confidence);
        CHECK(x.mortality == y.mortality);
        CHECK(x.states == y.states);
        CHECK(x.actions == y.actions);
        CHECK(x.discharge == y.discharge);
        CHECK(x.sofa_subscores == y.sofa_subscores);
        CHECK(x.cov.elixhauser == y.cov.elixhauser);
    }
    std::filesystem::remove(path);
}

TEST_CASE("load_cohort: three well-formed records") {
    Cohort c;
    c.feature_names = {"f0", "f1"};
    c.trajectories = {tiny_trajectory("a", 5, 0.9, false), tiny_trajectory("b", 3, 0.8, false),
                      tiny_trajectory("c", 1, 0.7, true)};
    std::string path = temp_path("cnpr_three.jsonl");
    save_cohort(c, path);
    Cohort l = load_cohort(path);
    CHECK(l.trajectories.size() == 3);
    std::filesystem::remove(path);
}

TEST_CASE("load_cohort: validation errors carry field and line") {
    Cohort c;
    c.feature_names = {"f0", "f1"};
    c.trajectories = {tiny_trajectory("a", 5, 0.9, false), tiny_trajectory("b", 4, 0.8, false)};
    std::string path = temp_path("cnpr_badconf.jsonl");
    save_cohort(c, path);

    // Corrupt the confidence of the second record (file line 3, after meta).
    std::ifstream in(path);
    std::string all, line;
    int ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        if (ln == 3) {
            auto pos = line.find("\"confidence\":0.8");
            REQUIRE(pos != std::string::npos);
            line.replace(pos, 16, "\"confidence\":1.3");
        }
        all += line + "\n";
    }
    in.close();
    std::ofstream(path) << all;

    try {
        load_cohort(path);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        CHECK(msg.find("confidence") != std::string::npos);
        CHECK(msg.find("line 3") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("load_cohort: tqs outside range rejected") {
    std::string path = temp_path("cnpr_badtqs.jsonl");
    Cohort c;
    c.feature_names = {"f0", "f1"};
    c.trajectories = {tiny_trajectory("a", 5, 0.9, false)};
    save_cohort(c, path);
    std::ifstream in(path);
    std::string all, line;
    while (std::getline(in, line)) {
        auto pos = line.find("\"tqs\":5");
        if (pos != std::string::npos) line.replace(pos, 7, "\"tqs\":6");
        all += line + "\n";
    }
    in.close();
    std::ofstream(path) << all;
    CHECK_THROWS_AS(load_cohort(path), ValidationError);
    std::filesystem::remove(path);
}

TEST_CASE("fit_split_and_scaler: counts, determinism, degenerate feature") {
    SynthConfig cfg;
    cfg.n = 10;
    Cohort c = generate_synthetic_cohort(cfg, 5);
    fit_split_and_scaler(c, 0.8, 11);
    std::size_t n_train = 0;
    for (Split s : c.split)
        if (s == Split::Train) ++n_train;
    CHECK(n_train == 8);

    Cohort c2 = generate_synthetic_cohort(cfg, 5);
    fit_split_and_scaler(c2, 0.8, 11);
    CHECK(c.split == c2.split);
    CHECK(c.scaler->mean == c2.scaler->mean);

    // Constant feature: transformed column all zeros, no division blowup.
    Cohort k;
    k.feature_names = {"const", "x"};
    for (int i = 0; i < 10; ++i) {
        Trajectory t = tiny_trajectory("t" + std::to_string(i), 4, 0.5, false);
        for (auto& s : t.states) s = {7.0, static_cast<double>(i)};
        k.trajectories.push_back(t);
    }
    fit_split_and_scaler(k, 0.8, 1);
    CHECK(k.scaler->degenerate_features == std::vector<std::string>{"const"});
    for (const auto& t : k.trajectories)
        for (const auto& s : t.states_std) CHECK(s[0] == 0.0);
}

TEST_CASE("scaler: train states standardize to mean 0 / var 1") {
    SynthConfig cfg;
    cfg.n = 200;
    Cohort c = generate_synthetic_cohort(cfg, 9);
    fit_split_and_scaler(c, 0.8, 9);
    const std::size_t d = c.feature_count();
    std::vector<double> sum(d, 0), sum2(d, 0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < c.trajectories.size(); ++i) {
        if (!c.is_train(i)) continue;
        for (const auto& s : c.trajectories[i].states_std) {
            ++n;
            for (std::size_t f = 0; f < d; ++f) {
                sum[f] += s[f];
                sum2[f] += s[f] * s[f];
            }
        }
    }
    for (std::size_t f = 0; f < d; ++f) {
        double mean = sum[f] / static_cast<double>(n);
        double var = sum2[f] / static_cast<double>(n) - mean * mean;
        CHECK(std::abs(mean) < 1e-6);
        if (std::find(c.scaler->degenerate_features.begin(), c.scaler->degenerate_features.end(),
                      c.feature_names[f]) == c.scaler->degenerate_features.end())
            CHECK(std::abs(var - 1.0) < 1e-6);
    }
}

TEST_CASE("reduced feature set drops the external-validation variables") {
    auto full = default_feature_names(false);
    auto reduced = default_feature_names(true);
    CHECK(full.size() == 48);
    CHECK(reduced.size() == 44);
    for (const char* gone : {"pt", "inr", "paco2", "elixhauser"})
        CHECK(std::find(reduced.begin(), reduced.end(), gone) == reduced.end());
}

TEST_CASE("cohort summary CSVs are written") {
    SynthConfig cfg;
    cfg.n = 30;
    Cohort c = generate_synthetic_cohort(cfg, 2);
    fit_split_and_scaler(c, 0.8, 2);
    std::string p1 = temp_path("cnpr_feat.csv"), p2 = temp_path("cnpr_over.csv");
    write_cohort_feature_summary(c, p1);
    write_cohort_overview(c, p2);
    std::ifstream f1(p1), f2(p2);
    std::string header;
    std::getline(f1, header);
    CHECK(header == "feature,mean,std,min,max");
    std::getline(f2, header);
    CHECK(header == "key,value");
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}
