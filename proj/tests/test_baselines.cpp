#include <doctest.h>

#include <cmath>

#include "cnpr/baselines.hpp"
#include "cnpr/synth.hpp"

using namespace cnpr;

namespace {

// Trajectory with named features so reward formulations can resolve them.
struct Fixture {
    Cohort cohort;
    FeatureMap fm;

    Fixture() {
        cohort.feature_names = default_feature_names(false);
        fm = FeatureMap::from(cohort.feature_names);
    }

    Trajectory flat_trajectory(std::size_t steps, bool dead) const {
        Trajectory t;
        t.id = "x";
        StateVector s(cohort.feature_count(), 0.0);
        s[static_cast<std::size_t>(fm.resp_rate)] = 16;
        s[static_cast<std::size_t>(fm.spo2)] = 97;
        s[static_cast<std::size_t>(fm.sbp)] = 120;
        s[static_cast<std::size_t>(fm.heart_rate)] = 70;
        s[static_cast<std::size_t>(fm.temperature)] = 37.0;
        s[static_cast<std::size_t>(fm.gcs)] = 15;
        for (std::size_t i = 0; i < steps; ++i) {
            t.states.push_back(s);
            t.actions.push_back(Action{0, 0});
            StepFlags fl;
            fl.alive = !(dead && i + 1 == steps);
            t.flags.push_back(fl);
            t.map_mmhg.push_back(80.0);
        }
        t.mortality = dead;
        t.tqs = dead ? 2 : 4;
        t.confidence = 0.8;
        return t;
    }
};

} // namespace

TEST_CASE("mortality_reward: sparse terminal cases") {
    Fixture fx;
    Trajectory surv = fx.flat_trajectory(5, false);
    Trajectory died = fx.flat_trajectory(5, true);
    for (std::size_t t = 0; t + 1 < surv.length(); ++t) {
        CHECK(mortality_reward(surv, t, 15.0) == 0.0);
        CHECK(mortality_reward(died, t, 15.0) == 0.0);
    }
    CHECK(mortality_reward(surv, 4, 15.0) == 15.0);
    CHECK(mortality_reward(died, 4, 15.0) == -15.0);
}

TEST_CASE("sofa_lac_reward: vanishing terms, delta arithmetic, terminal outcome") {
    Fixture fx;
    SofaLacCoeffs cf;

    // All subscores zero, flat SOFA and lactate, non-terminal: every term 0.
    Trajectory t = fx.flat_trajectory(3, false);
    t.sofa_subscores.emplace(3, std::array<int, 6>{});
    CHECK(sofa_lac_reward(t, 0, cf, fx.fm) == 0.0);

    // SOFA rises by 2, lactate flat, only the delta coefficient active.
    SofaLacCoeffs only_delta;
    only_delta.c0 = 0;
    only_delta.c1 = -0.125;
    only_delta.c2 = 0;
    only_delta.r_outcome_survive = 0;
    Trajectory r = fx.flat_trajectory(2, false);
    r.sofa_subscores.emplace(2, std::array<int, 6>{});
    r.states[1][static_cast<std::size_t>(fx.fm.sofa)] = 2.0;
    CHECK(sofa_lac_reward(r, 0, only_delta, fx.fm) == doctest::Approx(-0.25).epsilon(1e-12));

    // Terminal survivor with flat physiology gets exactly the outcome term.
    Trajectory s = fx.flat_trajectory(2, false);
    s.sofa_subscores.emplace(2, std::array<int, 6>{});
    CHECK(sofa_lac_reward(s, 1, cf, fx.fm) == doctest::Approx(15.0).epsilon(1e-12));
    Trajectory d = fx.flat_trajectory(2, true);
    d.sofa_subscores.emplace(2, std::array<int, 6>{});
    CHECK(sofa_lac_reward(d, 1, cf, fx.fm) == doctest::Approx(-15.0).epsilon(1e-12));

    // Subscore count feeds the tanh term; fallback uses 1{SOFA > 0}.
    Trajectory c = fx.flat_trajectory(2, false);
    c.sofa_subscores.emplace(2, std::array<int, 6>{1, 2, 0, 0, 3, 0});
    SofaLacCoeffs only_count;
    only_count.c1 = 0;
    only_count.c2 = 0;
    only_count.r_outcome_survive = 0;
    CHECK(sofa_lac_reward(c, 0, only_count, fx.fm) ==
          doctest::Approx(-0.025 * std::tanh(3.0)).epsilon(1e-12));
    Trajectory noc = fx.flat_trajectory(2, false);
    noc.states[0][static_cast<std::size_t>(fx.fm.sofa)] = 5.0;
    CHECK(sofa_lac_reward(noc, 0, only_count, fx.fm) ==
          doctest::Approx(-0.025 * std::tanh(1.0)).epsilon(1e-12));
}

TEST_CASE("news2_score: normal vitals, maximal derangement, component edges") {
    News2Components normal = news2_score(16, 97, false, 120, 70, 37.0, 15);
    CHECK(normal.total == 0);

    News2Components maximal = news2_score(8, 91, true, 90, 40, 35.0, 14);
    CHECK(maximal.s_rr == 3);
    CHECK(maximal.s_spo2 == 3);
    CHECK(maximal.s_o2 == 2);
    CHECK(maximal.s_bp == 3);
    CHECK(maximal.s_hr == 3);
    CHECK(maximal.s_temp == 3);
    CHECK(maximal.s_cns == 3);
    CHECK(maximal.total == 20);

    CHECK(news2_score(16, 93, false, 120, 70, 37.0, 15).s_spo2 == 2);

    // Every threshold edge, per component.
    auto rr = [](double v) { return news2_score(v, 97, false, 120, 70, 37.0, 15).s_rr; };
    CHECK(rr(8) == 3);
    CHECK(rr(9) == 1);
    CHECK(rr(11) == 1);
    CHECK(rr(12) == 0);
    CHECK(rr(20) == 0);
    CHECK(rr(21) == 2);
    CHECK(rr(24) == 2);
    CHECK(rr(25) == 3);

    auto sp = [](double v) { return news2_score(16, v, false, 120, 70, 37.0, 15).s_spo2; };
    CHECK(sp(91) == 3);
    CHECK(sp(92) == 2);
    CHECK(sp(93) == 2);
    CHECK(sp(94) == 1);
    CHECK(sp(95) == 1);
    CHECK(sp(96) == 0);

    auto bp = [](double v) { return news2_score(16, 97, false, v, 70, 37.0, 15).s_bp; };
    CHECK(bp(90) == 3);
    CHECK(bp(91) == 2);
    CHECK(bp(100) == 2);
    CHECK(bp(101) == 1);
    CHECK(bp(110) == 1);
    CHECK(bp(111) == 0);
    CHECK(bp(219) == 0);
    CHECK(bp(220) == 3);

    auto hr = [](double v) { return news2_score(16, 97, false, 120, v, 37.0, 15).s_hr; };
    CHECK(hr(40) == 3);
    CHECK(hr(41) == 1);
    CHECK(hr(50) == 1);
    CHECK(hr(51) == 0);
    CHECK(hr(90) == 0);
    CHECK(hr(91) == 1);
    CHECK(hr(110) == 1);
    CHECK(hr(111) == 2);
    CHECK(hr(130) == 2);
    CHECK(hr(131) == 3);

    auto tp = [](double v) { return news2_score(16, 97, false, 120, 70, v, 15).s_temp; };
    CHECK(tp(35.0) == 3);
    CHECK(tp(35.1) == 1);
    CHECK(tp(36.0) == 1);
    CHECK(tp(36.1) == 0);
    CHECK(tp(38.0) == 0);
    CHECK(tp(38.1) == 1);
    CHECK(tp(39.0) == 1);
    CHECK(tp(39.1) == 2);

    CHECK(news2_score(16, 97, false, 120, 70, 37.0, 14).s_cns == 3);
    CHECK(news2_score(16, 97, true, 120, 70, 37.0, 15).s_o2 == 2);
}

TEST_CASE("news2_score: monotone in single-variable derangement") {
    auto total_at = [](double rr, double spo2, double sbp, double hr, double temp) {
        return news2_score(rr, spo2, false, sbp, hr, temp, 15).total;
    };
    int base = total_at(16, 97, 120, 70, 37.0);
    CHECK(base == 0);
    // Moving each variable further from the normal band never lowers the score.
    int prev = base;
    for (double rr : {18.0, 21.0, 23.0, 25.0, 30.0}) {
        int cur = total_at(rr, 97, 120, 70, 37.0);
        CHECK(cur >= prev);
        prev = cur;
    }
    prev = base;
    for (double sp : {96.0, 95.0, 93.0, 91.0, 85.0}) {
        int cur = total_at(16, sp, 120, 70, 37.0);
        CHECK(cur >= prev);
        prev = cur;
    }
    prev = base;
    for (double bp : {115.0, 108.0, 95.0, 88.0, 70.0}) {
        int cur = total_at(16, 97, bp, 70, 37.0);
        CHECK(cur >= prev);
        prev = cur;
    }
    prev = base;
    for (double hr : {85.0, 95.0, 115.0, 135.0}) {
        int cur = total_at(16, 97, 120, hr, 37.0);
        CHECK(cur >= prev);
        prev = cur;
    }
    prev = base;
    for (double tc : {37.5, 38.5, 39.5}) {
        int cur = total_at(16, 97, 120, 70, tc);
        CHECK(cur >= prev);
        prev = cur;
    }
}

TEST_CASE("news2_reward: next-state scoring, bounds, terminal override") {
    Fixture fx;
    Trajectory t = fx.flat_trajectory(3, false);
    CHECK(news2_reward(t, 0, fx.fm) == 0.0); // normal next-state vitals

    // Fully deranged next state.
    Trajectory worst = fx.flat_trajectory(3, false);
    auto& nxt = worst.states[1];
    nxt[static_cast<std::size_t>(fx.fm.resp_rate)] = 8;
    nxt[static_cast<std::size_t>(fx.fm.spo2)] = 91;
    nxt[static_cast<std::size_t>(fx.fm.sbp)] = 90;
    nxt[static_cast<std::size_t>(fx.fm.heart_rate)] = 40;
    nxt[static_cast<std::size_t>(fx.fm.temperature)] = 35.0;
    nxt[static_cast<std::size_t>(fx.fm.gcs)] = 14;
    worst.flags[1].mech_vent = true;
    CHECK(news2_reward(worst, 0, fx.fm) == doctest::Approx(-1.0).epsilon(1e-12));

    // Terminal: death forces -1 regardless of vitals; survival gives 0.
    Trajectory died = fx.flat_trajectory(3, true);
    CHECK(news2_reward(died, 2, fx.fm) == -1.0);
    CHECK(news2_reward(t, 2, fx.fm) == 0.0);

    // Non-terminal rewards stay within [-1, 0] across a synthetic cohort.
    SynthConfig cfg;
    cfg.n = 60;
    Cohort c = generate_synthetic_cohort(cfg, 13);
    FeatureMap fm = FeatureMap::from(c.feature_names);
    for (const Trajectory& traj : c.trajectories)
        for (std::size_t s = 0; s + 1 < traj.length(); ++s) {
            double r = news2_reward(traj, s, fm);
            CHECK(r <= 0.0);
            CHECK(r >= -1.0);
        }
}

TEST_CASE("random_policy: uniformity, degenerate case, determinism") {
    RngStream rng(2024, "policy");
    const int n = 100000;
    std::array<int, 25> counts{};
    for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(random_policy(25, rng))]++;
    double expected = n / 25.0;
    double chi2 = 0;
    for (int c : counts) {
        double d = c - expected;
        chi2 += d * d / expected;
    }
    // chi-square critical value at p = 0.01, df = 24.
    CHECK(chi2 < 42.9798);

    RngStream one(5);
    for (int i = 0; i < 100; ++i) CHECK(random_policy(1, one) == 0);

    RngStream a(9, "x"), b(9, "x");
    for (int i = 0; i < 1000; ++i) CHECK(random_policy(25, a) == random_policy(25, b));
}
