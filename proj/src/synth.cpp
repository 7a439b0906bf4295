#include "cnpr/synth.hpp"

#include <algorithm>
#include <cmath>

#include "cnpr/rng.hpp"

namespace cnpr {

namespace {

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

int tqs_from_latent(double score_latent, const std::array<double, 4>& cum) {
    if (score_latent <= cum[0]) return 1;
    if (score_latent <= cum[1]) return 2;
    if (score_latent <= cum[2]) return 3;
    if (score_latent <= cum[3]) return 4;
    return 5;
}

DischargeCategory discharge_for(double q, bool dead, RngStream& rng) {
    if (dead) return DischargeCategory::HospiceOrDeath;
    // A small slice of survivors has an unmappable destination.
    double u = rng.uniform();
    if (u < 0.02) return DischargeCategory::Other;
    if (u < 0.03) return DischargeCategory::AgainstMedicalAdvice;
    if (u < 0.035) return DischargeCategory::Psychiatric;
    double t = clamp01(q + 0.08 * rng.normal());
    if (t > 0.78) return DischargeCategory::Home;
    if (t > 0.62) return DischargeCategory::HomeHealth;
    if (t > 0.48) return DischargeCategory::Rehab;
    if (t > 0.38) return DischargeCategory::AssistedLiving;
    if (t > 0.28) return DischargeCategory::SkilledNursing;
    if (t > 0.18) return DischargeCategory::LongTermAcuteCare;
    return DischargeCategory::AcuteHospitalTransfer;
}

struct FeatureIdx {
    std::vector<std::string> names;
    int of(const std::string& n) const {
        auto it = std::find(names.begin(), names.end(), n);
        return it == names.end() ? -1 : static_cast<int>(it - names.begin());
    }
};

// Generic lab model: value = mu + amp * sev + sd * noise.
struct LabSpec {
    const char* name;
    double mu, amp, sd;
};

constexpr LabSpec kLabSpecs[] = {
    {"albumin", 3.6, -0.9, 0.25},     {"ph", 7.40, -0.16, 0.03},
    {"calcium", 8.8, -0.5, 0.3},      {"glucose", 125.0, 45.0, 20.0},
    {"hemoglobin", 11.5, -2.0, 0.8},  {"magnesium", 2.0, 0.2, 0.15},
    {"wbc", 9.0, 9.0, 2.0},           {"creatinine", 0.9, 2.2, 0.25},
    {"bicarbonate", 24.0, -7.0, 1.5}, {"sodium", 139.0, 2.0, 2.5},
    {"chloride", 103.0, 2.0, 2.5},    {"platelets", 230.0, -120.0, 30.0},
    {"potassium", 4.0, 0.5, 0.25},    {"ptt", 32.0, 18.0, 4.0},
    {"pt", 13.0, 6.0, 1.2},           {"ast", 35.0, 90.0, 15.0},
    {"alt", 30.0, 70.0, 12.0},        {"bun", 18.0, 30.0, 5.0},
    {"inr", 1.1, 0.9, 0.12},          {"ionised_calcium", 1.12, -0.10, 0.04},
    {"total_bilirubin", 0.8, 2.5, 0.3}, {"base_excess", 0.0, -7.0, 1.5},
    {"phosphate", 3.4, 1.3, 0.4},
};

} // namespace

Cohort generate_synthetic_cohort(const SynthConfig& config, std::uint64_t seed,
                                 SynthGroundTruth* truth) {
    if (config.n <= 1)
        throw ConfigError("synthetic cohort needs n > 1 (preference pairs are impossible otherwise)");
    if (config.min_steps < 1 || config.max_steps > 18 || config.min_steps > config.max_steps)
        throw ConfigError("synthetic step bounds must satisfy 1 <= min_steps <= max_steps <= 18");

    Cohort cohort;
    cohort.feature_names = default_feature_names(config.reduced_features);
    FeatureIdx fid{cohort.feature_names};
    const int D = static_cast<int>(cohort.feature_names.size());
    const double noise = config.state_noise;

    if (truth) truth->latent_quality.clear();

    for (int i = 0; i < config.n; ++i) {
        // Per-trajectory substream: generation order has no effect.
        RngStream rng(derive_seed(derive_seed(seed, "cohort"), static_cast<std::uint64_t>(i)));

        const double q = rng.uniform(); // latent quality
        if (truth) truth->latent_quality.push_back(q);

        Trajectory t;
        t.id = "t" + std::to_string(100000 + i);

        const bool unscorable = rng.bernoulli(config.unscorable_frac);
        const double score_latent = q + config.tqs_noise * rng.normal();
        t.tqs = unscorable ? 0 : tqs_from_latent(score_latent, config.tqs_cumulative);
        t.confidence = unscorable ? 0.0 : std::clamp(0.82 + 0.12 * rng.normal(), 0.2, 1.0);

        const bool dead = (q + config.death_noise * rng.normal()) < config.death_threshold;
        t.mortality = dead;

        const int span = config.max_steps - config.min_steps + 1;
        int T = config.min_steps + rng.uniform_int(span);
        if (dead) {
            // Death truncates the stay somewhere past its first half.
            T = std::max(2, static_cast<int>(std::lround(T * (0.45 + 0.5 * rng.uniform()))));
        }

        // Severity course: baseline only weakly tied to q*, drift strongly.
        double sev = clamp01(0.38 + 0.16 * rng.normal() +
                             config.baseline_sev_quality_coupling * (1.0 - q));
        const double drift = config.sev_drift_gain * (0.55 - q);

        // Per-trajectory statics.
        const double age = std::clamp(62.0 + 14.0 * rng.normal(), 18.0, 95.0);
        const double gender = rng.bernoulli(0.43) ? 1.0 : 0.0;
        const double weight = std::clamp(80.0 + 16.0 * rng.normal(), 38.0, 180.0);
        const double readmit = rng.bernoulli(0.1) ? 1.0 : 0.0;
        const int elix = std::clamp(
            static_cast<int>(std::lround(3.0 + 0.10 * (age - 60.0) + 5.0 * (1.0 - q) * rng.uniform() +
                                         2.0 * rng.normal())),
            0, 25);

        t.sofa_subscores.emplace();
        bool vent_latched = false;

        for (int step = 0; step < T; ++step) {
            const double eps = noise;

            // Vitals from the current severity.
            const double hr = 72.0 + 48.0 * sev + 6.0 * eps * rng.normal();
            const double sbp = std::max(55.0, 128.0 - 52.0 * sev + 8.0 * eps * rng.normal());
            const double mapv = std::max(40.0, 88.0 - 30.0 * sev + 5.0 * eps * rng.normal());
            const double dbp = std::max(30.0, mapv - (10.0 + 5.0 * sev) + 2.0 * eps * rng.normal());
            const double rr = 14.0 + 13.0 * sev + 1.5 * eps * rng.normal();
            const double temp = 36.8 + 1.7 * sev + 0.25 * eps * rng.normal();
            const double spo2 = std::clamp(97.5 - 7.5 * sev + 1.2 * eps * rng.normal(), 70.0, 100.0);
            const double pao2 = std::max(40.0, 95.0 - 35.0 * sev + 8.0 * eps * rng.normal());
            const double paco2 = 40.0 + 6.0 * (sev - 0.4) + 3.0 * eps * rng.normal();
            const double fio2 = std::clamp(0.21 + 0.55 * sev + 0.05 * eps * rng.normal(), 0.21, 1.0);
            const double pf = pao2 / fio2;
            const double gcs = std::clamp(std::round(15.0 - 8.0 * sev + 1.0 * eps * rng.normal()), 3.0, 15.0);
            const double lactate = std::max(0.4, 0.9 + 7.5 * sev * sev + 0.5 * eps * rng.normal());
            const double urine = std::max(0.0, 180.0 - 150.0 * sev + 40.0 * eps * rng.normal());

            std::array<int, 6> sub{};
            int sofa_total = 0;
            for (int k = 0; k < 6; ++k) {
                double raw = 4.6 * sev - 0.5 + 0.9 * rng.normal();
                sub[static_cast<std::size_t>(k)] =
                    std::clamp(static_cast<int>(std::lround(raw)), 0, 4);
                sofa_total += sub[static_cast<std::size_t>(k)];
            }
            t.sofa_subscores->push_back(sub);

            int sirs = 0;
            if (hr > 90) ++sirs;
            if (rr > 20) ++sirs;
            if (temp > 38.0 || temp < 36.0) ++sirs;
            const double wbc_val = 9.0 + 9.0 * sev + 2.0 * eps * rng.normal();
            if (wbc_val > 12.0 || wbc_val < 4.0) ++sirs;

            // Clinician dosing policy: intensity rises with severity.
            double iv_dose = 0.0;
            if (!rng.bernoulli(std::clamp(0.55 - 0.85 * sev, 0.02, 0.95))) {
                iv_dose = (70.0 + 1500.0 * sev * sev) * std::exp(0.7 * rng.normal());
            }
            double vaso_dose = 0.0;
            if (rng.bernoulli(std::clamp(1.7 * (sev - 0.33), 0.0, 0.97))) {
                vaso_dose = (5.0 + 70.0 * std::max(0.0, sev - 0.25)) * std::exp(0.5 * rng.normal());
            }
            const Action act = discretize_dose(iv_dose, vaso_dose);
            t.actions.push_back(act);

            if (sev > 0.62) vent_latched = true;
            if (sev < 0.50) vent_latched = false;
            StepFlags fl;
            fl.vasopressor_on = act.vaso_bin > 0;
            fl.mech_vent = vent_latched;
            fl.rrt = sub[5] >= 3 || sev > 0.85;
            fl.alive = !(dead && step == T - 1);
            t.flags.push_back(fl);
            t.map_mmhg.push_back(mapv);

            StateVector s(static_cast<std::size_t>(D), 0.0);
            auto set = [&](const std::string& n, double v) {
                int ix = fid.of(n);
                if (ix >= 0) s[static_cast<std::size_t>(ix)] = v;
            };
            set("age", age);
            set("gender", gender);
            set("weight", weight);
            set("icu_readmission", readmit);
            set("gcs", gcs);
            set("elixhauser", static_cast<double>(elix));
            set("sofa", static_cast<double>(sofa_total));
            set("sirs", static_cast<double>(sirs));
            set("heart_rate", hr);
            set("sbp", sbp);
            set("mbp", mapv);
            set("dbp", dbp);
            set("resp_rate", rr);
            set("temperature", temp);
            set("paco2", paco2);
            set("pao2", pao2);
            set("pf_ratio", pf);
            set("spo2", spo2);
            set("shock_index", hr / sbp);
            set("wbc", wbc_val);
            set("lactate", lactate);
            set("mech_vent", fl.mech_vent ? 1.0 : 0.0);
            set("fio2", fio2);
            set("urine_output_4h", urine);
            set("total_output", urine * (1.15 + 0.1 * rng.normal()));
            set("hours_since_sepsis", 4.0 * step);
            for (const LabSpec& spec : kLabSpecs) {
                if (std::string_view(spec.name) == "wbc") continue; // set above, feeds SIRS
                set(spec.name, spec.mu + spec.amp * sev + spec.sd * eps * rng.normal());
            }
            t.states.push_back(std::move(s));

            if (step == 0) {
                t.cov.age = age;
                t.cov.sofa_baseline = sofa_total;
                if (!config.reduced_features) t.cov.elixhauser = elix;
                t.cov.lactate = lactate;
                t.cov.shock_index = hr / sbp;
                t.cov.mech_vent_baseline = fl.mech_vent;
            }

            sev = clamp01(sev + drift + config.sev_step_noise * rng.normal());
        }

        t.discharge = discharge_for(q, dead, rng);
        validate_trajectory(t, static_cast<std::size_t>(D));
        cohort.trajectories.push_back(std::move(t));
    }
    return cohort;
}

} // namespace cnpr
