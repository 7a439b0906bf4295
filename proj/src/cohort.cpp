#include "cnpr/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cnpr/rng.hpp"
#include "cnpr/util.hpp"

namespace cnpr {

using nlohmann::json;

Action discretize_dose(double iv_ml_per_4h, double vaso_mcg_per_kg_per_4h) {
    auto bin_of = [](double dose, const std::array<double, 3>& thresholds, const char* what) {
        if (!std::isfinite(dose) || dose < 0)
            throw ValidationError(std::string(what) + " dose must be finite and non-negative");
        if (dose == 0.0) return 0;
        if (dose <= thresholds[0]) return 1;
        if (dose <= thresholds[1]) return 2;
        if (dose <= thresholds[2]) return 3;
        return 4;
    };
    return Action{bin_of(iv_ml_per_4h, kIvThresholdsMl, "iv"),
                  bin_of(vaso_mcg_per_kg_per_4h, kVasoThresholdsMcgKg, "vasopressor")};
}

namespace {

const std::map<std::string, DischargeCategory> kDischargeNames = {
    {"home", DischargeCategory::Home},
    {"home-health", DischargeCategory::HomeHealth},
    {"rehab", DischargeCategory::Rehab},
    {"assisted-living", DischargeCategory::AssistedLiving},
    {"skilled-nursing", DischargeCategory::SkilledNursing},
    {"long-term-acute-care", DischargeCategory::LongTermAcuteCare},
    {"acute-hospital-transfer", DischargeCategory::AcuteHospitalTransfer},
    {"hospice-or-death", DischargeCategory::HospiceOrDeath},
    {"other", DischargeCategory::Other},
    {"against-medical-advice", DischargeCategory::AgainstMedicalAdvice},
    {"psychiatric", DischargeCategory::Psychiatric},
};

} // namespace

std::string discharge_category_name(DischargeCategory c) {
    for (const auto& [name, cat] : kDischargeNames)
        if (cat == c) return name;
    return "missing";
}

DischargeCategory discharge_category_from_name(const std::string& name) {
    if (name.empty() || name == "missing") return DischargeCategory::Missing;
    auto it = kDischargeNames.find(name);
    if (it == kDischargeNames.end())
        throw ValidationError("unknown discharge category: " + name);
    return it->second;
}

std::vector<std::string> default_feature_names(bool reduced) {
    std::vector<std::string> names = {
        // demographics / scores
        "age", "gender", "weight", "icu_readmission", "gcs", "elixhauser", "sofa", "sirs",
        // vitals
        "heart_rate", "sbp", "mbp", "dbp", "resp_rate", "temperature", "paco2", "pao2",
        "pf_ratio", "spo2", "shock_index",
        // labs
        "albumin", "ph", "calcium", "glucose", "hemoglobin", "magnesium", "wbc", "creatinine",
        "bicarbonate", "sodium", "lactate", "chloride", "platelets", "potassium", "ptt", "pt",
        "ast", "alt", "bun", "inr", "ionised_calcium", "total_bilirubin", "base_excess",
        "phosphate",
        // treatments
        "mech_vent", "fio2",
        // others
        "urine_output_4h", "total_output", "hours_since_sepsis",
    };
    if (reduced) {
        std::erase_if(names, [](const std::string& n) {
            return n == "pt" || n == "inr" || n == "paco2" || n == "elixhauser";
        });
    }
    return names;
}

int Cohort::feature_index(const std::string& name) const {
    auto it = std::find(feature_names.begin(), feature_names.end(), name);
    if (it == feature_names.end())
        throw ValidationError("feature not present in cohort: " + name);
    return static_cast<int>(it - feature_names.begin());
}

FeatureMap FeatureMap::from(const std::vector<std::string>& names) {
    auto idx = [&](const std::string& n) -> int {
        auto it = std::find(names.begin(), names.end(), n);
        if (it == names.end())
            throw ValidationError("required feature missing from cohort: " + n);
        return static_cast<int>(it - names.begin());
    };
    FeatureMap fm;
    fm.sofa = idx("sofa");
    fm.lactate = idx("lactate");
    fm.resp_rate = idx("resp_rate");
    fm.spo2 = idx("spo2");
    fm.sbp = idx("sbp");
    fm.heart_rate = idx("heart_rate");
    fm.temperature = idx("temperature");
    fm.gcs = idx("gcs");
    fm.mech_vent = idx("mech_vent");
    fm.mbp = idx("mbp");
    return fm;
}

StateVector Scaler::transform(const StateVector& s) const {
    StateVector out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = (s[i] - mean[i]) / stddev[i];
    return out;
}

Scaler fit_scaler(const std::vector<const Trajectory*>& train, std::size_t dim,
                  const std::vector<std::string>& feature_names) {
    Scaler sc;
    sc.mean.assign(dim, 0.0);
    sc.stddev.assign(dim, 0.0);
    std::size_t n = 0;
    for (const Trajectory* t : train)
        for (const StateVector& s : t->states) {
            for (std::size_t f = 0; f < dim; ++f) sc.mean[f] += s[f];
            ++n;
        }
    if (n == 0) throw ValidationError("cannot fit scaler: no train states");
    for (std::size_t f = 0; f < dim; ++f) sc.mean[f] /= static_cast<double>(n);
    for (const Trajectory* t : train)
        for (const StateVector& s : t->states)
            for (std::size_t f = 0; f < dim; ++f) {
                double d = s[f] - sc.mean[f];
                sc.stddev[f] += d * d;
            }
    for (std::size_t f = 0; f < dim; ++f) {
        sc.stddev[f] = std::sqrt(sc.stddev[f] / static_cast<double>(n));
        if (sc.stddev[f] < 1e-12) {
            sc.stddev[f] = 1.0;
            sc.degenerate_features.push_back(feature_names[f]);
        }
    }
    return sc;
}

void fit_split_and_scaler(Cohort& cohort, double train_frac, std::uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0))
        throw ConfigError("train_frac must be in (0, 1)");
    const std::size_t n = cohort.trajectories.size();
    if (n < 2) throw ConfigError("cohort must contain at least 2 trajectories to split");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    RngStream rng(seed, "split");
    rng.shuffle(order);

    auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

    cohort.split.assign(n, Split::Test);
    for (std::size_t i = 0; i < n_train; ++i) cohort.split[order[i]] = Split::Train;

    std::vector<const Trajectory*> train;
    train.reserve(n_train);
    for (std::size_t i = 0; i < n; ++i)
        if (cohort.split[i] == Split::Train) train.push_back(&cohort.trajectories[i]);

    cohort.scaler = fit_scaler(train, cohort.feature_count(), cohort.feature_names);
    for (const std::string& f : cohort.scaler->degenerate_features)
        std::cerr << "warning: feature '" << f
                  << "' has zero variance on the train split; std forced to 1\n";

    for (Trajectory& t : cohort.trajectories) {
        t.states_std.clear();
        t.states_std.reserve(t.states.size());
        for (const StateVector& s : t.states) t.states_std.push_back(cohort.scaler->transform(s));
    }
}

void validate_trajectory(const Trajectory& t, std::size_t feature_count, long line_no) {
    auto fail = [&](const std::string& field, const std::string& msg) {
        std::ostringstream os;
        if (line_no >= 0) os << "line " << line_no << ": ";
        os << "field '" << field << "': " << msg;
        throw ValidationError(os.str());
    };

    const std::size_t T = t.states.size();
    if (T == 0) fail("states", "trajectory must have at least one step");
    for (std::size_t i = 0; i < T; ++i) {
        if (t.states[i].size() != feature_count)
            fail("states", "row " + std::to_string(i) + " has " +
                               std::to_string(t.states[i].size()) + " values, expected " +
                               std::to_string(feature_count));
        for (double v : t.states[i])
            if (!std::isfinite(v)) fail("states", "non-finite value in row " + std::to_string(i));
    }
    if (t.actions.size() != T) fail("actions", "length differs from states");
    for (const Action& a : t.actions) {
        if (a.iv_bin < 0 || a.iv_bin > 4) fail("iv_bins", "bin outside 0..4");
        if (a.vaso_bin < 0 || a.vaso_bin > 4) fail("vaso_bins", "bin outside 0..4");
    }
    if (t.flags.size() != T) fail("flags", "length differs from states");
    if (t.map_mmhg.size() != T) fail("map_mmhg", "length differs from states");
    for (double v : t.map_mmhg)
        if (!std::isfinite(v)) fail("map_mmhg", "non-finite value");
    if (t.tqs < 0 || t.tqs > 5) fail("tqs", "must be in 0..5, got " + std::to_string(t.tqs));
    if (!(t.confidence >= 0.0 && t.confidence <= 1.0))
        fail("confidence", "out of range [0,1]: " + fmt_double(t.confidence));
    if (t.tqs == 0 && t.confidence != 0.0)
        fail("confidence", "must be 0 when tqs is 0 (unscorable)");
    bool prev_alive = true;
    for (std::size_t i = 0; i < T; ++i) {
        if (t.flags[i].alive && !prev_alive) fail("flags.alive", "must be monotone non-increasing");
        prev_alive = t.flags[i].alive;
    }
    if (t.mortality != !t.flags.back().alive)
        fail("mortality", "must equal negation of the final alive flag");
    if (t.sofa_subscores) {
        if (t.sofa_subscores->size() != T) fail("sofa_subscores", "length differs from states");
        for (const auto& row : *t.sofa_subscores)
            for (int v : row)
                if (v < 0 || v > 4) fail("sofa_subscores", "subscore outside 0..4");
    }
    if (t.step_hours != 4) fail("step_hours", "must be 4");
    if (!std::isfinite(t.cov.age) || t.cov.age < 0) fail("covariates.age", "invalid");
    if (!std::isfinite(t.cov.lactate)) fail("covariates.lactate", "invalid");
    if (!std::isfinite(t.cov.shock_index)) fail("covariates.shock_index", "invalid");
}

namespace {

json trajectory_to_json(const Trajectory& t, const Split* split) {
    json j;
    j["id"] = t.id;
    j["tqs"] = t.tqs;
    j["confidence"] = t.confidence;
    j["mortality"] = t.mortality;
    j["states"] = t.states;
    json iv = json::array(), vaso = json::array();
    for (const Action& a : t.actions) {
        iv.push_back(a.iv_bin);
        vaso.push_back(a.vaso_bin);
    }
    j["iv_bins"] = iv;
    j["vaso_bins"] = vaso;
    json fl;
    std::vector<bool> v1, v2, v3, v4;
    for (const StepFlags& f : t.flags) {
        v1.push_back(f.vasopressor_on);
        v2.push_back(f.mech_vent);
        v3.push_back(f.rrt);
        v4.push_back(f.alive);
    }
    fl["vasopressor_on"] = v1;
    fl["mech_vent"] = v2;
    fl["rrt"] = v3;
    fl["alive"] = v4;
    j["flags"] = fl;
    j["map_mmhg"] = t.map_mmhg;
    if (t.discharge == DischargeCategory::Missing)
        j["discharge"] = nullptr;
    else
        j["discharge"] = discharge_category_name(t.discharge);
    if (t.sofa_subscores) j["sofa_subscores"] = *t.sofa_subscores;
    json cov;
    cov["age"] = t.cov.age;
    cov["sofa_baseline"] = t.cov.sofa_baseline;
    if (t.cov.elixhauser) cov["elixhauser"] = *t.cov.elixhauser;
    cov["lactate"] = t.cov.lactate;
    cov["shock_index"] = t.cov.shock_index;
    cov["mech_vent"] = t.cov.mech_vent_baseline;
    j["covariates"] = cov;
    if (split) j["split"] = (*split == Split::Train) ? "train" : "test";
    return j;
}

template <typename T>
T get_field(const json& j, const char* key, long line_no) {
    if (!j.contains(key)) {
        std::ostringstream os;
        os << "line " << line_no << ": field '" << key << "': missing";
        throw ValidationError(os.str());
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        std::ostringstream os;
        os << "line " << line_no << ": field '" << key << "': " << e.what();
        throw ValidationError(os.str());
    }
}

Trajectory trajectory_from_json(const json& j, long line_no, Split* split_out, bool* has_split) {
    Trajectory t;
    t.id = get_field<std::string>(j, "id", line_no);
    t.tqs = get_field<int>(j, "tqs", line_no);
    t.confidence = get_field<double>(j, "confidence", line_no);
    t.mortality = get_field<bool>(j, "mortality", line_no);
    t.states = get_field<std::vector<StateVector>>(j, "states", line_no);
    auto iv = get_field<std::vector<int>>(j, "iv_bins", line_no);
    auto vaso = get_field<std::vector<int>>(j, "vaso_bins", line_no);
    if (iv.size() != vaso.size()) {
        std::ostringstream os;
        os << "line " << line_no << ": field 'vaso_bins': length differs from iv_bins";
        throw ValidationError(os.str());
    }
    for (std::size_t i = 0; i < iv.size(); ++i) t.actions.push_back(Action{iv[i], vaso[i]});
    json fl = get_field<json>(j, "flags", line_no);
    auto v1 = get_field<std::vector<bool>>(fl, "vasopressor_on", line_no);
    auto v2 = get_field<std::vector<bool>>(fl, "mech_vent", line_no);
    auto v3 = get_field<std::vector<bool>>(fl, "rrt", line_no);
    auto v4 = get_field<std::vector<bool>>(fl, "alive", line_no);
    if (v1.size() != v4.size() || v2.size() != v4.size() || v3.size() != v4.size()) {
        std::ostringstream os;
        os << "line " << line_no << ": field 'flags': component lengths differ";
        throw ValidationError(os.str());
    }
    for (std::size_t i = 0; i < v4.size(); ++i)
        t.flags.push_back(StepFlags{v1[i], v2[i], v3[i], v4[i]});
    t.map_mmhg = get_field<std::vector<double>>(j, "map_mmhg", line_no);
    if (j.contains("discharge") && !j.at("discharge").is_null())
        t.discharge = discharge_category_from_name(j.at("discharge").get<std::string>());
    if (j.contains("sofa_subscores") && !j.at("sofa_subscores").is_null())
        t.sofa_subscores = j.at("sofa_subscores").get<std::vector<std::array<int, 6>>>();
    json cov = get_field<json>(j, "covariates", line_no);
    t.cov.age = get_field<double>(cov, "age", line_no);
    t.cov.sofa_baseline = get_field<int>(cov, "sofa_baseline", line_no);
    if (cov.contains("elixhauser") && !cov.at("elixhauser").is_null())
        t.cov.elixhauser = cov.at("elixhauser").get<int>();
    t.cov.lactate = get_field<double>(cov, "lactate", line_no);
    t.cov.shock_index = get_field<double>(cov, "shock_index", line_no);
    t.cov.mech_vent_baseline = get_field<bool>(cov, "mech_vent", line_no);
    if (j.contains("split")) {
        *has_split = true;
        const std::string s = j.at("split").get<std::string>();
        if (s != "train" && s != "test") {
            std::ostringstream os;
            os << "line " << line_no << ": field 'split': must be 'train' or 'test'";
            throw ValidationError(os.str());
        }
        *split_out = (s == "train") ? Split::Train : Split::Test;
    }
    return t;
}

} // namespace

void save_cohort(const Cohort& cohort, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    json meta;
    meta["cohort_format"] = 1;
    meta["feature_names"] = cohort.feature_names;
    out << meta.dump() << '\n';
    for (std::size_t i = 0; i < cohort.trajectories.size(); ++i) {
        const Split* sp = cohort.has_split() ? &cohort.split[i] : nullptr;
        out << trajectory_to_json(cohort.trajectories[i], sp).dump() << '\n';
    }
}

Cohort load_cohort(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open cohort file: " + path);
    Cohort cohort;
    std::string line;
    long line_no = 0;
    bool any_split = false;
    std::vector<Split> splits;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            std::ostringstream os;
            os << "line " << line_no << ": invalid JSON: " << e.what();
            throw ValidationError(os.str());
        }
        if (j.contains("cohort_format")) {
            cohort.feature_names = j.at("feature_names").get<std::vector<std::string>>();
            continue;
        }
        Split sp = Split::Train;
        bool has_split = false;
        Trajectory t = trajectory_from_json(j, line_no, &sp, &has_split);
        if (cohort.feature_names.empty()) {
            // No meta record: synthesize positional names from the first row.
            std::size_t d = t.states.empty() ? 0 : t.states[0].size();
            for (std::size_t f = 0; f < d; ++f)
                cohort.feature_names.push_back("f" + std::to_string(f));
        }
        validate_trajectory(t, cohort.feature_count(), line_no);
        cohort.trajectories.push_back(std::move(t));
        splits.push_back(sp);
        any_split = any_split || has_split;
    }
    if (cohort.trajectories.empty()) throw ValidationError("cohort file has no trajectories");
    if (any_split) cohort.split = std::move(splits);
    return cohort;
}

void write_cohort_feature_summary(const Cohort& cohort, const std::string& path) {
    CsvWriter csv(path);
    csv.row({"feature", "mean", "std", "min", "max"});
    const std::size_t d = cohort.feature_count();
    std::vector<double> sum(d, 0), sum2(d, 0);
    std::vector<double> mn(d, 1e300), mx(d, -1e300);
    std::size_t n = 0;
    for (const Trajectory& t : cohort.trajectories)
        for (const StateVector& s : t.states) {
            ++n;
            for (std::size_t f = 0; f < d; ++f) {
                sum[f] += s[f];
                sum2[f] += s[f] * s[f];
                mn[f] = std::min(mn[f], s[f]);
                mx[f] = std::max(mx[f], s[f]);
            }
        }
    for (std::size_t f = 0; f < d; ++f) {
        double mean = sum[f] / static_cast<double>(n);
        double var = std::max(0.0, sum2[f] / static_cast<double>(n) - mean * mean);
        csv.row({cohort.feature_names[f], fmt_double(mean), fmt_double(std::sqrt(var)),
                 fmt_double(mn[f]), fmt_double(mx[f])});
    }
}

void write_cohort_overview(const Cohort& cohort, const std::string& path) {
    CsvWriter csv(path);
    csv.row({"key", "value"});
    const auto n = cohort.trajectories.size();
    csv.row({"n_trajectories", std::to_string(n)});
    std::size_t n_train = 0, n_test = 0;
    if (cohort.has_split())
        for (Split s : cohort.split) (s == Split::Train ? n_train : n_test)++;
    csv.row({"n_train", std::to_string(n_train)});
    csv.row({"n_test", std::to_string(n_test)});
    std::size_t deaths = 0, steps = 0;
    std::array<std::size_t, 6> tqs_hist{};
    double conf_sum = 0;
    for (const Trajectory& t : cohort.trajectories) {
        deaths += t.mortality ? 1 : 0;
        steps += t.length();
        tqs_hist[static_cast<std::size_t>(t.tqs)]++;
        conf_sum += t.confidence;
    }
    csv.row({"mortality_rate", fmt_double(static_cast<double>(deaths) / static_cast<double>(n))});
    csv.row({"mean_steps", fmt_double(static_cast<double>(steps) / static_cast<double>(n))});
    for (int s = 0; s <= 5; ++s)
        csv.row({"tqs_" + std::to_string(s), std::to_string(tqs_hist[static_cast<std::size_t>(s)])});
    csv.row({"mean_confidence", fmt_double(conf_sum / static_cast<double>(n))});
}

} // namespace cnpr
