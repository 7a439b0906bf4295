#include "cnpr/checkpoint.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace cnpr {

using nlohmann::json;

namespace {

json load_json_file(const std::string& path, const char* expected_kind) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open checkpoint: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("invalid checkpoint JSON in " + path + ": " + e.what());
    }
    if (j.value("format", "") != "cnpr-checkpoint")
        throw ValidationError(path + " is not a cnpr checkpoint");
    if (j.value("kind", "") != expected_kind)
        throw ValidationError(path + " holds kind '" + j.value("kind", "") + "', expected '" +
                              expected_kind + "'");
    return j;
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
}

} // namespace

void save_reward_checkpoint(const RewardCheckpoint& ckpt, const std::string& path) {
    json j;
    j["format"] = "cnpr-checkpoint";
    j["version"] = 1;
    j["kind"] = "reward_model";
    j["state_dim"] = ckpt.model.state_dim();
    j["hidden"] = ckpt.model.hidden();
    j["dropout_p"] = ckpt.model.dropout_p();
    j["params"] = ckpt.model.params();
    j["feature_names"] = ckpt.feature_names;
    j["scaler"] = {{"mean", ckpt.scaler.mean}, {"stddev", ckpt.scaler.stddev}};
    j["normalization"] = {{"lo", ckpt.norm.lo}, {"hi", ckpt.norm.hi}, {"scale_c", ckpt.norm.scale_c}};
    write_json_file(j, path);
}

RewardCheckpoint load_reward_checkpoint(const std::string& path) {
    json j = load_json_file(path, "reward_model");
    const int state_dim = j.at("state_dim").get<int>();
    const int hidden = j.at("hidden").get<int>();
    const double dropout = j.at("dropout_p").get<double>();
    RewardModel model(state_dim, hidden, dropout);
    auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != model.param_count())
        throw ValidationError("checkpoint parameter count " + std::to_string(params.size()) +
                              " does not match dims (expected " +
                              std::to_string(model.param_count()) + ")");
    model.params() = std::move(params);

    RewardCheckpoint ckpt{std::move(model), {}, {}, {}};
    ckpt.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    ckpt.scaler.mean = j.at("scaler").at("mean").get<std::vector<double>>();
    ckpt.scaler.stddev = j.at("scaler").at("stddev").get<std::vector<double>>();
    if (ckpt.scaler.mean.size() != static_cast<std::size_t>(state_dim) ||
        ckpt.scaler.stddev.size() != static_cast<std::size_t>(state_dim))
        throw ValidationError("checkpoint scaler width does not match state_dim");
    if (ckpt.feature_names.size() != static_cast<std::size_t>(state_dim))
        throw ValidationError("checkpoint feature_names width does not match state_dim");
    ckpt.norm.lo = j.at("normalization").at("lo").get<double>();
    ckpt.norm.hi = j.at("normalization").at("hi").get<double>();
    ckpt.norm.scale_c = j.at("normalization").at("scale_c").get<double>();
    return ckpt;
}

void save_policy_checkpoint(const PolicyCheckpoint& ckpt, const std::string& path) {
    json j;
    j["format"] = "cnpr-checkpoint";
    j["version"] = 1;
    j["kind"] = "q_policy";
    j["state_dim"] = ckpt.model.state_dim();
    j["hidden"] = ckpt.model.hidden();
    j["leaky_slope"] = ckpt.model.leaky_slope();
    j["params"] = ckpt.model.params();
    j["feature_names"] = ckpt.feature_names;
    j["reward_source"] = ckpt.reward_source;
    j["gamma"] = ckpt.gamma;
    write_json_file(j, path);
}

PolicyCheckpoint load_policy_checkpoint(const std::string& path) {
    json j = load_json_file(path, "q_policy");
    const int state_dim = j.at("state_dim").get<int>();
    const int hidden = j.at("hidden").get<int>();
    const double slope = j.at("leaky_slope").get<double>();
    QModel model(state_dim, hidden, slope);
    auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != model.param_count())
        throw ValidationError("policy checkpoint parameter count mismatch");
    model.params() = std::move(params);
    model.sync_target();

    PolicyCheckpoint ckpt{std::move(model), {}, "", 0.99};
    ckpt.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    ckpt.reward_source = j.at("reward_source").get<std::string>();
    ckpt.gamma = j.at("gamma").get<double>();
    return ckpt;
}

} // namespace cnpr
