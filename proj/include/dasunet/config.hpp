#pragma once

// JSON configuration files.
//
// Run config (train / ablate):
//   { "network":  { stages, channels, transformer_blocks_per_pmm, attention_heads,
//                   window_size, lat_pool, variant },
//     "train":    { lr_init, lr_final, epochs, warmup_epochs, crop, batch_size, beta1,
//                   beta2, seed, loss_eps, augment, steps_per_epoch, val_every,
//                   checkpoint_every, stage_weights },
//     "ablation": { variants: [name...], stages: [k...] } }
// Every key is optional; an empty object gives the defaults.
//
// Oracle solver config:
//   { rho, eta, lambda1, lambda2, max_iters, tol, prior: "soft_threshold" | "none" }
//
// Oracle operator spec, one entry per stream or a single entry for both:
//   { "lum": OP, "chrom": OP }  or  OP
//   OP = { "type": "identity" }
//      | { "type": "diagonal", "gain": g }
//      | { "type": "diagonal", "gain_map": [[...], ...] }
//      | { "type": "convolution", "kernel": [[...], ...] }

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dasunet/oracle.hpp"
#include "dasunet/training.hpp"

namespace dasunet {

struct AblationConfig {
    std::vector<nn::Variant> variants; ///< empty: the network variant only
    std::vector<int> stages;           ///< empty: the network stage count only
};

struct RunConfig {
    nn::NetworkConfig network;
    TrainConfig train;
    AblationConfig ablation;

    void validate() const {
        network.validate();
        train.validate();
        for (int k : ablation.stages) {
            if (k < 1) throw ConfigError("ablation.stages: stage counts must be >= 1");
        }
        if (!train.stage_weights.empty()) static_cast<void>(train.weights(network.stages));
    }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::string& where, const std::vector<std::string>& known) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError((where.empty() ? "" : where + ".") + key + ": unknown field");
        }
    }
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

inline double get_number(const nlohmann::json& j, const std::string& where, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) throw ConfigError(where + "." + key + ": expected a number");
    return j.at(key).get<double>();
}

inline Tensor<double> matrix_to_tensor(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array() || j.empty() || !j.front().is_array() || j.front().empty()) {
        throw ConfigError(where + ": expected a non-empty 2-D array");
    }
    const int h = static_cast<int>(j.size());
    const int w = static_cast<int>(j.front().size());
    Tensor<double> t(1, 1, h, w);
    for (int y = 0; y < h; ++y) {
        if (!j[y].is_array() || static_cast<int>(j[y].size()) != w) throw ConfigError(where + ": rows differ in length");
        for (int x = 0; x < w; ++x) {
            if (!j[y][x].is_number()) throw ConfigError(where + ": expected numbers");
            t(0, 0, y, x) = j[y][x].get<double>();
        }
    }
    return t;
}

} // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    detail::reject_unknown(j, "", {"network", "train", "ablation"});
    RunConfig cfg;
    if (j.contains("network")) {
        if (!j.at("network").is_object()) throw ConfigError("network: expected an object");
        j.at("network").get_to(cfg.network);
    }
    if (j.contains("train")) j.at("train").get_to(cfg.train);
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        detail::reject_unknown(a, "ablation", {"variants", "stages"});
        if (a.contains("variants")) {
            if (!a.at("variants").is_array()) throw ConfigError("ablation.variants: expected an array of names");
            for (const auto& v : a.at("variants")) {
                if (!v.is_string()) throw ConfigError("ablation.variants: expected an array of names");
                try {
                    cfg.ablation.variants.push_back(nn::variant_from_string(v.get<std::string>()));
                } catch (const ConfigError& e) {
                    throw ConfigError(std::string("ablation.variants: ") + e.what());
                }
            }
        }
        if (a.contains("stages")) {
            if (!a.at("stages").is_array()) throw ConfigError("ablation.stages: expected an array of integers");
            for (const auto& k : a.at("stages")) {
                if (!k.is_number_integer()) throw ConfigError("ablation.stages: expected an array of integers");
                cfg.ablation.stages.push_back(k.get<int>());
            }
        }
    }
    cfg.validate();
    return cfg;
}

inline nlohmann::json run_config_json(const RunConfig& cfg) {
    nlohmann::json variants = nlohmann::json::array();
    for (auto v : cfg.ablation.variants) variants.push_back(nn::to_string(v));
    return {{"network", cfg.network},
            {"train", cfg.train},
            {"ablation", {{"variants", variants}, {"stages", cfg.ablation.stages}}}};
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    return parse_run_config(detail::read_json_file(path));
}

inline oracle::SolverConfig parse_solver_config(const nlohmann::json& j) {
    const std::string where = "solver";
    detail::reject_unknown(j, where, {"rho", "eta", "lambda1", "lambda2", "max_iters", "tol", "prior"});
    oracle::SolverConfig cfg;
    cfg.rho = detail::get_number(j, where, "rho", cfg.rho);
    cfg.eta = detail::get_number(j, where, "eta", cfg.eta);
    cfg.lambda1 = detail::get_number(j, where, "lambda1", cfg.lambda1);
    cfg.lambda2 = detail::get_number(j, where, "lambda2", cfg.lambda2);
    cfg.tol = detail::get_number(j, where, "tol", cfg.tol);
    if (j.contains("max_iters")) {
        if (!j.at("max_iters").is_number_integer()) throw ConfigError("solver.max_iters: expected an integer");
        cfg.max_iters = j.at("max_iters").get<int>();
    }
    if (j.contains("prior")) {
        const std::string p = j.at("prior").is_string() ? j.at("prior").get<std::string>() : "";
        if (p == "soft_threshold") cfg.prior = oracle::Prior::soft_threshold;
        else if (p == "none") cfg.prior = oracle::Prior::none;
        else throw ConfigError("solver.prior: expected \"soft_threshold\" or \"none\"");
    }
    try {
        cfg.validate();
    } catch (const ParameterError& e) {
        throw ConfigError(std::string("solver: ") + e.what());
    }
    return cfg;
}

inline nlohmann::json solver_config_json(const oracle::SolverConfig& c) {
    return {{"rho", c.rho},         {"eta", c.eta}, {"lambda1", c.lambda1}, {"lambda2", c.lambda2},
            {"max_iters", c.max_iters}, {"tol", c.tol},
            {"prior", c.prior == oracle::Prior::soft_threshold ? "soft_threshold" : "none"}};
}

inline oracle::DegradationOperator parse_operator(const nlohmann::json& j, const std::string& where) {
    detail::reject_unknown(j, where, {"type", "gain", "gain_map", "kernel"});
    if (!j.contains("type") || !j.at("type").is_string()) throw ConfigError(where + ".type: expected a string");
    const std::string type = j.at("type").get<std::string>();
    try {
        if (type == "identity") return oracle::DegradationOperator::identity();
        if (type == "diagonal") {
            if (j.contains("gain_map")) return oracle::DegradationOperator::diagonal(detail::matrix_to_tensor(j.at("gain_map"), where + ".gain_map"));
            if (!j.contains("gain")) throw ConfigError(where + ": diagonal operator needs gain or gain_map");
            return oracle::DegradationOperator::diagonal(detail::get_number(j, where, "gain", 1.0));
        }
        if (type == "convolution") {
            if (!j.contains("kernel")) throw ConfigError(where + ".kernel: missing");
            return oracle::DegradationOperator::convolution(detail::matrix_to_tensor(j.at("kernel"), where + ".kernel"));
        }
    } catch (const ParameterError& e) {
        throw ConfigError(where + ": " + e.what());
    } catch (const ShapeError& e) {
        throw ConfigError(where + ": " + e.what());
    }
    throw ConfigError(where + ".type: unknown operator '" + type + "'");
}

inline oracle::OperatorPair parse_operator_pair(const nlohmann::json& j) {
    if (j.is_object() && j.contains("type")) {
        const auto op = parse_operator(j, "operator");
        return {op, op};
    }
    detail::reject_unknown(j, "operator", {"lum", "chrom"});
    oracle::OperatorPair ops;
    if (j.contains("lum")) ops.lum = parse_operator(j.at("lum"), "operator.lum");
    if (j.contains("chrom")) ops.chrom = parse_operator(j.at("chrom"), "operator.chrom");
    return ops;
}

} // namespace dasunet
