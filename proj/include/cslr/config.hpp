#pragma once

// Run configuration, read from a JSON file. Every key is optional; missing
// keys keep the defaults below and unknown keys are rejected.
//
// {
//   "corpus": "corpus/",            "output_dir": "run/",
//   "seed": 1,                      "epochs": 30,
//   "model":     {"variant": "gloss", "channels": 64, "hidden": 64,
//                 "layers": 2, "batch_norm": true},
//   "loss":      {"alpha": 25, "tau": 8, "enable_ve": true,
//                 "enable_va": true, "aux_probe": true},
//   "optimizer": {"kind": "adam", "lr": 1e-3, "beta1": 0.9,
//                 "beta2": 0.999, "epsilon": 1e-8},
//   "schedule":  {"decay_epochs": [15, 22], "factor": 5},
//   "lr_ratio": 1.0
// }
//
// lr_ratio scales the learning rate of the feature extractor and auxiliary
// classifier relative to the alignment module.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cslr/binary_io.hpp"
#include "cslr/error.hpp"
#include "cslr/losses.hpp"
#include "cslr/optim.hpp"
#include "cslr/seqnet.hpp"

namespace cslr {

struct ModelSettings {
    TemporalVariant variant = TemporalVariant::Gloss;
    std::size_t channels = 64;
    std::size_t hidden = 64;
    std::size_t layers = 2;
    bool batch_norm = true;
};

struct Schedule {
    std::vector<std::size_t> decay_epochs{15, 22};
    double factor = 5.0;

    // Learning rate for a 0-based epoch: divided by `factor` once for every
    // decay epoch already reached.
    double lr_at(double base, std::size_t epoch) const {
        double lr = base;
        for (auto d : decay_epochs)
            if (epoch >= d) lr /= factor;
        return lr;
    }
};

struct RunConfig {
    std::filesystem::path corpus;
    std::filesystem::path output_dir;
    std::uint64_t seed = 1;
    std::size_t epochs = 30;
    ModelSettings model;
    LossConfig loss;
    AdamConfig optimizer;
    Schedule schedule;
    double lr_ratio = 1.0;

    void validate() const {
        loss.validate();
        if (!(optimizer.lr >= 0.0)) throw ConfigError("lr must be >= 0");
        if (!(schedule.factor > 1.0)) throw ConfigError("schedule factor must be > 1");
        if (!(lr_ratio >= 0.0)) throw ConfigError("lr_ratio must be >= 0");
        if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
            throw ConfigError("Adam betas must lie in [0, 1)");
        if (!(optimizer.epsilon > 0.0)) throw ConfigError("Adam epsilon must be > 0");
    }

    ModelConfig model_config(std::size_t vocab_size, std::size_t input_dim) const {
        return {vocab_size + 1, input_dim, model.variant, model.channels, model.hidden, model.layers, model.batch_norm};
    }
};

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    return {{"corpus", c.corpus.string()},
            {"output_dir", c.output_dir.string()},
            {"seed", c.seed},
            {"epochs", c.epochs},
            {"model",
             {{"variant", std::string(variant_name(c.model.variant))},
              {"channels", c.model.channels},
              {"hidden", c.model.hidden},
              {"layers", c.model.layers},
              {"batch_norm", c.model.batch_norm}}},
            {"loss",
             {{"alpha", c.loss.alpha},
              {"tau", c.loss.tau},
              {"enable_ve", c.loss.enable_ve},
              {"enable_va", c.loss.enable_va},
              {"aux_probe", c.loss.aux_probe}}},
            {"optimizer",
             {{"kind", "adam"},
              {"lr", c.optimizer.lr},
              {"beta1", c.optimizer.beta1},
              {"beta2", c.optimizer.beta2},
              {"epsilon", c.optimizer.epsilon}}},
            {"schedule", {{"decay_epochs", c.schedule.decay_epochs}, {"factor", c.schedule.factor}}},
            {"lr_ratio", c.lr_ratio}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {}) {
    auto section = [](const nlohmann::json& obj, const std::string& where, auto&& handle) {
        if (!obj.is_object()) throw ConfigError(where + " must be an object");
        for (auto it = obj.begin(); it != obj.end(); ++it)
            if (!handle(it.key(), it.value())) throw ConfigError("unknown key " + where + "." + it.key());
    };
    try {
        section(j, "config", [&](const std::string& k, const nlohmann::json& v) {
            if (k == "corpus") c.corpus = v.get<std::string>();
            else if (k == "output_dir") c.output_dir = v.get<std::string>();
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "epochs") c.epochs = v.get<std::size_t>();
            else if (k == "lr_ratio") c.lr_ratio = v.get<double>();
            else if (k == "model")
                section(v, "model", [&](const std::string& mk, const nlohmann::json& mv) {
                    if (mk == "variant") c.model.variant = parse_variant(mv.get<std::string>());
                    else if (mk == "channels") c.model.channels = mv.get<std::size_t>();
                    else if (mk == "hidden") c.model.hidden = mv.get<std::size_t>();
                    else if (mk == "layers") c.model.layers = mv.get<std::size_t>();
                    else if (mk == "batch_norm") c.model.batch_norm = mv.get<bool>();
                    else return false;
                    return true;
                });
            else if (k == "loss")
                section(v, "loss", [&](const std::string& lk, const nlohmann::json& lv) {
                    if (lk == "alpha") c.loss.alpha = lv.get<double>();
                    else if (lk == "tau") c.loss.tau = lv.get<double>();
                    else if (lk == "enable_ve") c.loss.enable_ve = lv.get<bool>();
                    else if (lk == "enable_va") c.loss.enable_va = lv.get<bool>();
                    else if (lk == "aux_probe") c.loss.aux_probe = lv.get<bool>();
                    else return false;
                    return true;
                });
            else if (k == "optimizer")
                section(v, "optimizer", [&](const std::string& ok, const nlohmann::json& ov) {
                    if (ok == "kind") {
                        if (ov.get<std::string>() != "adam") throw ConfigError("only the adam optimizer is supported");
                    } else if (ok == "lr") c.optimizer.lr = ov.get<double>();
                    else if (ok == "beta1") c.optimizer.beta1 = ov.get<double>();
                    else if (ok == "beta2") c.optimizer.beta2 = ov.get<double>();
                    else if (ok == "epsilon") c.optimizer.epsilon = ov.get<double>();
                    else return false;
                    return true;
                });
            else if (k == "schedule")
                section(v, "schedule", [&](const std::string& sk, const nlohmann::json& sv) {
                    if (sk == "decay_epochs") c.schedule.decay_epochs = sv.get<std::vector<std::size_t>>();
                    else if (sk == "factor") c.schedule.factor = sv.get<double>();
                    else return false;
                    return true;
                });
            else return false;
            return true;
        });
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace cslr
