#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dswinir/error.hpp"
#include "dswinir/model.hpp"

namespace dswinir {

/// A synthetic degradation. `compose` applies `steps` left to right.
struct DegradationSpec {
    std::string kind = "gaussian";  // gaussian | rain | compose
    double sigma = 25.0;            // on the 0-255 scale
    std::size_t streaks = 24;
    double angle = 75.0;  // degrees from horizontal
    double intensity = 0.5;
    std::vector<DegradationSpec> steps;
    std::string stream = "noise";

    bool operator==(const DegradationSpec&) const = default;
};

struct TrainConfig {
    double lr0 = 2e-4;
    double eta_min = 1e-6;
    std::size_t total_steps = 200;
    std::size_t batch = 2;
    std::size_t patch = 64;
    std::uint64_t seed = 0;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t eval_every = 50;
    std::size_t holdout_patches = 4;
    DegradationSpec degradation;

    void validate() const {
        if (!(lr0 > eta_min) || eta_min < 0) throw ConfigError("require lr0 > eta_min >= 0");
        if (patch == 0 || patch % 8 != 0) throw ConfigError("patch must be a positive multiple of 8");
        if (batch == 0 || total_steps == 0) throw ConfigError("batch and total_steps must be positive");
        if (holdout_patches == 0) throw ConfigError("holdout_patches must be positive");
        if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0 && weight_decay >= 0))
            throw ConfigError("invalid AdamW hyper-parameters");
    }

    bool operator==(const TrainConfig&) const = default;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
};

using Json = nlohmann::json;

namespace detail {

template <class F>
void for_each_key(const Json& j, const std::string& where, F&& f) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!f(it.key(), it.value())) throw ConfigError("unknown key " + where + "." + it.key());
}

template <class T>
T get_as(const Json& v, const std::string& key) {
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad value for " + key + ": " + e.what());
    }
}

}  // namespace detail

inline Json to_json(const DegradationSpec& d) {
    Json j{{"kind", d.kind}, {"stream", d.stream}};
    if (d.kind == "gaussian") j["sigma"] = d.sigma;
    if (d.kind == "rain") {
        j["streaks"] = d.streaks;
        j["angle"] = d.angle;
        j["intensity"] = d.intensity;
    }
    if (d.kind == "compose") {
        j["steps"] = Json::array();
        for (const auto& s : d.steps) j["steps"].push_back(to_json(s));
    }
    return j;
}

inline DegradationSpec degradation_from_json(const Json& j) {
    DegradationSpec d;
    detail::for_each_key(j, "degradation", [&](const std::string& k, const Json& v) {
        if (k == "kind") d.kind = detail::get_as<std::string>(v, k);
        else if (k == "sigma") d.sigma = detail::get_as<double>(v, k);
        else if (k == "streaks") d.streaks = detail::get_as<std::size_t>(v, k);
        else if (k == "angle") d.angle = detail::get_as<double>(v, k);
        else if (k == "intensity") d.intensity = detail::get_as<double>(v, k);
        else if (k == "stream") d.stream = detail::get_as<std::string>(v, k);
        else if (k == "steps") {
            if (!v.is_array()) throw ConfigError("degradation.steps must be an array");
            for (const auto& s : v) d.steps.push_back(degradation_from_json(s));
        } else return false;
        return true;
    });
    if (d.kind != "gaussian" && d.kind != "rain" && d.kind != "compose")
        throw ConfigError("unknown degradation kind " + d.kind);
    if (d.sigma < 0) throw ConfigError("sigma must be non-negative");
    return d;
}

inline Json to_json(const ModelConfig& c) {
    Json ks = Json::array();
    for (const auto& k : c.kernel_sizes) ks.push_back(k);
    Json br = Json::array();
    for (const auto& b : c.ffn_branches) br.push_back({b.kernel, b.dilation});
    return Json{{"base_channels", c.base_channels},
                {"stage_depths", c.stage_depths},
                {"heads", c.heads},
                {"kernel_sizes", ks},
                {"ffn_expansion", c.ffn_expansion},
                {"ffn_branches", br},
                {"msg_ffn_enabled", c.msg_ffn_enabled},
                {"offsets_enabled", c.offsets_enabled},
                {"single_kernel_override",
                 c.single_kernel_override ? Json(*c.single_kernel_override) : Json(nullptr)},
                {"attention", c.attention == AttentionKind::window ? "window" : "sliding"},
                {"window_size", c.window_size}};
}

inline ModelConfig model_config_from_json(const Json& j) {
    ModelConfig c;
    auto four = [](const Json& v, const std::string& k) {
        auto a = detail::get_as<std::vector<std::size_t>>(v, k);
        if (a.size() != kStages) throw ConfigError(k + " must list exactly 4 stages");
        std::array<std::size_t, kStages> out{};
        std::copy(a.begin(), a.end(), out.begin());
        return out;
    };
    detail::for_each_key(j, "model", [&](const std::string& k, const Json& v) {
        if (k == "base_channels") c.base_channels = detail::get_as<std::size_t>(v, k);
        else if (k == "stage_depths") c.stage_depths = four(v, k);
        else if (k == "heads") c.heads = four(v, k);
        else if (k == "kernel_sizes") {
            auto ks = detail::get_as<std::vector<std::vector<std::size_t>>>(v, k);
            if (ks.size() != kStages) throw ConfigError("kernel_sizes must list exactly 4 stages");
            for (std::size_t s = 0; s < kStages; ++s) c.kernel_sizes[s] = ks[s];
        } else if (k == "ffn_expansion") c.ffn_expansion = detail::get_as<std::size_t>(v, k);
        else if (k == "ffn_branches") {
            c.ffn_branches.clear();
            for (const auto& b : detail::get_as<std::vector<std::array<std::size_t, 2>>>(v, k))
                c.ffn_branches.push_back({b[0], b[1]});
        } else if (k == "msg_ffn_enabled") c.msg_ffn_enabled = detail::get_as<bool>(v, k);
        else if (k == "offsets_enabled") c.offsets_enabled = detail::get_as<bool>(v, k);
        else if (k == "single_kernel_override") {
            if (v.is_null()) c.single_kernel_override.reset();
            else c.single_kernel_override = detail::get_as<std::size_t>(v, k);
        } else if (k == "attention") {
            const auto a = detail::get_as<std::string>(v, k);
            if (a == "window") c.attention = AttentionKind::window;
            else if (a == "sliding") c.attention = AttentionKind::sliding;
            else throw ConfigError("attention must be \"window\" or \"sliding\"");
        } else if (k == "window_size") c.window_size = detail::get_as<std::size_t>(v, k);
        else return false;
        return true;
    });
    c.validate();
    return c;
}

inline Json to_json(const TrainConfig& t) {
    return Json{{"lr0", t.lr0},
                {"eta_min", t.eta_min},
                {"total_steps", t.total_steps},
                {"batch", t.batch},
                {"patch", t.patch},
                {"seed", t.seed},
                {"weight_decay", t.weight_decay},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"eps", t.eps},
                {"eval_every", t.eval_every},
                {"holdout_patches", t.holdout_patches},
                {"degradation", to_json(t.degradation)}};
}

inline TrainConfig train_config_from_json(const Json& j) {
    TrainConfig t;
    detail::for_each_key(j, "train", [&](const std::string& k, const Json& v) {
        if (k == "lr0") t.lr0 = detail::get_as<double>(v, k);
        else if (k == "eta_min") t.eta_min = detail::get_as<double>(v, k);
        else if (k == "total_steps") t.total_steps = detail::get_as<std::size_t>(v, k);
        else if (k == "batch") t.batch = detail::get_as<std::size_t>(v, k);
        else if (k == "patch") t.patch = detail::get_as<std::size_t>(v, k);
        else if (k == "seed") t.seed = detail::get_as<std::uint64_t>(v, k);
        else if (k == "weight_decay") t.weight_decay = detail::get_as<double>(v, k);
        else if (k == "beta1") t.beta1 = detail::get_as<double>(v, k);
        else if (k == "beta2") t.beta2 = detail::get_as<double>(v, k);
        else if (k == "eps") t.eps = detail::get_as<double>(v, k);
        else if (k == "eval_every") t.eval_every = detail::get_as<std::size_t>(v, k);
        else if (k == "holdout_patches") t.holdout_patches = detail::get_as<std::size_t>(v, k);
        else if (k == "degradation") t.degradation = degradation_from_json(v);
        else return false;
        return true;
    });
    t.validate();
    return t;
}

inline Json to_json(const RunConfig& r) { return Json{{"model", to_json(r.model)}, {"train", to_json(r.train)}}; }

inline RunConfig run_config_from_json(const Json& j) {
    RunConfig r;
    detail::for_each_key(j, "config", [&](const std::string& k, const Json& v) {
        if (k == "model") r.model = model_config_from_json(v);
        else if (k == "train") r.train = train_config_from_json(v);
        else return false;
        return true;
    });
    return r;
}

inline RunConfig parse_run_config(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("invalid JSON: ") + e.what());
    }
    return run_config_from_json(j);
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

}  // namespace dswinir
