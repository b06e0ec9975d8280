#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "driftct/generator.hpp"
#include "driftct/metrics.hpp"
#include "driftct/phantom.hpp"
#include "driftct/preprocess.hpp"
#include "driftct/trainer.hpp"

// The single run configuration: a versioned JSON file uniting the generator,
// training, phantom, preprocessing, metric, and inference settings. Every key
// is optional and defaulted; unknown keys are rejected. Runs write the fully
// resolved configuration next to their outputs.

namespace driftct {

struct DataConfig {
    double min_foreground = 0.05;       // minimum body fraction for a training slice
    double foreground_intensity = 0.05; // normalized intensity counted as body
};

struct InferConfig {
    enum class NoiseMode { per_slice, per_volume };
    NoiseMode noise_mode = NoiseMode::per_slice;
};

struct RunConfig {
    static constexpr int kVersion = 1;
    GeneratorSpec generator;
    TrainConfig train;
    PhantomSpec phantom;
    PrepConfig prep;
    SsimConfig ssim;
    DataConfig data;
    InferConfig infer;

    void validate() const {
        generator.validate();
        train.validate();
        phantom.validate();
        prep.validate();
        ssim.validate();
        if (prep.target_inplane % (std::size_t{1} << generator.depth) != 0) {
            throw ValueError("config: prep.target_inplane must be divisible by 2^depth");
        }
        if (train.patch_size > prep.target_inplane) {
            throw ValueError("config: train.patch_size exceeds prep.target_inplane");
        }
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& ctx,
                       std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw FormatError("config: " + ctx + " must be an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw FormatError("config: unknown key '" + ctx + "." + key + "'");
    }
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end()) it->get_to(out);
}

inline void get_range(const nlohmann::json& j, const char* key, PhantomSpec::Range& out) {
    if (auto it = j.find(key); it != j.end()) {
        if (!it->is_array() || it->size() != 2) {
            throw FormatError(std::string("config: '") + key + "' must be [lo, hi]");
        }
        out.lo = (*it)[0].get<double>();
        out.hi = (*it)[1].get<double>();
    }
}

} // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    detail::check_keys(j, "$", {"version", "generator", "train", "phantom", "prep", "ssim",
                                "data", "infer"});
    if (!j.contains("version")) throw FormatError("config: missing 'version'");
    if (j.at("version").get<int>() != RunConfig::kVersion) {
        throw FormatError("config: unsupported version " + j.at("version").dump() +
                          ", expected " + std::to_string(RunConfig::kVersion));
    }
    RunConfig cfg;
    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        detail::check_keys(g, "generator",
                           {"in_channels", "base_width", "depth", "noise_channels",
                            "noise_scale", "lrelu_slope"});
        detail::get_if(g, "in_channels", cfg.generator.in_channels);
        detail::get_if(g, "base_width", cfg.generator.base_width);
        detail::get_if(g, "depth", cfg.generator.depth);
        detail::get_if(g, "noise_channels", cfg.generator.noise_channels);
        detail::get_if(g, "noise_scale", cfg.generator.noise_scale);
        detail::get_if(g, "lrelu_slope", cfg.generator.lrelu_slope);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::check_keys(t, "train",
                           {"lambda_drift", "lambda_l1", "patches_per_image", "patch_size",
                            "lr", "tau_mode", "tau_fixed", "early_stop_window",
                            "early_stop_threshold", "split", "seed", "batch_size",
                            "max_epochs"});
        detail::get_if(t, "lambda_drift", cfg.train.lambda_drift);
        detail::get_if(t, "lambda_l1", cfg.train.lambda_l1);
        detail::get_if(t, "patches_per_image", cfg.train.patches_per_image);
        detail::get_if(t, "patch_size", cfg.train.patch_size);
        detail::get_if(t, "lr", cfg.train.lr);
        if (t.contains("tau_mode")) {
            const auto mode = t.at("tau_mode").get<std::string>();
            if (mode == "median") {
                cfg.train.tau_mode = TrainConfig::TauMode::median_heuristic;
            } else if (mode == "fixed") {
                cfg.train.tau_mode = TrainConfig::TauMode::fixed;
            } else {
                throw FormatError("config: train.tau_mode must be 'median' or 'fixed'");
            }
        }
        detail::get_if(t, "tau_fixed", cfg.train.tau_fixed);
        detail::get_if(t, "early_stop_window", cfg.train.early_stop_window);
        detail::get_if(t, "early_stop_threshold", cfg.train.early_stop_threshold);
        if (t.contains("split")) {
            const auto& s = t.at("split");
            if (!s.is_array() || s.size() != 3) {
                throw FormatError("config: train.split must be [train, val, test]");
            }
            for (int i = 0; i < 3; ++i) cfg.train.split[i] = s[i].get<double>();
        }
        detail::get_if(t, "seed", cfg.train.seed);
        detail::get_if(t, "batch_size", cfg.train.batch_size);
        detail::get_if(t, "max_epochs", cfg.train.max_epochs);
    }
    if (j.contains("phantom")) {
        const auto& p = j.at("phantom");
        detail::check_keys(p, "phantom",
                           {"size", "slices", "body_count_range", "bone_count_range",
                            "target_background", "target_soft", "target_bone",
                            "cond_background", "cond_soft", "cond_bone", "bias_strength",
                            "noise_level", "seed"});
        detail::get_if(p, "size", cfg.phantom.size);
        detail::get_if(p, "slices", cfg.phantom.slices);
        const auto get_counts = [&](const char* key, std::array<std::size_t, 2>& out) {
            if (auto it = p.find(key); it != p.end()) {
                if (!it->is_array() || it->size() != 2) {
                    throw FormatError(std::string("config: '") + key + "' must be [lo, hi]");
                }
                out[0] = (*it)[0].get<std::size_t>();
                out[1] = (*it)[1].get<std::size_t>();
            }
        };
        get_counts("body_count_range", cfg.phantom.body_count_range);
        get_counts("bone_count_range", cfg.phantom.bone_count_range);
        detail::get_range(p, "target_background", cfg.phantom.target_background);
        detail::get_range(p, "target_soft", cfg.phantom.target_soft);
        detail::get_range(p, "target_bone", cfg.phantom.target_bone);
        detail::get_range(p, "cond_background", cfg.phantom.cond_background);
        detail::get_range(p, "cond_soft", cfg.phantom.cond_soft);
        detail::get_range(p, "cond_bone", cfg.phantom.cond_bone);
        detail::get_if(p, "bias_strength", cfg.phantom.bias_strength);
        detail::get_if(p, "noise_level", cfg.phantom.noise_level);
        detail::get_if(p, "seed", cfg.phantom.seed);
    }
    if (j.contains("prep")) {
        const auto& p = j.at("prep");
        detail::check_keys(p, "prep",
                           {"target_spacing", "target_inplane", "clip_lo_percentile",
                            "clip_hi_percentile", "window_lo", "window_hi"});
        if (p.contains("target_spacing")) {
            const auto& s = p.at("target_spacing");
            if (!s.is_array() || s.size() != 3) {
                throw FormatError("config: prep.target_spacing must be [sz, sy, sx]");
            }
            for (int i = 0; i < 3; ++i) cfg.prep.target_spacing[i] = s[i].get<double>();
        }
        detail::get_if(p, "target_inplane", cfg.prep.target_inplane);
        detail::get_if(p, "clip_lo_percentile", cfg.prep.clip_lo_percentile);
        detail::get_if(p, "clip_hi_percentile", cfg.prep.clip_hi_percentile);
        detail::get_if(p, "window_lo", cfg.prep.window_lo);
        detail::get_if(p, "window_hi", cfg.prep.window_hi);
    }
    if (j.contains("ssim")) {
        const auto& s = j.at("ssim");
        detail::check_keys(s, "ssim", {"window", "sigma", "k1", "k2", "dynamic_range"});
        detail::get_if(s, "window", cfg.ssim.window);
        detail::get_if(s, "sigma", cfg.ssim.sigma);
        detail::get_if(s, "k1", cfg.ssim.k1);
        detail::get_if(s, "k2", cfg.ssim.k2);
        detail::get_if(s, "dynamic_range", cfg.ssim.dynamic_range);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::check_keys(d, "data", {"min_foreground", "foreground_intensity"});
        detail::get_if(d, "min_foreground", cfg.data.min_foreground);
        detail::get_if(d, "foreground_intensity", cfg.data.foreground_intensity);
    }
    if (j.contains("infer")) {
        const auto& i = j.at("infer");
        detail::check_keys(i, "infer", {"noise_mode"});
        if (i.contains("noise_mode")) {
            const auto mode = i.at("noise_mode").get<std::string>();
            if (mode == "per-slice") {
                cfg.infer.noise_mode = InferConfig::NoiseMode::per_slice;
            } else if (mode == "per-volume") {
                cfg.infer.noise_mode = InferConfig::NoiseMode::per_volume;
            } else {
                throw FormatError("config: infer.noise_mode must be 'per-slice' or 'per-volume'");
            }
        }
    }
    cfg.validate();
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("config: cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("config: " + path.string() + " is not valid JSON: " + e.what());
    }
    try {
        return parse_run_config(j);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("config: " + path.string() + ": " + e.what());
    }
}

// Fully resolved configuration, defaults expanded.
inline nlohmann::json run_config_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["version"] = RunConfig::kVersion;
    j["generator"] = cfg.generator;
    j["train"] = {
        {"lambda_drift", cfg.train.lambda_drift},
        {"lambda_l1", cfg.train.lambda_l1},
        {"patches_per_image", cfg.train.patches_per_image},
        {"patch_size", cfg.train.patch_size},
        {"lr", cfg.train.lr},
        {"tau_mode",
         cfg.train.tau_mode == TrainConfig::TauMode::median_heuristic ? "median" : "fixed"},
        {"tau_fixed", cfg.train.tau_fixed},
        {"early_stop_window", cfg.train.early_stop_window},
        {"early_stop_threshold", cfg.train.early_stop_threshold},
        {"split", cfg.train.split},
        {"seed", cfg.train.seed},
        {"batch_size", cfg.train.batch_size},
        {"max_epochs", cfg.train.max_epochs},
    };
    const auto range = [](PhantomSpec::Range r) { return nlohmann::json{r.lo, r.hi}; };
    j["phantom"] = {
        {"size", cfg.phantom.size},
        {"slices", cfg.phantom.slices},
        {"body_count_range", cfg.phantom.body_count_range},
        {"bone_count_range", cfg.phantom.bone_count_range},
        {"target_background", range(cfg.phantom.target_background)},
        {"target_soft", range(cfg.phantom.target_soft)},
        {"target_bone", range(cfg.phantom.target_bone)},
        {"cond_background", range(cfg.phantom.cond_background)},
        {"cond_soft", range(cfg.phantom.cond_soft)},
        {"cond_bone", range(cfg.phantom.cond_bone)},
        {"bias_strength", cfg.phantom.bias_strength},
        {"noise_level", cfg.phantom.noise_level},
        {"seed", cfg.phantom.seed},
    };
    j["prep"] = {
        {"target_spacing", cfg.prep.target_spacing},
        {"target_inplane", cfg.prep.target_inplane},
        {"clip_lo_percentile", cfg.prep.clip_lo_percentile},
        {"clip_hi_percentile", cfg.prep.clip_hi_percentile},
        {"window_lo", cfg.prep.window_lo},
        {"window_hi", cfg.prep.window_hi},
    };
    j["ssim"] = {
        {"window", cfg.ssim.window}, {"sigma", cfg.ssim.sigma},
        {"k1", cfg.ssim.k1},         {"k2", cfg.ssim.k2},
        {"dynamic_range", cfg.ssim.dynamic_range},
    };
    j["data"] = {
        {"min_foreground", cfg.data.min_foreground},
        {"foreground_intensity", cfg.data.foreground_intensity},
    };
    j["infer"] = {
        {"noise_mode",
         cfg.infer.noise_mode == InferConfig::NoiseMode::per_slice ? "per-slice"
                                                                   : "per-volume"},
    };
    return j;
}

inline void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw FormatError("config: cannot write " + path.string());
    out << run_config_json(cfg).dump(2) << '\n';
}

} // namespace driftct
