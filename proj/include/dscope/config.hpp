#pragma once

#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dscope/analysis.hpp"
#include "dscope/data.hpp"
#include "dscope/model.hpp"
#include "dscope/train.hpp"

namespace dscope {

struct DataConfig {
    std::string kind = "synth";  // synth | csv
    std::string path;
    bool has_time_column = true;
    std::string synth_kind = "sine_mixture";
    std::size_t channels = 1;
    std::size_t length = 2048;
    double noise_sigma = 0.0;
    std::string split = "ratio_7_1_2";  // ratio_7_1_2 | ett_8_4_4_months | custom
    double train_frac = 0.7;
    double val_frac = 0.1;
    std::size_t rows_per_month = kEttRowsPerMonthHourly;
    std::size_t window_stride = 1;
};

// Everything one pipeline run needs. All randomness flows from the single
// master seed through named streams.
struct RunConfig {
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    ImportanceConfig importance;
    std::uint64_t seed = 0;
    std::size_t batch_limit = 8;    // capture batches for analysis
    std::size_t batch_size = 64;    // inference/analysis batch
    std::size_t speedup_runs = 30;
    std::size_t project_windows = 8;

    void validate() const {
        model.validate();
        train.validate();
        importance.validate();
        if (data.kind != "synth" && data.kind != "csv")
            throw ConfigError("data.kind must be synth or csv");
        if (data.kind == "csv" && data.path.empty())
            throw ConfigError("data.kind=csv requires data.path");
        if (data.split != "ratio_7_1_2" && data.split != "ett_8_4_4_months" &&
            data.split != "custom")
            throw ConfigError("unknown data.split: " + data.split);
        if (data.window_stride < 1) throw ConfigError("data.window_stride must be >= 1");
    }

    SplitSpec split_spec() const {
        if (data.split == "ratio_7_1_2") return SplitSpec::ratio_7_1_2();
        if (data.split == "ett_8_4_4_months") return SplitSpec::ett_months(data.rows_per_month);
        return SplitSpec::custom(data.train_frac, data.val_frac);
    }

    // Every dotted key is settable from config files and CLI flags alike.
    void apply(const std::string& key, const std::string& value);
    static const std::vector<std::string>& known_keys();
};

namespace detail {

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        return std::stoull(v);
    } catch (...) {
        throw ConfigError("invalid integer for " + key + ": '" + v + "'");
    }
}

inline double parse_f64(const std::string& key, const std::string& v) {
    try {
        return std::stod(v);
    } catch (...) {
        throw ConfigError("invalid number for " + key + ": '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("invalid boolean for " + key + ": '" + v + "'");
}

}  // namespace detail

inline void RunConfig::apply(const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_f64;
    using detail::parse_u64;
    if (key == "data.kind") data.kind = value;
    else if (key == "data.path") data.path = value;
    else if (key == "data.has_time_column") data.has_time_column = parse_bool(key, value);
    else if (key == "data.synth_kind") data.synth_kind = value;
    else if (key == "data.channels") data.channels = parse_u64(key, value);
    else if (key == "data.length") data.length = parse_u64(key, value);
    else if (key == "data.noise_sigma") data.noise_sigma = parse_f64(key, value);
    else if (key == "data.split") data.split = value;
    else if (key == "data.train_frac") data.train_frac = parse_f64(key, value);
    else if (key == "data.val_frac") data.val_frac = parse_f64(key, value);
    else if (key == "data.rows_per_month") data.rows_per_month = parse_u64(key, value);
    else if (key == "data.window_stride") data.window_stride = parse_u64(key, value);
    else if (key == "model.layers") model.layers = parse_u64(key, value);
    else if (key == "model.d_model") model.d_model = parse_u64(key, value);
    else if (key == "model.heads") model.heads = parse_u64(key, value);
    else if (key == "model.patch_size") model.patch_size = parse_u64(key, value);
    else if (key == "model.stride") model.stride = parse_u64(key, value);
    else if (key == "model.t_in") model.t_in = parse_u64(key, value);
    else if (key == "model.t_out") model.t_out = parse_u64(key, value);
    else if (key == "model.mlp_ratio") model.mlp_ratio = parse_f64(key, value);
    else if (key == "train.lr") train.lr = parse_f64(key, value);
    else if (key == "train.beta1") train.beta1 = parse_f64(key, value);
    else if (key == "train.beta2") train.beta2 = parse_f64(key, value);
    else if (key == "train.eps") train.eps = parse_f64(key, value);
    else if (key == "train.weight_decay") train.weight_decay = parse_f64(key, value);
    else if (key == "train.batch_size") train.batch_size = parse_u64(key, value);
    else if (key == "train.max_epochs") train.max_epochs = parse_u64(key, value);
    else if (key == "train.patience") train.patience = parse_u64(key, value);
    else if (key == "train.clip_norm") train.clip_norm = parse_f64(key, value);
    else if (key == "train.lr_floor_frac") train.lr_floor_frac = parse_f64(key, value);
    else if (key == "importance.decay_factor") importance.decay_factor = parse_f64(key, value);
    else if (key == "importance.preceding_layers")
        importance.preceding_layers = parse_u64(key, value);
    else if (key == "importance.tau_pct") importance.tau_pct = parse_f64(key, value);
    else if (key == "importance.top_pct") importance.top_pct = parse_f64(key, value);
    else if (key == "importance.cum_pct") importance.cum_pct = parse_f64(key, value);
    else if (key == "importance.preset") {
        if (value == "family") {
            importance.tau_pct = 80;
            importance.top_pct = 50;
            importance.cum_pct = 85;
        } else if (value == "external") {
            importance.tau_pct = 80;
            importance.top_pct = 50;
            importance.cum_pct = 90;
        } else {
            throw ConfigError("unknown importance.preset: " + value);
        }
    } else if (key == "seed") {
        seed = parse_u64(key, value);
        model.seed = seed;
        train.seed = seed;
    } else if (key == "batch_limit") batch_limit = parse_u64(key, value);
    else if (key == "batch_size") batch_size = parse_u64(key, value);
    else if (key == "speedup_runs") speedup_runs = parse_u64(key, value);
    else if (key == "project_windows") project_windows = parse_u64(key, value);
    else
        throw ConfigError("unknown configuration key: " + key);
}

inline const std::vector<std::string>& RunConfig::known_keys() {
    static const std::vector<std::string> keys = {
        "data.kind", "data.path", "data.has_time_column", "data.synth_kind", "data.channels",
        "data.length", "data.noise_sigma", "data.split", "data.train_frac", "data.val_frac",
        "data.rows_per_month", "data.window_stride",
        "model.layers", "model.d_model", "model.heads", "model.patch_size", "model.stride",
        "model.t_in", "model.t_out", "model.mlp_ratio",
        "train.lr", "train.beta1", "train.beta2", "train.eps", "train.weight_decay",
        "train.batch_size", "train.max_epochs", "train.patience", "train.clip_norm",
        "train.lr_floor_frac",
        "importance.decay_factor", "importance.preceding_layers", "importance.tau_pct",
        "importance.top_pct", "importance.cum_pct", "importance.preset",
        "seed", "batch_limit", "batch_size", "speedup_runs", "project_windows"};
    return keys;
}

// Flat key-value config file: `section.key = value`, '#' comments.
inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              " is not a key = value pair");
        cfg.apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

}  // namespace dscope
