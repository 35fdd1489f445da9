#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "dscope/analysis.hpp"
#include "dscope/metrics.hpp"
#include "dscope/pruning.hpp"
#include "dscope/train.hpp"

namespace dscope {

using ojson = nlohmann::ordered_json;

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << text;
    if (!out) throw FormatError("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline ojson to_json(const ImportanceConfig& cfg) {
    return ojson{{"decay_factor", cfg.decay_factor},
                 {"preceding_layers", cfg.preceding_layers},
                 {"tau_pct", cfg.tau_pct},
                 {"top_pct", cfg.top_pct},
                 {"cum_pct", cfg.cum_pct}};
}

inline ImportanceConfig importance_config_from_json(const ojson& j) {
    ImportanceConfig cfg;
    cfg.decay_factor = j.at("decay_factor").get<double>();
    cfg.preceding_layers = j.at("preceding_layers").get<std::size_t>();
    cfg.tau_pct = j.at("tau_pct").get<double>();
    cfg.top_pct = j.at("top_pct").get<double>();
    cfg.cum_pct = j.at("cum_pct").get<double>();
    return cfg;
}

inline ojson to_json(const ImportanceReport& r) {
    ojson per_layer = ojson::array();
    for (const auto& li : r.per_layer) {
        per_layer.push_back(ojson{{"layer_id", li.layer_id},
                                  {"dist", li.dist},
                                  {"sim_prev", li.sim_prev},
                                  {"head_sim", li.head_sim},
                                  {"redundancy", li.redundancy},
                                  {"entropy", li.entropy},
                                  {"score", li.score},
                                  {"gated", li.gated},
                                  {"exempt", li.exempt},
                                  {"flags",
                                   ojson{{"zero_norm_sim", li.sim_flag},
                                         {"single_head", li.head_flag},
                                         {"negative_sim", li.negative_sim}}}});
    }
    return ojson{{"config", to_json(r.config)},
                 {"entropy_log_base", "e"},
                 {"per_layer", per_layer},
                 {"ranking", r.ranking},
                 {"tau_gate_set", r.tau_gate_set},
                 {"batch_count", r.batch_count},
                 {"sample_count", r.sample_count},
                 {"num_patches", r.num_patches},
                 {"warnings", r.warnings}};
}

inline ImportanceReport importance_report_from_json(const ojson& j) {
    ImportanceReport r;
    r.config = importance_config_from_json(j.at("config"));
    for (const auto& e : j.at("per_layer")) {
        LayerImportance li;
        li.layer_id = e.at("layer_id").get<int>();
        li.dist = e.at("dist").get<double>();
        li.sim_prev = e.at("sim_prev").get<double>();
        li.head_sim = e.at("head_sim").get<double>();
        li.redundancy = e.at("redundancy").get<double>();
        li.entropy = e.at("entropy").get<double>();
        li.score = e.at("score").get<double>();
        li.gated = e.at("gated").get<bool>();
        li.exempt = e.at("exempt").get<bool>();
        const auto& f = e.at("flags");
        li.sim_flag = f.at("zero_norm_sim").get<bool>();
        li.head_flag = f.at("single_head").get<bool>();
        li.negative_sim = f.at("negative_sim").get<bool>();
        r.per_layer.push_back(li);
    }
    r.ranking = j.at("ranking").get<std::vector<int>>();
    r.tau_gate_set = j.at("tau_gate_set").get<std::vector<int>>();
    r.batch_count = j.at("batch_count").get<std::size_t>();
    r.sample_count = j.at("sample_count").get<std::size_t>();
    r.num_patches = j.at("num_patches").get<std::size_t>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
}

inline ojson to_json(const PruningPlan& p) {
    ojson criteria = ojson::object();
    for (const auto& [id, rule] : p.criteria) criteria[std::to_string(id)] = rule;
    return ojson{{"retained", p.retained},
                 {"exempt", p.exempt},
                 {"criteria", criteria},
                 {"config", to_json(p.config)},
                 {"report_digest", p.report_digest}};
}

inline PruningPlan plan_from_json(const ojson& j) {
    PruningPlan p;
    p.retained = j.at("retained").get<std::vector<int>>();
    p.exempt = j.at("exempt").get<std::vector<int>>();
    for (const auto& [key, value] : j.at("criteria").items())
        p.criteria[std::stoi(key)] = value.get<std::string>();
    p.config = importance_config_from_json(j.at("config"));
    p.report_digest = j.at("report_digest").get<std::string>();
    return p;
}

inline ojson to_json(const EvalResult& r) {
    return ojson{{"mae", r.mae},
                 {"mse", r.mse},
                 {"mape_pct", r.mape},
                 {"mape_skipped", r.mape_skipped},
                 {"scale", eval_scale_name(r.scale)},
                 {"n_windows", r.n_windows}};
}

inline ojson to_json(const SpeedupResult& r) {
    return ojson{{"t_orig_ms", r.t_orig_ms},
                 {"t_pruned_ms", r.t_pruned_ms},
                 {"ratio", r.ratio},
                 {"runs", r.runs}};
}

inline std::string history_jsonl(const std::vector<EpochStats>& history) {
    std::string out;
    for (const auto& e : history) {
        ojson line{{"epoch", e.epoch},
                   {"train_mse", e.train_mse},
                   {"val_mse", e.val_mse},
                   {"lr", e.lr}};
        out += line.dump();
        out += '\n';
    }
    return out;
}

}  // namespace dscope
