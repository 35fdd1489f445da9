// dscope: train, analyze, prune, evaluate and dump desk-scale time-series
// forecasting transformers, with critical-layer identification.
//
// Exit codes: 0 success, 1 numeric/pipeline failure, 2 usage/config error.

#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "dscope/commands.hpp"

namespace {

struct CommonOpts {
    std::string config_file;
    std::string out_dir = "out";
    std::vector<std::pair<std::string, std::string>> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_file, "key = value configuration file");
    cmd->add_option("--out", opts.out_dir, "output directory")->capture_default_str();
    for (const auto& key : dscope::RunConfig::known_keys()) {
        cmd->add_option_function<std::string>(
            "--" + key,
            [&opts, key](const std::string& v) { opts.overrides.emplace_back(key, v); },
            "override config key " + key);
    }
}

dscope::RunConfig resolve(const CommonOpts& opts) {
    dscope::RunConfig cfg;
    if (!opts.config_file.empty()) cfg = dscope::load_config_file(opts.config_file);
    for (const auto& [k, v] : opts.overrides) cfg.apply(k, v);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"critical-layer analysis and depth pruning for time-series transformers"};
    app.require_subcommand(1);

    CommonOpts train_opts;
    auto* train_cmd = app.add_subcommand("train", "train a forecaster and write a checkpoint");
    add_common(train_cmd, train_opts);

    CommonOpts analyze_opts;
    std::string analyze_checkpoint, analyze_dump;
    auto* analyze_cmd =
        app.add_subcommand("analyze", "compute per-layer importance metrics and ranking");
    add_common(analyze_cmd, analyze_opts);
    analyze_cmd->add_option("--checkpoint", analyze_checkpoint, "model checkpoint (.dsck)");
    analyze_cmd->add_option("--dump", analyze_dump, "layer trace dump (.ltrc)");

    CommonOpts prune_opts;
    std::string prune_checkpoint, prune_report;
    bool no_finetune = false, random_baseline = false, retain_all = false;
    auto* prune_cmd =
        app.add_subcommand("prune", "prune to the critical layers and fine-tune (default on)");
    add_common(prune_cmd, prune_opts);
    prune_cmd->add_option("--checkpoint", prune_checkpoint, "model checkpoint (.dsck)")
        ->required();
    prune_cmd->add_option("--report", prune_report,
                          "importance report JSON (computed from the checkpoint if omitted)");
    prune_cmd->add_flag("--no-finetune", no_finetune, "skip post-prune fine-tuning");
    prune_cmd->add_flag("--random-baseline", random_baseline,
                        "also evaluate a random plan of equal size");
    prune_cmd->add_flag("--retain-all", retain_all, "identity plan (no layers removed)");

    CommonOpts eval_opts;
    std::string eval_checkpoint, eval_scale = "standardized", eval_split = "test";
    auto* eval_cmd = app.add_subcommand("eval", "forecast accuracy metrics");
    add_common(eval_cmd, eval_opts);
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "model checkpoint (.dsck)")->required();
    eval_cmd->add_option("--scale", eval_scale, "standardized | raw")->capture_default_str();
    eval_cmd->add_option("--split", eval_split, "train | val | test")->capture_default_str();

    CommonOpts project_opts;
    std::string project_checkpoint, project_layers = "all";
    auto* project_cmd =
        app.add_subcommand("project", "project per-layer hidden states through the head");
    add_common(project_cmd, project_opts);
    project_cmd->add_option("--checkpoint", project_checkpoint, "model checkpoint (.dsck)")
        ->required();
    project_cmd->add_option("--layers", project_layers, "comma-separated state indices or 'all'")
        ->capture_default_str();

    CommonOpts dump_opts;
    std::string dump_checkpoint;
    auto* dump_cmd = app.add_subcommand("dump", "write a binary layer-trace dump");
    add_common(dump_cmd, dump_opts);
    dump_cmd->add_option("--checkpoint", dump_checkpoint, "model checkpoint (.dsck)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (*train_cmd) return dscope::cmd_train(resolve(train_opts), train_opts.out_dir);
        if (*analyze_cmd)
            return dscope::cmd_analyze(resolve(analyze_opts), analyze_checkpoint, analyze_dump,
                                       analyze_opts.out_dir);
        if (*prune_cmd) {
            dscope::PruneFlags flags;
            flags.finetune = !no_finetune;
            flags.random_baseline = random_baseline;
            flags.retain_all = retain_all;
            return dscope::cmd_prune(resolve(prune_opts), prune_checkpoint, prune_report, flags,
                                     prune_opts.out_dir);
        }
        if (*eval_cmd) {
            dscope::EvalScale scale;
            if (eval_scale == "standardized") scale = dscope::EvalScale::standardized;
            else if (eval_scale == "raw") scale = dscope::EvalScale::raw;
            else throw dscope::ConfigError("unknown scale: " + eval_scale);
            dscope::Split split;
            if (eval_split == "train") split = dscope::Split::train;
            else if (eval_split == "val") split = dscope::Split::val;
            else if (eval_split == "test") split = dscope::Split::test;
            else throw dscope::ConfigError("unknown split: " + eval_split);
            return dscope::cmd_eval(resolve(eval_opts), eval_checkpoint, scale, split,
                                    eval_opts.out_dir);
        }
        if (*project_cmd)
            return dscope::cmd_project(resolve(project_opts), project_checkpoint, project_layers,
                                       project_opts.out_dir);
        if (*dump_cmd)
            return dscope::cmd_dump(resolve(dump_opts), dump_checkpoint, dump_opts.out_dir);
    } catch (const dscope::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
