#pragma once

#include <chrono>
#include <filesystem>
#include <iostream>

#include "dscope/checkpoint.hpp"
#include "dscope/config.hpp"
#include "dscope/report.hpp"
#include "dscope/trace_dump.hpp"

namespace dscope {

namespace fs = std::filesystem;

struct DataBundle {
    TimeSeriesDataset dataset;
    WindowSet train, val, test;
};

inline DataBundle load_data(const RunConfig& cfg) {
    TimeSeriesDataset ds;
    if (cfg.data.kind == "csv") {
        ds = load_csv(cfg.data.path, cfg.data.has_time_column);
    } else {
        SynthSpec spec;
        spec.kind = SynthSpec::kind_from_string(cfg.data.synth_kind);
        spec.channels = cfg.data.channels;
        spec.length = cfg.data.length;
        spec.seed = cfg.seed;
        spec.noise_sigma = cfg.data.noise_sigma;
        ds = synth_generate(spec);
    }
    ds = split_chronological(std::move(ds), cfg.split_spec());
    DataBundle b;
    b.train = make_windows(ds, Split::train, cfg.model.t_in, cfg.model.t_out,
                           cfg.data.window_stride);
    b.val = make_windows(ds, Split::val, cfg.model.t_in, cfg.model.t_out, cfg.data.window_stride);
    b.test =
        make_windows(ds, Split::test, cfg.model.t_in, cfg.model.t_out, cfg.data.window_stride);
    b.dataset = std::move(ds);
    return b;
}

namespace detail {

// Timestamps live only in this sidecar so every other output is byte-stable
// for a fixed seed.
inline void write_run_meta(const fs::path& out_dir, const std::string& command, double secs) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    ojson meta{{"command", command}, {"finished_at", stamp}, {"duration_s", secs}};
    write_text_file(out_dir / "run_meta.json", meta.dump(2) + "\n");
}

struct Stopwatch {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

inline ImportanceConfig importance_with_k(const RunConfig& cfg) { return cfg.importance; }

}  // namespace detail

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline int cmd_train(const RunConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    detail::Stopwatch watch;
    fs::create_directories(out_dir);
    DataBundle data = load_data(cfg);
    ForecastModel model = init_model(cfg.model);
    TrainResult result = train(model, data.train, data.val, cfg.train);
    write_text_file(out_dir / "history.jsonl", history_jsonl(result.history));
    save_checkpoint((out_dir / "model.dsck").string(), model);
    detail::write_run_meta(out_dir, "train", watch.seconds());
    if (result.diverged) {
        std::cerr << "error: training diverged (non-finite validation loss); "
                  << "history written to " << (out_dir / "history.jsonl") << "\n";
        return 1;
    }
    std::cout << "trained " << cfg.model.layers << "-layer model on " << data.dataset.name
              << ": best val MSE " << result.best_val << " (epoch " << result.best_epoch
              << "), checkpoint " << (out_dir / "model.dsck") << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

inline ImportanceReport analyze_checkpoint(const RunConfig& cfg, const std::string& checkpoint) {
    ForecastModel model = load_checkpoint(checkpoint);
    DataBundle data = load_data(cfg);
    TraceMetrics metrics = collect_trace(model, data.val, cfg.batch_limit,
                                         cfg.importance.preceding_layers, cfg.batch_size);
    return importance_scores(metrics, cfg.importance);
}

inline ImportanceReport analyze_dump(const RunConfig& cfg, const std::string& dump_path) {
    LayerTraceT<float> trace = read_trace_dump(dump_path);
    TraceMetrics metrics = trace_metrics_from(trace, cfg.importance.preceding_layers);
    return importance_scores(metrics, cfg.importance);
}

inline int cmd_analyze(const RunConfig& cfg, const std::string& checkpoint,
                       const std::string& dump_path, const fs::path& out_dir) {
    detail::Stopwatch watch;
    if (checkpoint.empty() == dump_path.empty())
        throw ConfigError("analyze needs exactly one of --checkpoint or --dump");
    fs::create_directories(out_dir);
    ImportanceReport report = checkpoint.empty() ? analyze_dump(cfg, dump_path)
                                                 : analyze_checkpoint(cfg, checkpoint);
    write_text_file(out_dir / "importance.json", to_json(report).dump(2) + "\n");
    detail::write_run_meta(out_dir, "analyze", watch.seconds());
    for (const auto& w : report.warnings) std::cout << "warning: " << w << "\n";
    std::cout << "importance report for " << report.per_layer.size() << " layers written to "
              << (out_dir / "importance.json") << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// prune (finetune on by default)
// ---------------------------------------------------------------------------

struct PruneFlags {
    bool finetune = true;
    bool random_baseline = false;
    bool retain_all = false;
};

inline int cmd_prune(const RunConfig& cfg, const std::string& checkpoint,
                     const std::string& report_path, const PruneFlags& flags,
                     const fs::path& out_dir) {
    cfg.validate();
    detail::Stopwatch watch;
    fs::create_directories(out_dir);
    ForecastModel original = load_checkpoint(checkpoint);
    DataBundle data = load_data(cfg);

    PruningPlan plan;
    if (flags.retain_all) {
        plan = retain_all_plan(original);
    } else {
        ImportanceReport report =
            report_path.empty()
                ? analyze_checkpoint(cfg, checkpoint)
                : importance_report_from_json(ojson::parse(read_text_file(report_path)));
        plan = select_layers(report, cfg.importance);
    }

    ForecastModel pruned = prune_model(original, plan);
    if (flags.finetune && !flags.retain_all) finetune(pruned, data.train, data.val, cfg.train);

    EvalResult orig_eval = evaluate(original, data.test, EvalScale::standardized);
    EvalResult pruned_eval = evaluate(pruned, data.test, EvalScale::standardized);
    SpeedupResult speed = measure_speedup(original, pruned, data.val, cfg.speedup_runs,
                                          cfg.batch_size);

    const double layer_ratio =
        static_cast<double>(pruned.depth()) / static_cast<double>(original.depth());
    const double param_ratio = static_cast<double>(count_parameters(pruned)) /
                               static_cast<double>(count_parameters(original));

    ojson comparison{{"original", ojson{{"mae", orig_eval.mae},
                                        {"mse", orig_eval.mse},
                                        {"layers", original.depth()},
                                        {"parameters", count_parameters(original)}}},
                     {"pruned", ojson{{"mae", pruned_eval.mae},
                                      {"mse", pruned_eval.mse},
                                      {"layers", pruned.depth()},
                                      {"parameters", count_parameters(pruned)},
                                      {"finetuned", flags.finetune && !flags.retain_all}}},
                     {"efficiency_ratio", speed.ratio},
                     {"t_orig_ms", speed.t_orig_ms},
                     {"t_pruned_ms", speed.t_pruned_ms},
                     {"layer_ratio", layer_ratio},
                     {"parameter_ratio", param_ratio},
                     {"plan", to_json(plan)}};

    if (flags.random_baseline) {
        PruningPlan rplan = random_plan(original, plan.interior_count(), cfg.seed);
        ForecastModel rmodel = prune_model(original, rplan);
        if (flags.finetune && !flags.retain_all) finetune(rmodel, data.train, data.val, cfg.train);
        EvalResult reval = evaluate(rmodel, data.test, EvalScale::standardized);
        comparison["random"] = ojson{{"mae", reval.mae},
                                     {"mse", reval.mse},
                                     {"layers", rmodel.depth()},
                                     {"retained", rplan.retained}};
        save_checkpoint((out_dir / "random_pruned.dsck").string(), rmodel);
    }

    save_checkpoint((out_dir / "pruned.dsck").string(), pruned);
    write_text_file(out_dir / "plan.json", to_json(plan).dump(2) + "\n");
    write_text_file(out_dir / "comparison.json", comparison.dump(2) + "\n");
    detail::write_run_meta(out_dir, "prune", watch.seconds());
    std::cout << "retained " << pruned.depth() << "/" << original.depth() << " layers; test MSE "
              << pruned_eval.mse << " (original " << orig_eval.mse << "), efficiency "
              << speed.ratio << "x\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, EvalScale scale,
                    Split split, const fs::path& out_dir) {
    detail::Stopwatch watch;
    fs::create_directories(out_dir);
    ForecastModel model = load_checkpoint(checkpoint);
    DataBundle data = load_data(cfg);
    const WindowSet& w = split == Split::train ? data.train
                         : split == Split::val ? data.val
                                               : data.test;
    EvalResult r = evaluate(model, w, scale, &data.dataset.norm, cfg.batch_size);
    ojson out = to_json(r);
    out["split"] = split_name(split);
    write_text_file(out_dir / "eval.json", out.dump(2) + "\n");
    detail::write_run_meta(out_dir, "eval", watch.seconds());
    std::cout << split_name(split) << " " << eval_scale_name(scale) << ": MAE " << r.mae
              << ", MSE " << r.mse << " over " << r.n_windows << " windows\n";
    return 0;
}

// ---------------------------------------------------------------------------
// project: per-layer forecasts through the prediction head
// ---------------------------------------------------------------------------

inline int cmd_project(const RunConfig& cfg, const std::string& checkpoint,
                       const std::string& layers_arg, const fs::path& out_dir) {
    detail::Stopwatch watch;
    fs::create_directories(out_dir);
    ForecastModel model = load_checkpoint(checkpoint);
    DataBundle data = load_data(cfg);
    const std::size_t n_windows = std::min<std::size_t>(cfg.project_windows, data.test.count());
    if (n_windows == 0) throw ConfigError("project: no test windows available");
    std::vector<std::size_t> ident(n_windows);
    std::iota(ident.begin(), ident.end(), 0);
    Tensor x = detail::gather_windows(data.test.inputs, ident, 0, n_windows);
    Tensor truth = detail::gather_windows(data.test.targets, ident, 0, n_windows);
    auto res = forward(model, x, /*capture=*/true);
    const std::size_t n_states = res.trace->states();

    std::vector<std::size_t> states;
    if (layers_arg == "all") {
        for (std::size_t s = 0; s < n_states; ++s) states.push_back(s);
    } else {
        std::stringstream ss(layers_arg);
        std::string item;
        while (std::getline(ss, item, ',')) {
            std::size_t v;
            try {
                v = std::stoull(item);
            } catch (...) {
                throw ConfigError("project: invalid layer index '" + item + "'");
            }
            if (v >= n_states)
                throw ConfigError("project: layer " + std::to_string(v) +
                                  " out of range (states 0.." + std::to_string(n_states - 1) +
                                  ")");
            states.push_back(v);
        }
        if (states.empty()) throw ConfigError("project: empty layer list");
    }

    for (std::size_t s : states) {
        Tensor proj = project_hidden_to_series(model, *res.trace, s);
        std::ostringstream csv;
        csv << "window,step,channel,prediction,truth\n";
        const std::size_t T = proj.extent(1), V = proj.extent(2);
        for (std::size_t w = 0; w < n_windows; ++w)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t v = 0; v < V; ++v) {
                    csv << w << ',' << t << ',' << v << ',';
                    char buf[64];
                    std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", proj.at({w, t, v}),
                                  truth.at({w, t, v}));
                    csv << buf;
                }
        write_text_file(out_dir / ("project_layer" + std::to_string(s) + ".csv"), csv.str());
    }
    detail::write_run_meta(out_dir, "project", watch.seconds());
    std::cout << "wrote " << states.size() << " projection CSV(s) to " << out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// dump: binary layer trace for external analysis
// ---------------------------------------------------------------------------

inline int cmd_dump(const RunConfig& cfg, const std::string& checkpoint, const fs::path& out_dir) {
    detail::Stopwatch watch;
    fs::create_directories(out_dir);
    ForecastModel model = load_checkpoint(checkpoint);
    DataBundle data = load_data(cfg);
    const std::size_t n = std::min<std::size_t>(cfg.batch_size, data.val.count());
    std::vector<std::size_t> ident(n);
    std::iota(ident.begin(), ident.end(), 0);
    Tensor x = detail::gather_windows(data.val.inputs, ident, 0, n);
    auto res = forward(model, x, /*capture=*/true);
    write_trace_dump((out_dir / "trace.ltrc").string(), *res.trace);
    detail::write_run_meta(out_dir, "dump", watch.seconds());
    std::cout << "wrote trace of " << res.trace->attn.size() << " layers x "
              << res.trace->hidden[0].extent(0) << " instances to " << (out_dir / "trace.ltrc")
              << "\n";
    return 0;
}

}  // namespace dscope
