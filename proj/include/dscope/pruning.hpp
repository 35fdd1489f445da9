#pragma once

#include <algorithm>
#include <chrono>
#include <map>
#include <numeric>
#include <set>
#include <string>

#include "dscope/analysis.hpp"
#include "dscope/model.hpp"

namespace dscope {

// Ordered retention set with the criterion that admitted each layer. Layer
// ids are always original ids, so plans compose across already-pruned models.
struct PruningPlan {
    std::vector<int> retained;  // strictly increasing, includes first and last
    std::vector<int> exempt;    // {first, last}
    std::map<int, std::string> criteria;  // id -> exempt | cum_pct | top_pct | random
    ImportanceConfig config;
    std::string report_digest;

    std::size_t interior_count() const { return retained.size() - exempt.size(); }
};

// Retention-set construction per protocol: walk the importance ranking in
// descending score, admitting layers until the cumulative share of the total
// gated score first exceeds cum_pct (the primary criterion); if that admits
// more than top_pct% of the interior layers, truncate to that cap. First and
// last layers are always exempt from selection and retained.
inline PruningPlan select_layers(const ImportanceReport& report, const ImportanceConfig& cfg) {
    cfg.validate();
    if (report.per_layer.size() < 2)
        throw ConfigError("select_layers: report must cover at least 2 layers");
    const int first = report.per_layer.front().layer_id;
    const int last = report.per_layer.back().layer_id;
    const std::size_t n_interior = report.per_layer.size() - 2;

    PruningPlan plan;
    plan.config = cfg;
    plan.report_digest = report_digest(report);
    plan.exempt = {first, last};
    plan.criteria[first] = "exempt";
    plan.criteria[last] = "exempt";

    if (n_interior > 0) {
        if (report.ranking.empty())
            throw ConfigError("select_layers: report has an empty ranking");
        std::map<int, double> score;
        for (const auto& li : report.per_layer) score[li.layer_id] = li.score;
        double total = 0;
        for (int id : report.ranking) total += score[id];

        std::vector<int> admitted;
        if (total > 0) {
            double cum = 0;
            for (int id : report.ranking) {
                admitted.push_back(id);
                cum += score[id] / total;
                if (cum > cfg.cum_pct / 100.0 + 1e-12) break;
            }
        }
        const auto cap = static_cast<std::size_t>(
            std::ceil(cfg.top_pct / 100.0 * static_cast<double>(n_interior) - 1e-9));
        const bool capped = admitted.size() > cap;
        if (capped) admitted.resize(cap);
        for (int id : admitted) plan.criteria[id] = capped ? "top_pct" : "cum_pct";
    }

    for (const auto& [id, rule] : plan.criteria) plan.retained.push_back(id);
    std::sort(plan.retained.begin(), plan.retained.end());
    return plan;
}

// Baseline: exempt layers plus n_interior uniformly sampled interior layers.
inline PruningPlan random_plan(const ForecastModel& model, std::size_t n_interior,
                               std::uint64_t seed) {
    if (model.depth() < 2) throw ConfigError("random_plan: model must have >= 2 layers");
    std::vector<int> interior(model.layer_ids.begin() + 1, model.layer_ids.end() - 1);
    if (n_interior > interior.size())
        throw ConfigError("random_plan: requested " + std::to_string(n_interior) +
                          " interior layers, model has " + std::to_string(interior.size()));
    auto rng = make_engine(derive_seed(seed, "random-plan"));
    std::shuffle(interior.begin(), interior.end(), rng);
    interior.resize(n_interior);

    PruningPlan plan;
    plan.exempt = {model.layer_ids.front(), model.layer_ids.back()};
    plan.criteria[plan.exempt[0]] = "exempt";
    plan.criteria[plan.exempt[1]] = "exempt";
    for (int id : interior) plan.criteria[id] = "random";
    for (const auto& [id, rule] : plan.criteria) plan.retained.push_back(id);
    std::sort(plan.retained.begin(), plan.retained.end());
    return plan;
}

inline PruningPlan retain_all_plan(const ForecastModel& model) {
    PruningPlan plan;
    plan.exempt = {model.layer_ids.front(), model.layer_ids.back()};
    for (int id : model.layer_ids) {
        plan.retained.push_back(id);
        plan.criteria[id] = (id == plan.exempt[0] || id == plan.exempt[1]) ? "exempt" : "cum_pct";
    }
    return plan;
}

// Structural removal: retained blocks in original order, everything outside
// the blocks (embedding, positions, head, final norm) copied verbatim.
inline ForecastModel prune_model(const ForecastModel& model, const PruningPlan& plan) {
    std::set<int> have(model.layer_ids.begin(), model.layer_ids.end());
    for (int id : plan.retained)
        if (!have.count(id))
            throw ConfigError("prune_model: plan retains layer " + std::to_string(id) +
                              " which the model does not have");
    std::set<int> keep(plan.retained.begin(), plan.retained.end());
    if (!keep.count(model.layer_ids.front()) || !keep.count(model.layer_ids.back()))
        throw ConfigError("prune_model: plan must retain the first and last layers");
    if (keep.size() < 2) throw ConfigError("prune_model: plan retains fewer than 2 layers");

    ForecastModel out;
    out.config = model.config;
    out.embed_w = model.embed_w;
    out.embed_b = model.embed_b;
    out.pos = model.pos;
    out.lnf_g = model.lnf_g;
    out.lnf_b = model.lnf_b;
    out.head_w = model.head_w;
    out.head_b = model.head_b;
    for (std::size_t l = 0; l < model.blocks.size(); ++l) {
        if (!keep.count(model.layer_ids[l])) continue;
        out.blocks.push_back(model.blocks[l]);
        out.layer_ids.push_back(model.layer_ids[l]);
    }
    out.config.layers = out.blocks.size();
    return out;
}

// ---------------------------------------------------------------------------
// Inference-speedup measurement
// ---------------------------------------------------------------------------

struct SpeedupResult {
    double t_orig_ms = 0;
    double t_pruned_ms = 0;
    double ratio = 0;
    std::size_t runs = 0;
};

namespace detail {

// One workload = a full pass over the window set, f32, single thread.
inline double time_model_ms(const ForecastModelT<float>& m, const TensorT<float>& inputs,
                            std::size_t batch_size, std::size_t runs, std::size_t warmup) {
    const std::size_t N = inputs.extent(0);
    const std::size_t per = inputs.size() / N;
    volatile float sink = 0;
    auto run_once = [&] {
        float acc = 0;
        for (std::size_t b = 0; b < N; b += batch_size) {
            const std::size_t e = std::min(N, b + batch_size);
            std::vector<float> buf(inputs.data() + b * per, inputs.data() + e * per);
            Shape shape = inputs.shape();
            shape[0] = e - b;
            TensorT<float> x(std::move(shape), std::move(buf));
            auto res = forward(m, x);
            acc += res.forecast[0];
        }
        sink = sink + acc;
    };
    for (std::size_t i = 0; i < warmup; ++i) run_once();
    std::vector<double> samples(runs);
    for (std::size_t i = 0; i < runs; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        run_once();
        auto t1 = std::chrono::steady_clock::now();
        samples[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    std::nth_element(samples.begin(), samples.begin() + samples.size() / 2, samples.end());
    return samples[samples.size() / 2];
}

}  // namespace detail

// Median single-thread wall clock of full-window-set forward passes in f32,
// with warmup runs excluded; ratio = t_original / t_pruned.
inline SpeedupResult measure_speedup(const ForecastModel& original, const ForecastModel& pruned,
                                     const WindowSet& windows, std::size_t runs,
                                     std::size_t batch_size = 64) {
    if (runs < 30) throw ConfigError("measure_speedup: needs at least 30 timed runs");
    if (windows.count() == 0) throw ConfigError("measure_speedup: empty window set");
    const std::size_t warmup = 5;
    auto orig32 = cast_model<float>(original);
    auto pruned32 = cast_model<float>(pruned);
    auto inputs = windows.inputs.cast<float>();
    SpeedupResult r;
    r.runs = runs;
    r.t_orig_ms = detail::time_model_ms(orig32, inputs, batch_size, runs, warmup);
    r.t_pruned_ms = detail::time_model_ms(pruned32, inputs, batch_size, runs, warmup);
    if (r.t_orig_ms < 1.0 || r.t_pruned_ms < 1.0)
        throw ConfigError("measure_speedup: median run under 1 ms; increase the workload");
    r.ratio = r.t_orig_ms / r.t_pruned_ms;
    return r;
}

}  // namespace dscope
