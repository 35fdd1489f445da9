#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <string>
#include <vector>

#include "dscope/model.hpp"
#include "dscope/train.hpp"

namespace dscope {

struct ImportanceConfig {
    double decay_factor = 0.5;         // geometric decay of preceding-layer weights
    std::size_t preceding_layers = 3;  // K
    double tau_pct = 80.0;             // distance gate: top tau% of interior layers by dist
    double top_pct = 50.0;             // retention cap on interior layers
    double cum_pct = 85.0;             // cumulative score mass threshold

    void validate() const {
        if (decay_factor <= 0 || decay_factor >= 1)
            throw ConfigError("decay_factor must lie in (0,1)");
        if (preceding_layers < 1) throw ConfigError("preceding_layers must be >= 1");
        for (double p : {tau_pct, top_pct, cum_pct})
            if (p <= 0 || p > 100) throw ConfigError("percentages must lie in (0,100]");
    }
};

namespace detail {

template <typename S>
inline double dot_d(const S* a, const S* b, std::size_t n) {
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i)
        acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

template <typename S>
inline double dist_d(const S* a, const S* b, std::size_t n) {
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return std::sqrt(acc);
}

// Cosine between flattened vectors; zero-norm operands yield 0 with a flag.
template <typename S>
inline double cosine_d(const S* a, const S* b, std::size_t n, bool& flagged) {
    const double na = std::sqrt(dot_d(a, a, n));
    const double nb = std::sqrt(dot_d(b, b, n));
    if (na == 0.0 || nb == 0.0) {
        flagged = true;
        return 0.0;
    }
    return dot_d(a, b, n) / (na * nb);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Single-trace metrics (averaged over the batch with equal sample weight)
// ---------------------------------------------------------------------------

struct InterLayerMetric {
    double dist;
    double sim_prev;
    bool flagged;
};

// Eq.-2 style shifts per block: hidden states flattened per sample over the
// (patch, width) axes; Euclidean distance and cosine of (output, input),
// averaged over the batch.
template <typename S>
std::vector<InterLayerMetric> inter_layer_metrics(const LayerTraceT<S>& trace) {
    if (trace.states() < 2) throw ConfigError("inter_layer_metrics: trace needs >= 2 states");
    const std::size_t B = trace.hidden[0].extent(0);
    const std::size_t n = trace.hidden[0].size() / B;
    std::vector<InterLayerMetric> out;
    for (std::size_t l = 0; l + 1 < trace.states(); ++l) {
        const S* in = trace.hidden[l].data();
        const S* outp = trace.hidden[l + 1].data();
        double dist = 0, sim = 0;
        bool flagged = false;
        for (std::size_t s = 0; s < B; ++s) {
            dist += detail::dist_d(outp + s * n, in + s * n, n);
            sim += detail::cosine_d(outp + s * n, in + s * n, n, flagged);
        }
        out.push_back({dist / static_cast<double>(B), sim / static_cast<double>(B), flagged});
    }
    return out;
}

// Mean pairwise cosine of flattened per-head attention maps within one block
// (2/(H(H-1)) sum over unordered pairs), averaged over the batch. A single
// head has no pairs: defined as 0 with the flag set.
template <typename S>
double head_similarity(const LayerTraceT<S>& trace, std::size_t block, bool* flag = nullptr) {
    const auto& a = trace.attn.at(block);
    const std::size_t B = a.extent(0), H = a.extent(1), n = a.extent(2) * a.extent(3);
    if (H < 2) {
        if (flag) *flag = true;
        return 0.0;
    }
    const S* p = a.data();
    bool flagged = false;
    double total = 0;
    for (std::size_t s = 0; s < B; ++s) {
        double pair_sum = 0;
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = i + 1; j < H; ++j)
                pair_sum += detail::cosine_d(p + (s * H + i) * n, p + (s * H + j) * n, n, flagged);
        total += pair_sum * 2.0 / (static_cast<double>(H) * static_cast<double>(H - 1));
    }
    if (flag) *flag = flagged;
    return total / static_cast<double>(B);
}

// Decayed-weight redundancy of block `block`: weighted cosine similarity of
// its output to the K preceding states, weights alpha^k renormalized over the
// lags actually available.
template <typename S>
double redundancy(const LayerTraceT<S>& trace, std::size_t block, const ImportanceConfig& cfg) {
    cfg.validate();
    if (block + 1 >= trace.states())
        throw ConfigError("redundancy: block out of range");
    const std::size_t k_eff = std::min<std::size_t>(cfg.preceding_layers, block + 1);
    const std::size_t B = trace.hidden[0].extent(0);
    const std::size_t n = trace.hidden[0].size() / B;
    double wsum = 0;
    for (std::size_t k = 1; k <= k_eff; ++k) wsum += std::pow(cfg.decay_factor, static_cast<double>(k));
    double r = 0;
    const S* outp = trace.hidden[block + 1].data();
    for (std::size_t k = 1; k <= k_eff; ++k) {
        const S* prev = trace.hidden[block + 1 - k].data();
        bool flagged = false;
        double sim = 0;
        for (std::size_t s = 0; s < B; ++s)
            sim += detail::cosine_d(outp + s * n, prev + s * n, n, flagged);
        sim /= static_cast<double>(B);
        r += std::pow(cfg.decay_factor, static_cast<double>(k)) / wsum * sim;
    }
    return r;
}

// Mean attention entropy of one block: -sum p ln p per row (0 ln 0 := 0),
// averaged over rows, heads and batch. Natural log. Rows must sum to 1.
template <typename S>
double attention_entropy(const LayerTraceT<S>& trace, std::size_t block) {
    const auto& a = trace.attn.at(block);
    const std::size_t cols = a.extent(3);
    const std::size_t rows = a.size() / cols;
    const S* p = a.data();
    double total = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        double sum = 0, ent = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double v = static_cast<double>(p[r * cols + j]);
            sum += v;
            if (v > 0) ent -= v * std::log(v);
        }
        if (std::abs(sum - 1.0) > 1e-4)
            throw NumericError("attention row does not sum to 1 (got " + std::to_string(sum) +
                               ")");
        total += ent;
    }
    return total / static_cast<double>(rows);
}

// ---------------------------------------------------------------------------
// Batched collection
// ---------------------------------------------------------------------------

struct LayerStats {
    int layer_id = 0;
    double dist = 0;
    double sim_prev = 0;
    double head_sim = 0;
    double entropy = 0;
    std::vector<double> sim_lag;  // mean cosine to the k-th preceding state, k = 1..
    bool sim_flag = false;
    bool head_flag = false;
};

struct TraceMetrics {
    std::vector<LayerStats> layers;
    std::size_t batch_count = 0;
    std::size_t sample_count = 0;
    std::size_t num_patches = 0;
    std::size_t heads = 0;
};

namespace detail {

// Per-sample sums for one captured batch (not yet divided).
template <typename S>
void accumulate_trace(const LayerTraceT<S>& trace, std::size_t K, TraceMetrics& acc) {
    const std::size_t L = trace.attn.size();
    const std::size_t B = trace.hidden[0].extent(0);
    const std::size_t n = trace.hidden[0].size() / B;
    if (acc.layers.empty()) {
        acc.layers.resize(L);
        for (std::size_t l = 0; l < L; ++l) {
            acc.layers[l].layer_id =
                l < trace.layer_ids.size() ? trace.layer_ids[l] : static_cast<int>(l);
            acc.layers[l].sim_lag.assign(std::min<std::size_t>(K, l + 1), 0.0);
        }
        acc.num_patches = trace.hidden[0].extent(1);
        acc.heads = trace.attn.empty() ? 0 : trace.attn[0].extent(1);
    }
    if (acc.layers.size() != L) throw ConfigError("accumulate_trace: trace depth changed");

    for (std::size_t l = 0; l < L; ++l) {
        auto& st = acc.layers[l];
        const S* outp = trace.hidden[l + 1].data();
        for (std::size_t k = 1; k <= st.sim_lag.size(); ++k) {
            const S* prev = trace.hidden[l + 1 - k].data();
            for (std::size_t s = 0; s < B; ++s) {
                if (k == 1) st.dist += dist_d(outp + s * n, prev + s * n, n);
                st.sim_lag[k - 1] += cosine_d(outp + s * n, prev + s * n, n, st.sim_flag);
            }
        }
        // head similarity and entropy sums
        const auto& a = trace.attn[l];
        const std::size_t H = a.extent(1), an = a.extent(2) * a.extent(3);
        const S* ap = a.data();
        if (H < 2) {
            st.head_flag = true;
        } else {
            for (std::size_t s = 0; s < B; ++s) {
                double pair_sum = 0;
                for (std::size_t i = 0; i < H; ++i)
                    for (std::size_t j = i + 1; j < H; ++j)
                        pair_sum += cosine_d(ap + (s * H + i) * an, ap + (s * H + j) * an, an,
                                             st.head_flag);
                st.head_sim +=
                    pair_sum * 2.0 / (static_cast<double>(H) * static_cast<double>(H - 1));
            }
        }
        const std::size_t cols = a.extent(3);
        const std::size_t rows_per_sample = a.size() / (B * cols);
        for (std::size_t s = 0; s < B; ++s) {
            double ent = 0;
            for (std::size_t r = 0; r < rows_per_sample; ++r) {
                const S* row = ap + (s * rows_per_sample + r) * cols;
                double sum = 0;
                for (std::size_t j = 0; j < cols; ++j) {
                    const double v = static_cast<double>(row[j]);
                    sum += v;
                    if (v > 0) ent -= v * std::log(v);
                }
                if (std::abs(sum - 1.0) > 1e-4)
                    throw NumericError("attention row does not sum to 1");
            }
            st.entropy += ent / static_cast<double>(rows_per_sample);
        }
    }
    acc.batch_count += 1;
    acc.sample_count += B;
}

inline void finalize_trace_metrics(TraceMetrics& acc) {
    const double inv = 1.0 / static_cast<double>(acc.sample_count);
    for (auto& st : acc.layers) {
        st.dist *= inv;
        st.head_sim *= inv;
        st.entropy *= inv;
        for (auto& v : st.sim_lag) v *= inv;
        st.sim_prev = st.sim_lag.empty() ? 0.0 : st.sim_lag[0];
    }
}

}  // namespace detail

// Already-captured traces (e.g. loaded dumps) -> averaged metric inputs.
template <typename S>
TraceMetrics trace_metrics_from(const LayerTraceT<S>& trace, std::size_t K) {
    TraceMetrics acc;
    detail::accumulate_trace(trace, K, acc);
    detail::finalize_trace_metrics(acc);
    return acc;
}

// Runs capture-mode forwards over up to batch_limit validation batches and
// averages all metric inputs with equal per-sample weight.
inline TraceMetrics collect_trace(const ForecastModel& model, const WindowSet& windows,
                                  std::size_t batch_limit, std::size_t K,
                                  std::size_t batch_size = 64) {
    if (windows.count() == 0) throw ConfigError("collect_trace: empty window set");
    if (batch_limit == 0) throw ConfigError("collect_trace: batch_limit must be >= 1");
    TraceMetrics acc;
    std::vector<std::size_t> ident(windows.count());
    std::iota(ident.begin(), ident.end(), 0);
    std::size_t batches = 0;
    for (std::size_t b = 0; b < windows.count() && batches < batch_limit; b += batch_size) {
        const std::size_t e = std::min(windows.count(), b + batch_size);
        Tensor x = detail::gather_windows(windows.inputs, ident, b, e);
        auto res = forward(model, x, /*capture=*/true);
        detail::accumulate_trace(*res.trace, K, acc);
        ++batches;
    }
    detail::finalize_trace_metrics(acc);
    return acc;
}

// ---------------------------------------------------------------------------
// Importance scoring (distance gate + redundancy/head-similarity product)
// ---------------------------------------------------------------------------

struct LayerImportance {
    int layer_id = 0;
    double dist = 0;
    double sim_prev = 0;
    double head_sim = 0;
    double redundancy = 0;
    double entropy = 0;
    double score = 0;
    bool gated = false;
    bool exempt = false;
    bool sim_flag = false;
    bool head_flag = false;
    bool negative_sim = false;
};

struct ImportanceReport {
    ImportanceConfig config;
    std::vector<LayerImportance> per_layer;  // ordered by layer_id
    std::vector<int> ranking;                // gated layers, descending score
    std::vector<int> tau_gate_set;
    std::size_t batch_count = 0;
    std::size_t sample_count = 0;
    std::size_t num_patches = 0;
    std::vector<std::string> warnings;
};

namespace detail {

inline double weighted_redundancy(const LayerStats& st, const ImportanceConfig& cfg) {
    const std::size_t k_eff = st.sim_lag.size();
    if (k_eff == 0) return 0.0;
    double wsum = 0;
    for (std::size_t k = 1; k <= k_eff; ++k)
        wsum += std::pow(cfg.decay_factor, static_cast<double>(k));
    double r = 0;
    for (std::size_t k = 1; k <= k_eff; ++k)
        r += std::pow(cfg.decay_factor, static_cast<double>(k)) / wsum * st.sim_lag[k - 1];
    return r;
}

}  // namespace detail

// Scores interior layers only (first and last are exempt by protocol):
// I = (1 - R)(1 - s_bar) inside the top-tau%-by-distance gate, 0 outside.
// Ranking is descending by score with ties broken by larger distance, then
// smaller layer id. Scores are clamped to [0, 2]; negative similarities are
// kept but flagged.
inline ImportanceReport importance_scores(const TraceMetrics& metrics,
                                          const ImportanceConfig& cfg) {
    cfg.validate();
    const std::size_t L = metrics.layers.size();
    ImportanceReport report;
    report.config = cfg;
    report.batch_count = metrics.batch_count;
    report.sample_count = metrics.sample_count;
    report.num_patches = metrics.num_patches;

    for (std::size_t l = 0; l < L; ++l) {
        const auto& st = metrics.layers[l];
        LayerImportance li;
        li.layer_id = st.layer_id;
        li.dist = st.dist;
        li.sim_prev = st.sim_prev;
        li.head_sim = st.head_sim;
        li.redundancy = detail::weighted_redundancy(st, cfg);
        li.entropy = st.entropy;
        li.sim_flag = st.sim_flag;
        li.head_flag = st.head_flag;
        li.exempt = (l == 0 || l + 1 == L);
        report.per_layer.push_back(li);
    }

    std::vector<std::size_t> interior;
    for (std::size_t l = 1; l + 1 < L; ++l) interior.push_back(l);
    if (interior.empty()) {
        report.warnings.push_back("nothing to prune: model has no interior layers");
        return report;
    }

    // Distance gate over interior layers.
    const std::size_t n_gated = static_cast<std::size_t>(
        std::floor(cfg.tau_pct / 100.0 * static_cast<double>(interior.size()) + 1e-9));
    if (n_gated == 0)
        throw ConfigError("tau_pct gates out every interior layer (tau too small for " +
                          std::to_string(interior.size()) + " layers)");
    std::vector<std::size_t> by_dist = interior;
    std::sort(by_dist.begin(), by_dist.end(), [&](std::size_t a, std::size_t b) {
        if (report.per_layer[a].dist != report.per_layer[b].dist)
            return report.per_layer[a].dist > report.per_layer[b].dist;
        return a < b;
    });
    by_dist.resize(n_gated);
    for (std::size_t l : by_dist) {
        report.per_layer[l].gated = true;
        report.tau_gate_set.push_back(report.per_layer[l].layer_id);
    }
    std::sort(report.tau_gate_set.begin(), report.tau_gate_set.end());

    for (std::size_t l : interior) {
        auto& li = report.per_layer[l];
        if (!li.gated) continue;
        if (li.redundancy < 0 || li.head_sim < 0) li.negative_sim = true;
        double score = (1.0 - li.redundancy) * (1.0 - li.head_sim);
        li.score = std::clamp(score, 0.0, 2.0);
    }

    std::vector<std::size_t> ranked(by_dist.begin(), by_dist.end());
    std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
        const auto& la = report.per_layer[a];
        const auto& lb = report.per_layer[b];
        if (la.score != lb.score) return la.score > lb.score;
        if (la.dist != lb.dist) return la.dist > lb.dist;
        return la.layer_id < lb.layer_id;
    });
    for (std::size_t l : ranked) report.ranking.push_back(report.per_layer[l].layer_id);
    return report;
}

// Stable content digest of a report, recorded in pruning plans.
inline std::string report_digest(const ImportanceReport& report) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 0x100000001b3ull;
        }
    };
    auto mixd = [&](double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        mix(bits);
    };
    for (const auto& li : report.per_layer) {
        mix(static_cast<std::uint64_t>(li.layer_id));
        mixd(li.dist);
        mixd(li.sim_prev);
        mixd(li.head_sim);
        mixd(li.redundancy);
        mixd(li.entropy);
        mixd(li.score);
        mix(li.gated ? 1 : 0);
    }
    mixd(report.config.decay_factor);
    mix(report.config.preceding_layers);
    mixd(report.config.tau_pct);
    mixd(report.config.top_pct);
    mixd(report.config.cum_pct);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace dscope
