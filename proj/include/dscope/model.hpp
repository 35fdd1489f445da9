#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dscope/data.hpp"
#include "dscope/ops.hpp"

namespace dscope {

struct ModelConfig {
    std::size_t layers = 8;
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t patch_size = 16;
    std::size_t stride = 8;
    std::size_t t_in = 128;
    std::size_t t_out = 32;
    double mlp_ratio = 4.0;
    std::uint64_t seed = 0;

    std::size_t head_dim() const { return d_model / heads; }
    std::size_t num_patches() const { return (t_in - patch_size) / stride + 1; }
    std::size_t mlp_hidden() const {
        return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(d_model)));
    }

    void validate() const {
        if (layers < 1 || d_model < 2 || heads < 1 || patch_size < 1 || stride < 1 ||
            t_in < 1 || t_out < 1)
            throw ConfigError("model config fields must be positive");
        if (d_model % heads != 0)
            throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by " +
                              "heads (" + std::to_string(heads) + ")");
        if (t_in < patch_size)
            throw ConfigError("t_in (" + std::to_string(t_in) + ") must be >= patch_size (" +
                              std::to_string(patch_size) + ")");
        if (num_patches() < 2)
            throw ConfigError("config yields " + std::to_string(num_patches()) +
                              " patch(es); at least 2 are required");
        if (mlp_hidden() < 1) throw ConfigError("mlp_ratio too small");
    }
};

template <typename S>
struct BlockParamsT {
    TensorT<S> ln1_g, ln1_b;
    TensorT<S> wq, bq, wk, bk, wv, bv, wo, bo;
    TensorT<S> ln2_g, ln2_b;
    TensorT<S> w1, b1, w2, b2;
};

// Decoder-only patch-embedding forecaster. Channel-independent: the V
// channels of a window are folded into the batch axis before embedding, so
// every "instance" below is one channel of one window. layer_ids keep the
// original block indices across pruning.
template <typename S>
struct ForecastModelT {
    ModelConfig config;
    TensorT<S> embed_w, embed_b;  // [P x d], [d]
    TensorT<S> pos;               // [N_p x d]
    std::vector<BlockParamsT<S>> blocks;
    std::vector<int> layer_ids;
    TensorT<S> lnf_g, lnf_b;
    TensorT<S> head_w, head_b;  // [N_p*d x t_out], [t_out]

    std::size_t depth() const { return blocks.size(); }
    std::size_t original_depth() const {
        return layer_ids.empty() ? 0 : static_cast<std::size_t>(layer_ids.back()) + 1;
    }
};

using ForecastModel = ForecastModelT<double>;

template <typename S>
struct ParamRef {
    std::string name;
    TensorT<S>* tensor;
    bool decay;  // weight decay applies (norm gains/biases and the positional table are exempt)
};

template <typename S>
std::vector<ParamRef<S>> named_parameters(ForecastModelT<S>& m) {
    std::vector<ParamRef<S>> out;
    out.push_back({"embed.w", &m.embed_w, true});
    out.push_back({"embed.b", &m.embed_b, true});
    out.push_back({"pos", &m.pos, false});
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        auto& b = m.blocks[i];
        const std::string p = "block" + std::to_string(m.layer_ids[i]) + ".";
        out.push_back({p + "ln1.g", &b.ln1_g, false});
        out.push_back({p + "ln1.b", &b.ln1_b, false});
        out.push_back({p + "attn.wq", &b.wq, true});
        out.push_back({p + "attn.bq", &b.bq, true});
        out.push_back({p + "attn.wk", &b.wk, true});
        out.push_back({p + "attn.bk", &b.bk, true});
        out.push_back({p + "attn.wv", &b.wv, true});
        out.push_back({p + "attn.bv", &b.bv, true});
        out.push_back({p + "attn.wo", &b.wo, true});
        out.push_back({p + "attn.bo", &b.bo, true});
        out.push_back({p + "ln2.g", &b.ln2_g, false});
        out.push_back({p + "ln2.b", &b.ln2_b, false});
        out.push_back({p + "mlp.w1", &b.w1, true});
        out.push_back({p + "mlp.b1", &b.b1, true});
        out.push_back({p + "mlp.w2", &b.w2, true});
        out.push_back({p + "mlp.b2", &b.b2, true});
    }
    out.push_back({"final_norm.g", &m.lnf_g, false});
    out.push_back({"final_norm.b", &m.lnf_b, false});
    out.push_back({"head.w", &m.head_w, true});
    out.push_back({"head.b", &m.head_b, true});
    return out;
}

template <typename S>
std::vector<ParamRef<S>> named_parameters(const ForecastModelT<S>& m) {
    return named_parameters(const_cast<ForecastModelT<S>&>(m));
}

inline std::size_t count_parameters_formula(const ModelConfig& cfg, std::size_t layers) {
    const std::size_t d = cfg.d_model, P = cfg.patch_size, Np = cfg.num_patches();
    const std::size_t mh = cfg.mlp_hidden();
    const std::size_t per_block = 2 * d            // ln1
                                  + 4 * (d * d + d)  // q, k, v, o projections
                                  + 2 * d            // ln2
                                  + d * mh + mh + mh * d + d;  // mlp
    return P * d + d            // patch projection
           + Np * d             // positional table
           + layers * per_block  //
           + 2 * d              // final norm
           + Np * d * cfg.t_out + cfg.t_out;  // head
}

template <typename S>
std::size_t count_parameters(const ForecastModelT<S>& m) {
    std::size_t n = 0;
    for (const auto& p : named_parameters(m)) n += p.tensor->size();
    return n;
}

namespace detail {

inline Tensor gauss_init(Shape shape, std::mt19937_64& rng, double sigma) {
    std::normal_distribution<double> dist(0.0, sigma);
    std::vector<double> buf(shape_numel(shape));
    for (auto& v : buf) v = dist(rng);
    Tensor t(std::move(shape), std::move(buf));
    t.set_requires_grad(true);
    return t;
}

inline Tensor const_init(Shape shape, double value) {
    Tensor t = Tensor::full(std::move(shape), value);
    t.set_requires_grad(true);
    return t;
}

}  // namespace detail

// Gaussian sigma=0.02 projections, zero biases, unit norm gains; drawn from
// the "init" stream of the config seed in declaration order.
inline ForecastModel init_model(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.d_model, Np = cfg.num_patches(), mh = cfg.mlp_hidden();
    auto rng = make_engine(derive_seed(cfg.seed, "init"));
    const double sigma = 0.02;
    ForecastModel m;
    m.config = cfg;
    m.embed_w = detail::gauss_init({cfg.patch_size, d}, rng, sigma);
    m.embed_b = detail::const_init({d}, 0.0);
    m.pos = detail::gauss_init({Np, d}, rng, sigma);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        BlockParamsT<double> b;
        b.ln1_g = detail::const_init({d}, 1.0);
        b.ln1_b = detail::const_init({d}, 0.0);
        b.wq = detail::gauss_init({d, d}, rng, sigma);
        b.bq = detail::const_init({d}, 0.0);
        b.wk = detail::gauss_init({d, d}, rng, sigma);
        b.bk = detail::const_init({d}, 0.0);
        b.wv = detail::gauss_init({d, d}, rng, sigma);
        b.bv = detail::const_init({d}, 0.0);
        b.wo = detail::gauss_init({d, d}, rng, sigma);
        b.bo = detail::const_init({d}, 0.0);
        b.ln2_g = detail::const_init({d}, 1.0);
        b.ln2_b = detail::const_init({d}, 0.0);
        b.w1 = detail::gauss_init({d, mh}, rng, sigma);
        b.b1 = detail::const_init({mh}, 0.0);
        b.w2 = detail::gauss_init({mh, d}, rng, sigma);
        b.b2 = detail::const_init({d}, 0.0);
        m.blocks.push_back(std::move(b));
        m.layer_ids.push_back(static_cast<int>(l));
    }
    m.lnf_g = detail::const_init({d}, 1.0);
    m.lnf_b = detail::const_init({d}, 0.0);
    m.head_w = detail::gauss_init({Np * d, cfg.t_out}, rng, sigma);
    m.head_b = detail::const_init({cfg.t_out}, 0.0);
    return m;
}

template <typename S>
ForecastModelT<S> cast_model(const ForecastModel& m) {
    ForecastModelT<S> out;
    out.config = m.config;
    out.layer_ids = m.layer_ids;
    out.embed_w = m.embed_w.template cast<S>();
    out.embed_b = m.embed_b.template cast<S>();
    out.pos = m.pos.template cast<S>();
    for (const auto& b : m.blocks) {
        BlockParamsT<S> nb;
        nb.ln1_g = b.ln1_g.template cast<S>();
        nb.ln1_b = b.ln1_b.template cast<S>();
        nb.wq = b.wq.template cast<S>();
        nb.bq = b.bq.template cast<S>();
        nb.wk = b.wk.template cast<S>();
        nb.bk = b.bk.template cast<S>();
        nb.wv = b.wv.template cast<S>();
        nb.bv = b.bv.template cast<S>();
        nb.wo = b.wo.template cast<S>();
        nb.bo = b.bo.template cast<S>();
        nb.ln2_g = b.ln2_g.template cast<S>();
        nb.ln2_b = b.ln2_b.template cast<S>();
        nb.w1 = b.w1.template cast<S>();
        nb.b1 = b.b1.template cast<S>();
        nb.w2 = b.w2.template cast<S>();
        nb.b2 = b.b2.template cast<S>();
        out.blocks.push_back(std::move(nb));
    }
    out.lnf_g = m.lnf_g.template cast<S>();
    out.lnf_b = m.lnf_b.template cast<S>();
    out.head_w = m.head_w.template cast<S>();
    out.head_b = m.head_b.template cast<S>();
    return out;
}

// ---------------------------------------------------------------------------
// Instance normalization and patching (data-side, outside the gradient path)
// ---------------------------------------------------------------------------

template <typename S>
struct InstanceStats {
    TensorT<S> mean, stdev;  // per instance row
    std::vector<std::size_t> clamped_rows;
};

inline constexpr double kInstanceNormEps = 1e-5;

// [B, T, V] -> rows [B*V, T]; channel-independent fold.
template <typename S>
TensorT<S> fold_channels(const TensorT<S>& x) {
    if (x.rank() != 3) throw ShapeError("fold_channels: expected [B, T, V]");
    const std::size_t B = x.extent(0), T = x.extent(1), V = x.extent(2);
    std::vector<S> buf(x.size());
    const S* p = x.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t v = 0; v < V; ++v)
            for (std::size_t s = 0; s < T; ++s)
                buf[(b * V + v) * T + s] = p[(b * T + s) * V + v];
    return TensorT<S>(Shape{B * V, T}, std::move(buf));
}

// Per-instance, per-channel standardization over the time axis. Zero-variance
// rows get their std clamped to eps and are flagged.
template <typename S>
std::pair<TensorT<S>, InstanceStats<S>> instance_normalize(const TensorT<S>& x) {
    if (x.rank() != 3) throw ShapeError("instance_normalize: expected [B, T_in, V]");
    if (x.extent(1) < 2) throw ShapeError("instance_normalize: T_in must be >= 2");
    TensorT<S> rows = fold_channels(x);
    const std::size_t R = rows.extent(0), T = rows.extent(1);
    std::vector<S> normed(rows.size());
    std::vector<S> means(R), stds(R);
    InstanceStats<S> stats;
    const S* p = rows.data();
    for (std::size_t r = 0; r < R; ++r) {
        const S* xr = p + r * T;
        S mean = 0;
        for (std::size_t s = 0; s < T; ++s) mean += xr[s];
        mean /= static_cast<S>(T);
        S var = 0;
        for (std::size_t s = 0; s < T; ++s) {
            S d = xr[s] - mean;
            var += d * d;
        }
        var /= static_cast<S>(T);
        S sd = std::sqrt(var);
        if (sd < S{kInstanceNormEps}) {
            sd = S{kInstanceNormEps};
            stats.clamped_rows.push_back(r);
        }
        means[r] = mean;
        stds[r] = sd;
        for (std::size_t s = 0; s < T; ++s) normed[r * T + s] = (xr[s] - mean) / sd;
    }
    stats.mean = TensorT<S>(Shape{R}, std::move(means));
    stats.stdev = TensorT<S>(Shape{R}, std::move(stds));
    return {TensorT<S>(Shape{R, T}, std::move(normed)), std::move(stats)};
}

// [R, T_in] -> [R*N_p, P]: overlapping patch gather, pure data movement.
template <typename S>
TensorT<S> extract_patches(const TensorT<S>& rows, std::size_t patch, std::size_t stride) {
    if (rows.rank() != 2) throw ShapeError("extract_patches: expected [R, T_in]");
    const std::size_t R = rows.extent(0), T = rows.extent(1);
    if (T < patch) throw ConfigError("extract_patches: T_in shorter than patch size");
    const std::size_t Np = (T - patch) / stride + 1;
    std::vector<S> buf(R * Np * patch);
    const S* p = rows.data();
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t i = 0; i < Np; ++i)
            for (std::size_t j = 0; j < patch; ++j)
                buf[(r * Np + i) * patch + j] = p[r * T + i * stride + j];
    return TensorT<S>(Shape{R * Np, patch}, std::move(buf));
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

// Captured per-layer hidden states and attention maps for one batch.
// hidden[0] is the post-embedding, post-positional state; hidden[l+1] the
// output of block l. Instance statistics ride along so hidden states can be
// projected back to the series scale.
template <typename S>
struct LayerTraceT {
    std::vector<TensorT<S>> hidden;  // depth+1 entries, each [B_eff, N_p, d]
    std::vector<TensorT<S>> attn;    // depth entries, each [B_eff, H, N_p, N_p]
    std::vector<int> layer_ids;
    TensorT<S> inst_mean, inst_stdev;  // [B_eff]
    std::size_t batch = 0, channels = 0;

    std::size_t states() const { return hidden.size(); }
};

using LayerTrace = LayerTraceT<double>;

template <typename S>
struct ForwardResult {
    TensorT<S> forecast;  // [B, t_out, V]
    std::optional<LayerTraceT<S>> trace;
};

template <typename S>
TensorT<S> causal_mask(std::size_t n) {
    std::vector<S> buf(n * n, S{0});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) buf[i * n + j] = S{kMaskNegInf};
    return TensorT<S>(Shape{n, n}, std::move(buf));
}

// Patch projection plus positional table: [R, T_in] -> [R*N_p, d] rows.
template <typename S>
TensorT<S> patch_embed(const ForecastModelT<S>& m, const TensorT<S>& x_normed) {
    const auto& cfg = m.config;
    TensorT<S> patches = extract_patches(x_normed, cfg.patch_size, cfg.stride);
    TensorT<S> emb = add_rowvec(matmul(patches, m.embed_w), m.embed_b);
    return add_cycle_rows(emb, m.pos);
}

namespace detail {

template <typename S>
void check_block_finite(const TensorT<S>& x, int layer_id) {
    if (!x.all_finite())
        throw NumericError("non-finite activation in block " + std::to_string(layer_id));
}

}  // namespace detail

template <typename S>
ForwardResult<S> forward(const ForecastModelT<S>& m, const TensorT<S>& x, bool capture = false) {
    const auto& cfg = m.config;
    if (x.rank() != 3 || x.extent(1) != cfg.t_in)
        throw ShapeError("forward: expected input [B, " + std::to_string(cfg.t_in) +
                         ", V], got " + shape_str(x.shape()));
    if (!x.all_finite()) throw NumericError("non-finite model input");
    const std::size_t B = x.extent(0), V = x.extent(2);
    const std::size_t Np = cfg.num_patches(), d = cfg.d_model, H = cfg.heads;
    const std::size_t R = B * V;  // instances after the channel-independent fold

    auto [normed, stats] = instance_normalize(x);
    TensorT<S> h = patch_embed(m, normed);  // [R*Np, d]

    ForwardResult<S> result;
    LayerTraceT<S>* trace = nullptr;
    if (capture) {
        result.trace.emplace();
        trace = &*result.trace;
        trace->layer_ids = m.layer_ids;
        trace->inst_mean = stats.mean;
        trace->inst_stdev = stats.stdev;
        trace->batch = B;
        trace->channels = V;
        trace->hidden.push_back(h.reshaped(Shape{R, Np, d}));
    }

    const TensorT<S> mask = causal_mask<S>(Np);
    const S attn_scale = S{1} / std::sqrt(static_cast<S>(cfg.head_dim()));

    for (std::size_t l = 0; l < m.blocks.size(); ++l) {
        const auto& blk = m.blocks[l];
        TensorT<S> n1 = layer_norm(h, blk.ln1_g, blk.ln1_b);
        TensorT<S> q = split_heads(reshape(add_rowvec(matmul(n1, blk.wq), blk.bq), {R, Np, d}), H);
        TensorT<S> k = split_heads(reshape(add_rowvec(matmul(n1, blk.wk), blk.bk), {R, Np, d}), H);
        TensorT<S> v = split_heads(reshape(add_rowvec(matmul(n1, blk.wv), blk.bv), {R, Np, d}), H);
        TensorT<S> scores = scale(matmul_nt(q, k), attn_scale);
        TensorT<S> attn = softmax_rows(scores, &mask);
        if (trace) trace->attn.push_back(attn.reshaped(Shape{R, H, Np, Np}));
        TensorT<S> ctx = reshape(merge_heads(matmul(attn, v), H), {R * Np, d});
        h = add(h, add_rowvec(matmul(ctx, blk.wo), blk.bo));
        TensorT<S> n2 = layer_norm(h, blk.ln2_g, blk.ln2_b);
        TensorT<S> mlp = add_rowvec(
            matmul(gelu(add_rowvec(matmul(n2, blk.w1), blk.b1)), blk.w2), blk.b2);
        h = add(h, mlp);
        detail::check_block_finite(h, m.layer_ids[l]);
        if (trace) trace->hidden.push_back(h.reshaped(Shape{R, Np, d}));
    }

    TensorT<S> hf = layer_norm(h, m.lnf_g, m.lnf_b);
    TensorT<S> flat = reshape(hf, {R, Np * d});
    TensorT<S> y = add_rowvec(matmul(flat, m.head_w), m.head_b);  // [R, t_out]
    y = rowwise_affine(y, stats.stdev, stats.mean);
    result.forecast = unfold_channels(y, V);
    return result;
}

// Applies the model's own final norm and prediction head to a captured hidden
// state, producing a forecast as if that state were the last layer's output.
template <typename S>
TensorT<S> project_hidden_to_series(const ForecastModelT<S>& m, const LayerTraceT<S>& trace,
                                    std::size_t state_index) {
    if (state_index >= trace.states())
        throw ConfigError("project_hidden_to_series: state " + std::to_string(state_index) +
                          " out of range (trace has " + std::to_string(trace.states()) +
                          " states)");
    const std::size_t Np = m.config.num_patches(), d = m.config.d_model;
    TensorT<S> h = trace.hidden[state_index].reshaped(
        Shape{trace.hidden[state_index].extent(0) * Np, d});
    TensorT<S> hf = layer_norm(h, m.lnf_g, m.lnf_b);
    TensorT<S> flat = reshape(hf, {trace.batch * trace.channels, Np * d});
    TensorT<S> y = add_rowvec(matmul(flat, m.head_w), m.head_b);
    y = rowwise_affine(y, trace.inst_stdev, trace.inst_mean);
    return unfold_channels(y, trace.channels);
}

// Trace integrity: row-stochastic causal attention maps.
template <typename S>
void validate_trace(const LayerTraceT<S>& trace, double tol) {
    for (const auto& a : trace.attn) {
        const std::size_t Np = a.extent(2);
        const std::size_t rows = a.size() / Np;
        const S* p = a.data();
        for (std::size_t r = 0; r < rows; ++r) {
            double sum = 0;
            const std::size_t i = r % Np;  // row within the causal matrix
            for (std::size_t j = 0; j < Np; ++j) {
                sum += static_cast<double>(p[r * Np + j]);
                if (j > i && std::abs(static_cast<double>(p[r * Np + j])) > 1e-30)
                    throw NumericError("attention support above the diagonal");
            }
            if (std::abs(sum - 1.0) > tol)
                throw NumericError("attention row does not sum to 1");
        }
    }
}

}  // namespace dscope
