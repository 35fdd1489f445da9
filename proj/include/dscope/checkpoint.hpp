#pragma once

#include <map>
#include <string>

#include "dscope/binio.hpp"
#include "dscope/model.hpp"

namespace dscope {

// Model checkpoint, single file:
//   magic "DSCK", version u16,
//   config block (u32 fields, f64 mlp_ratio, u64 seed),
//   layer_ids (u32 count + u32 each),
//   tensor count u32, then per tensor:
//     name (u32 length + UTF-8), rank u32, extents u32 each, f32 payload.
// All integers and floats little-endian. Parameters are stored in f32; pruned
// checkpoints stay self-describing through layer_ids.

inline constexpr std::uint16_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const ForecastModel& m) {
    binio::Writer w(path);
    w.bytes("DSCK", 4);
    w.u16(kCheckpointVersion);
    const auto& c = m.config;
    w.u32(static_cast<std::uint32_t>(c.layers));
    w.u32(static_cast<std::uint32_t>(c.d_model));
    w.u32(static_cast<std::uint32_t>(c.heads));
    w.u32(static_cast<std::uint32_t>(c.patch_size));
    w.u32(static_cast<std::uint32_t>(c.stride));
    w.u32(static_cast<std::uint32_t>(c.t_in));
    w.u32(static_cast<std::uint32_t>(c.t_out));
    w.f64(c.mlp_ratio);
    w.u64(c.seed);
    w.u32(static_cast<std::uint32_t>(m.layer_ids.size()));
    for (int id : m.layer_ids) w.u32(static_cast<std::uint32_t>(id));
    const auto params = named_parameters(m);
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        w.str(p.name);
        w.u32(static_cast<std::uint32_t>(p.tensor->rank()));
        for (std::size_t e : p.tensor->shape()) w.u32(static_cast<std::uint32_t>(e));
        const double* src = p.tensor->data();
        for (std::size_t i = 0; i < p.tensor->size(); ++i)
            w.f32(static_cast<float>(src[i]));
    }
    if (!w.good()) throw FormatError("write failed: " + path);
}

// Zero-initialized model with the given block subset; used to rebuild a
// checkpointed model before filling tensors by name.
inline ForecastModel make_skeleton(const ModelConfig& cfg, const std::vector<int>& layer_ids) {
    ModelConfig full = cfg;
    full.layers = cfg.layers;
    full.validate();
    const std::size_t d = cfg.d_model, Np = cfg.num_patches(), mh = cfg.mlp_hidden();
    ForecastModel m;
    m.config = cfg;
    m.config.layers = layer_ids.size();
    m.layer_ids = layer_ids;
    m.embed_w = detail::const_init({cfg.patch_size, d}, 0.0);
    m.embed_b = detail::const_init({d}, 0.0);
    m.pos = detail::const_init({Np, d}, 0.0);
    for (std::size_t l = 0; l < layer_ids.size(); ++l) {
        BlockParamsT<double> b;
        b.ln1_g = detail::const_init({d}, 0.0);
        b.ln1_b = detail::const_init({d}, 0.0);
        b.wq = detail::const_init({d, d}, 0.0);
        b.bq = detail::const_init({d}, 0.0);
        b.wk = detail::const_init({d, d}, 0.0);
        b.bk = detail::const_init({d}, 0.0);
        b.wv = detail::const_init({d, d}, 0.0);
        b.bv = detail::const_init({d}, 0.0);
        b.wo = detail::const_init({d, d}, 0.0);
        b.bo = detail::const_init({d}, 0.0);
        b.ln2_g = detail::const_init({d}, 0.0);
        b.ln2_b = detail::const_init({d}, 0.0);
        b.w1 = detail::const_init({d, mh}, 0.0);
        b.b1 = detail::const_init({mh}, 0.0);
        b.w2 = detail::const_init({mh, d}, 0.0);
        b.b2 = detail::const_init({d}, 0.0);
        m.blocks.push_back(std::move(b));
    }
    m.lnf_g = detail::const_init({d}, 0.0);
    m.lnf_b = detail::const_init({d}, 0.0);
    m.head_w = detail::const_init({Np * d, cfg.t_out}, 0.0);
    m.head_b = detail::const_init({cfg.t_out}, 0.0);
    return m;
}

inline ForecastModel load_checkpoint(const std::string& path) {
    binio::Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "DSCK", 4) != 0)
        throw FormatError("not a DSCK checkpoint: " + path);
    const std::uint16_t version = r.u16();
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    ModelConfig cfg;
    cfg.layers = r.u32();
    cfg.d_model = r.u32();
    cfg.heads = r.u32();
    cfg.patch_size = r.u32();
    cfg.stride = r.u32();
    cfg.t_in = r.u32();
    cfg.t_out = r.u32();
    cfg.mlp_ratio = r.f64();
    cfg.seed = r.u64();
    const std::uint32_t n_ids = r.u32();
    std::vector<int> layer_ids(n_ids);
    for (auto& id : layer_ids) id = static_cast<int>(r.u32());
    if (layer_ids.empty())
        throw FormatError("checkpoint has no layers: " + path);
    // cfg.layers in the header is the live block count; original depth is
    // recoverable from layer_ids.back()+1.
    ForecastModel m = make_skeleton(cfg, layer_ids);

    std::map<std::string, ParamRef<double>> by_name;
    for (auto& p : named_parameters(m)) by_name.emplace(p.name, p);

    const std::uint32_t n_tensors = r.u32();
    std::size_t filled = 0;
    for (std::uint32_t t = 0; t < n_tensors; ++t) {
        const std::string name = r.str(4096);
        const std::uint32_t rank = r.u32();
        if (rank > 8)
            throw FormatError("implausible tensor rank in " + path + " at byte offset " +
                              std::to_string(r.offset() - 4));
        Shape shape(rank);
        for (auto& e : shape) e = r.u32();
        const std::size_t n = shape_numel(shape);
        std::vector<double> buf(n);
        for (std::size_t i = 0; i < n; ++i) buf[i] = static_cast<double>(r.f32());
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw FormatError("unknown tensor '" + name + "' in checkpoint " + path);
        if (it->second.tensor->shape() != shape)
            throw FormatError("tensor '" + name + "' has shape " + shape_str(shape) +
                              ", expected " + shape_str(it->second.tensor->shape()));
        *it->second.tensor = Tensor(shape, std::move(buf));
        it->second.tensor->set_requires_grad(true);
        ++filled;
    }
    if (filled != by_name.size())
        throw FormatError("checkpoint " + path + " is missing " +
                          std::to_string(by_name.size() - filled) + " tensors");
    return m;
}

}  // namespace dscope
