#pragma once

#include <cstring>
#include <string>

#include "dscope/binio.hpp"
#include "dscope/model.hpp"

namespace dscope {

// Binary layer-trace dump for analyzing activations outside the model that
// produced them:
//   header: magic "LTRC", version u16, L u16, H u16, N_p u32, d_model u32,
//           B u32, dtype u16 (0 = f32),
//   payload: L+1 hidden states [B, N_p, d_model] then L attention maps
//            [B, H, N_p, N_p], layer-major, little-endian f32.
// The payload length is exactly determined by the header.

inline constexpr std::uint16_t kTraceDumpVersion = 1;
inline constexpr std::uint16_t kTraceDtypeF32 = 0;

template <typename S>
void write_trace_dump(const std::string& path, const LayerTraceT<S>& trace) {
    if (trace.hidden.empty() || trace.attn.size() + 1 != trace.hidden.size())
        throw FormatError("trace_dump: trace must hold L+1 hidden states and L attention maps");
    const std::size_t L = trace.attn.size();
    const std::size_t B = trace.hidden[0].extent(0);
    const std::size_t Np = trace.hidden[0].extent(1);
    const std::size_t d = trace.hidden[0].extent(2);
    const std::size_t H = trace.attn.empty() ? 1 : trace.attn[0].extent(1);
    binio::Writer w(path);
    w.bytes("LTRC", 4);
    w.u16(kTraceDumpVersion);
    w.u16(static_cast<std::uint16_t>(L));
    w.u16(static_cast<std::uint16_t>(H));
    w.u32(static_cast<std::uint32_t>(Np));
    w.u32(static_cast<std::uint32_t>(d));
    w.u32(static_cast<std::uint32_t>(B));
    w.u16(kTraceDtypeF32);
    for (const auto& hdn : trace.hidden) {
        const S* p = hdn.data();
        for (std::size_t i = 0; i < hdn.size(); ++i) w.f32(static_cast<float>(p[i]));
    }
    for (const auto& a : trace.attn) {
        const S* p = a.data();
        for (std::size_t i = 0; i < a.size(); ++i) w.f32(static_cast<float>(p[i]));
    }
    if (!w.good()) throw FormatError("write failed: " + path);
}

inline LayerTraceT<float> read_trace_dump(const std::string& path) {
    binio::Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "LTRC", 4) != 0) throw FormatError("not an LTRC trace dump: " + path);
    const std::uint16_t version = r.u16();
    if (version != kTraceDumpVersion)
        throw FormatError("unsupported trace dump version " + std::to_string(version));
    const std::size_t L = r.u16();
    const std::size_t H = r.u16();
    const std::size_t Np = r.u32();
    const std::size_t d = r.u32();
    const std::size_t B = r.u32();
    const std::uint16_t dtype = r.u16();
    if (dtype != kTraceDtypeF32)
        throw FormatError("unsupported dtype code " + std::to_string(dtype) + " in " + path +
                          " at byte offset " + std::to_string(r.offset() - 2));
    if (L == 0 || Np == 0 || d == 0 || B == 0 || H == 0)
        throw FormatError("degenerate trace dump header in " + path);
    LayerTraceT<float> trace;
    trace.batch = B;
    trace.channels = 1;
    for (std::size_t l = 0; l <= L; ++l) {
        std::vector<float> buf(B * Np * d);
        for (auto& v : buf) v = r.f32();
        trace.hidden.emplace_back(Shape{B, Np, d}, std::move(buf));
    }
    for (std::size_t l = 0; l < L; ++l) {
        std::vector<float> buf(B * H * Np * Np);
        for (auto& v : buf) v = r.f32();
        trace.attn.emplace_back(Shape{B, H, Np, Np}, std::move(buf));
        trace.layer_ids.push_back(static_cast<int>(l));
    }
    if (!r.at_eof())
        throw FormatError("trailing bytes in trace dump " + path + " at byte offset " +
                          std::to_string(r.offset()));
    return trace;
}

}  // namespace dscope
