#pragma once

#include <random>
#include <vector>

#include "dscope/model.hpp"

namespace testing_helpers {

inline dscope::Tensor random_tensor(dscope::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> buf(dscope::shape_numel(shape));
    for (auto& v : buf) v = dist(rng);
    return dscope::Tensor(std::move(shape), std::move(buf));
}

inline double max_abs_diff(const dscope::Tensor& a, const dscope::Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline dscope::ModelConfig tiny_config(std::size_t layers = 3, std::uint64_t seed = 11) {
    dscope::ModelConfig cfg;
    cfg.layers = layers;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.patch_size = 8;
    cfg.stride = 4;
    cfg.t_in = 32;
    cfg.t_out = 8;
    cfg.mlp_ratio = 2.0;
    cfg.seed = seed;
    return cfg;
}

inline dscope::WindowSet tiny_windows(std::size_t channels = 1, std::uint64_t seed = 5,
                                      double sigma = 0.05, dscope::Split split = dscope::Split::train,
                                      std::size_t t_in = 32, std::size_t t_out = 8) {
    dscope::SynthSpec ss;
    ss.channels = channels;
    ss.length = 512;
    ss.seed = seed;
    ss.noise_sigma = sigma;
    auto ds = dscope::split_chronological(dscope::synth_generate(ss),
                                          dscope::SplitSpec::ratio_7_1_2());
    return dscope::make_windows(ds, split, t_in, t_out, 1);
}

// Zeroes one block's output projections so its residual contribution vanishes.
inline void zero_block_contribution(dscope::ForecastModel& m, std::size_t block) {
    auto& b = m.blocks[block];
    b.wo = dscope::Tensor::zeros(b.wo.shape());
    b.bo = dscope::Tensor::zeros(b.bo.shape());
    b.w2 = dscope::Tensor::zeros(b.w2.shape());
    b.b2 = dscope::Tensor::zeros(b.b2.shape());
    b.wo.set_requires_grad(true);
    b.bo.set_requires_grad(true);
    b.w2.set_requires_grad(true);
    b.b2.set_requires_grad(true);
}

}  // namespace testing_helpers
