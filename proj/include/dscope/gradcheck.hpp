#pragma once

#include <algorithm>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dscope/ops.hpp"

namespace dscope {

struct GradCheckEntry {
    std::string name;
    std::size_t coords_checked = 0;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    double tol = 0.0;
    bool passed = false;
    std::size_t total_coords = 0;
    std::vector<GradCheckEntry> per_tensor;
};

// Builds the scalar loss (as a tensor) from the given parameter set. The same
// closure serves both the tape pass and the finite-difference probes, so the
// two gradient routes stay independent: the tape differentiates the graph,
// the probes only ever call the closure as a black box.
using LossFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Central finite differences against tape gradients over a random coordinate
// sample of at least `coords_per_tensor` entries per parameter tensor
// (capped at the tensor size). Relative error uses a floor of 1e-3 times the
// largest sampled gradient magnitude so exact-zero gradients are not judged
// against finite-difference noise alone.
inline GradCheckReport grad_check(const LossFn& f, std::vector<Tensor> params,
                                  std::vector<std::string> names = {}, double h = 1e-5,
                                  double tol = 1e-4, std::uint64_t seed = 0,
                                  std::size_t coords_per_tensor = 100) {
    if (h < 1e-6 || h > 1e-4) throw ConfigError("grad_check: h must lie in [1e-6, 1e-4]");
    for (auto& p : params) p.set_requires_grad(true);

    std::vector<Tensor> tape_grads;
    {
        GradTape tape;
        Tensor loss = f(params);
        if (loss.size() != 1) throw ShapeError("grad_check: f must return a scalar");
        if (!std::isfinite(loss[0])) throw EvalError("grad_check: f(theta) is not finite");
        tape.backward(loss);
        tape_grads.reserve(params.size());
        for (const auto& p : params) tape_grads.push_back(tape.grad(p));
    }

    struct Coord {
        std::size_t tensor, flat;
    };
    std::vector<Coord> coords;
    auto rng = make_engine(derive_seed(seed, "gradcheck"));
    for (std::size_t ti = 0; ti < params.size(); ++ti) {
        const std::size_t n = params[ti].size();
        if (n <= coords_per_tensor) {
            for (std::size_t i = 0; i < n; ++i) coords.push_back({ti, i});
        } else {
            std::vector<std::size_t> idx(n);
            for (std::size_t i = 0; i < n; ++i) idx[i] = i;
            std::shuffle(idx.begin(), idx.end(), rng);
            for (std::size_t i = 0; i < coords_per_tensor; ++i) coords.push_back({ti, idx[i]});
        }
    }

    std::vector<double> fd(coords.size());
    parallel_for(coords.size(), [&](std::size_t begin, std::size_t end) {
        std::vector<Tensor> local = params;
        for (std::size_t c = begin; c < end; ++c) {
            const auto [ti, flat] = coords[c];
            const double v = params[ti][flat];
            local[ti] = params[ti].with_element(flat, v + h);
            const double fp = f(local)[0];
            local[ti] = params[ti].with_element(flat, v - h);
            const double fm = f(local)[0];
            local[ti] = params[ti];
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw EvalError("grad_check: f(theta +/- h) is not finite");
            fd[c] = (fp - fm) / (2.0 * h);
        }
    });

    double gmax = 0.0;
    for (std::size_t c = 0; c < coords.size(); ++c)
        gmax = std::max(gmax, std::abs(tape_grads[coords[c].tensor][coords[c].flat]));

    GradCheckReport report;
    report.tol = tol;
    report.per_tensor.resize(params.size());
    for (std::size_t ti = 0; ti < params.size(); ++ti)
        report.per_tensor[ti].name =
            ti < names.size() ? names[ti] : "param" + std::to_string(ti);
    const double floor = std::max(1e-3 * gmax, 1e-12);
    for (std::size_t c = 0; c < coords.size(); ++c) {
        const auto [ti, flat] = coords[c];
        const double g = tape_grads[ti][flat];
        const double abs_err = std::abs(g - fd[c]);
        const double rel = abs_err / std::max(std::abs(g) + std::abs(fd[c]), floor);
        auto& entry = report.per_tensor[ti];
        entry.coords_checked++;
        entry.max_rel_err = std::max(entry.max_rel_err, rel);
        entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
        report.max_rel_err = std::max(report.max_rel_err, rel);
    }
    report.total_coords = coords.size();
    report.passed = report.max_rel_err < tol;
    return report;
}

}  // namespace dscope
