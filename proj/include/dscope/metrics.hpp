#pragma once

#include <cmath>
#include <numeric>
#include <string>

#include "dscope/data.hpp"
#include "dscope/model.hpp"
#include "dscope/train.hpp"

namespace dscope {

enum class EvalScale { standardized, raw };

inline const char* eval_scale_name(EvalScale s) {
    return s == EvalScale::standardized ? "standardized" : "raw";
}

struct EvalResult {
    double mae = 0;
    double mse = 0;
    double mape = 0;  // percent
    std::size_t mape_skipped = 0;  // zero-target entries excluded from MAPE
    EvalScale scale = EvalScale::standardized;
    std::size_t n_windows = 0;
};

// Per-window mean over the T'xV error matrix, then mean over windows.
// MAPE skips zero targets and counts the skips.
inline EvalResult evaluate_forecasts(const Tensor& preds, const Tensor& targets) {
    check_same_shape(preds, targets, "evaluate_forecasts");
    if (preds.rank() != 3 || preds.extent(0) == 0)
        throw ShapeError("evaluate_forecasts: expected non-empty [N, T_out, V]");
    const std::size_t N = preds.extent(0);
    const std::size_t per = preds.size() / N;
    const double* pp = preds.data();
    const double* pt = targets.data();
    EvalResult r;
    r.n_windows = N;
    for (std::size_t w = 0; w < N; ++w) {
        double mae = 0, mse = 0, mape = 0;
        std::size_t mape_n = 0;
        for (std::size_t i = 0; i < per; ++i) {
            const double y = pt[w * per + i];
            const double e = pp[w * per + i] - y;
            mae += std::abs(e);
            mse += e * e;
            if (y != 0.0) {
                mape += std::abs(e / y);
                ++mape_n;
            } else {
                ++r.mape_skipped;
            }
        }
        r.mae += mae / static_cast<double>(per);
        r.mse += mse / static_cast<double>(per);
        if (mape_n > 0) r.mape += 100.0 * mape / static_cast<double>(mape_n);
    }
    r.mae /= static_cast<double>(N);
    r.mse /= static_cast<double>(N);
    r.mape /= static_cast<double>(N);
    return r;
}

namespace detail {

inline Tensor destandardize(const Tensor& x, const NormStats& norm) {
    const std::size_t V = x.shape().back();
    if (norm.mean.size() != V)
        throw ConfigError("destandardize: stats cover " + std::to_string(norm.mean.size()) +
                          " channels, tensor has " + std::to_string(V));
    std::vector<double> buf(x.size());
    const double* p = x.data();
    for (std::size_t i = 0; i < buf.size(); ++i) {
        const std::size_t v = i % V;
        buf[i] = p[i] * norm.stdev[v] + norm.mean[v];
    }
    return Tensor(x.shape(), std::move(buf));
}

}  // namespace detail

// Forecast accuracy over a window set. Standardized scale reports errors in
// train-split-standardized units (the comparability convention); raw scale
// de-standardizes predictions and targets with the train statistics first.
inline EvalResult evaluate(const ForecastModel& model, const WindowSet& windows, EvalScale scale,
                           const NormStats* norm = nullptr, std::size_t batch_size = 64) {
    if (windows.count() == 0) throw ConfigError("evaluate: empty window set");
    if (scale == EvalScale::raw && norm == nullptr)
        throw ConfigError("evaluate: raw scale needs normalization statistics");
    std::vector<std::size_t> ident(windows.count());
    std::iota(ident.begin(), ident.end(), 0);
    std::vector<double> pred_buf;
    pred_buf.reserve(windows.targets.size());
    for (std::size_t b = 0; b < windows.count(); b += batch_size) {
        const std::size_t e = std::min(windows.count(), b + batch_size);
        Tensor x = detail::gather_windows(windows.inputs, ident, b, e);
        Tensor pred = forward(model, x).forecast;
        pred_buf.insert(pred_buf.end(), pred.data(), pred.data() + pred.size());
    }
    Tensor preds(windows.targets.shape(), std::move(pred_buf));
    Tensor targets = windows.targets;
    if (scale == EvalScale::raw) {
        preds = detail::destandardize(preds, *norm);
        targets = detail::destandardize(targets, *norm);
    }
    EvalResult r = evaluate_forecasts(preds, targets);
    r.scale = scale;
    return r;
}

}  // namespace dscope
