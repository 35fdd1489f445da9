#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>

#include "dscope/model.hpp"

namespace dscope {

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-6;
    double weight_decay = 0.01;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 10;
    std::size_t patience = 3;
    std::uint64_t seed = 0;
    double clip_norm = 1.0;      // global-norm gradient clip
    double lr_floor_frac = 0.1;  // cosine decay floor as a fraction of peak lr

    void validate() const {
        if (lr <= 0 || beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1 || eps <= 0 ||
            weight_decay < 0 || batch_size < 1 || patience < 1 || clip_norm <= 0 ||
            lr_floor_frac < 0 || lr_floor_frac > 1)
            throw ConfigError("invalid training configuration");
    }
};

inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    check_same_shape(pred, target, "mse_loss");
    Tensor diff = sub(pred, target);
    return mean_all(mul(diff, diff));
}

// ---------------------------------------------------------------------------
// AdamW (decoupled weight decay)
// ---------------------------------------------------------------------------

struct AdamMoments {
    std::vector<double> m, v;
};

struct AdamState {
    std::map<std::string, AdamMoments> moments;
};

// One decoupled-weight-decay Adam update with bias correction; step_index is
// 1-based. Decay is skipped for parameters flagged no-decay (norm gains and
// biases, positional table). A non-finite gradient aborts the whole step
// before any parameter changes. Pure function of (params, grads, state,
// step_index, lr): replaying a recorded trajectory reproduces parameters
// bitwise.
inline void adamw_step(const std::vector<ParamRef<double>>& params,
                       const std::vector<Tensor>& grads, AdamState& state, const TrainConfig& cfg,
                       std::size_t step_index, double lr) {
    if (params.size() != grads.size())
        throw ShapeError("adamw_step: params/grads length mismatch");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (!grads[i].all_finite())
            throw NumericError("non-finite gradient for parameter '" + params[i].name + "'");

    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_index));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_index));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& ref = params[i];
        const std::size_t n = ref.tensor->size();
        auto& mom = state.moments[ref.name];
        if (mom.m.empty()) {
            mom.m.assign(n, 0.0);
            mom.v.assign(n, 0.0);
        }
        const double* g = grads[i].data();
        const double* p = ref.tensor->data();
        std::vector<double> upd(n);
        for (std::size_t j = 0; j < n; ++j) {
            mom.m[j] = cfg.beta1 * mom.m[j] + (1.0 - cfg.beta1) * g[j];
            mom.v[j] = cfg.beta2 * mom.v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double mhat = mom.m[j] / bc1;
            const double vhat = mom.v[j] / bc2;
            double x = p[j] - lr * mhat / (std::sqrt(vhat) + cfg.eps);
            if (ref.decay && cfg.weight_decay > 0) x -= lr * cfg.weight_decay * p[j];
            upd[j] = x;
        }
        *ref.tensor = Tensor(ref.tensor->shape(), std::move(upd));
        ref.tensor->set_requires_grad(true);
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochStats {
    std::size_t epoch;
    double train_mse;
    double val_mse;
    double lr;
};

struct TrainResult {
    std::vector<EpochStats> history;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    bool diverged = false;
};

namespace detail {

inline Tensor gather_windows(const Tensor& src, const std::vector<std::size_t>& order,
                             std::size_t begin, std::size_t end) {
    const std::size_t per = src.size() / src.extent(0);
    std::vector<double> buf((end - begin) * per);
    const double* p = src.data();
    for (std::size_t i = begin; i < end; ++i)
        std::copy(p + order[i] * per, p + (order[i] + 1) * per, buf.data() + (i - begin) * per);
    Shape shape = src.shape();
    shape[0] = end - begin;
    return Tensor(std::move(shape), std::move(buf));
}

inline std::vector<Tensor> snapshot_params(const ForecastModel& m) {
    std::vector<Tensor> snap;
    for (const auto& p : named_parameters(m)) snap.push_back(*p.tensor);
    return snap;
}

inline void restore_params(ForecastModel& m, const std::vector<Tensor>& snap) {
    auto params = named_parameters(m);
    for (std::size_t i = 0; i < params.size(); ++i) *params[i].tensor = snap[i];
}

}  // namespace detail

// Mean squared error of the model over a window set, batched, no capture.
inline double validation_mse(const ForecastModel& m, const WindowSet& w,
                             std::size_t batch_size = 64) {
    double sq = 0.0;
    std::size_t count = 0;
    std::vector<std::size_t> ident(w.count());
    std::iota(ident.begin(), ident.end(), 0);
    for (std::size_t b = 0; b < w.count(); b += batch_size) {
        const std::size_t e = std::min(w.count(), b + batch_size);
        Tensor x = detail::gather_windows(w.inputs, ident, b, e);
        Tensor y = detail::gather_windows(w.targets, ident, b, e);
        Tensor pred = forward(m, x).forecast;
        const double* pp = pred.data();
        const double* pt = y.data();
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double d = pp[i] - pt[i];
            sq += d * d;
        }
        count += pred.size();
    }
    return sq / static_cast<double>(count);
}

// Seeded shuffled mini-batches, cosine-decayed AdamW, early stopping on
// validation MSE with best-parameter restore. Divergence (non-finite loss or
// activations) aborts and returns the history collected so far.
inline TrainResult train(ForecastModel& model, const WindowSet& train_w, const WindowSet& val_w,
                         const TrainConfig& cfg) {
    cfg.validate();
    if (train_w.count() == 0 || val_w.count() == 0)
        throw ConfigError("train: empty train or validation window set");
    TrainResult result;
    if (cfg.max_epochs == 0) return result;

    auto params = named_parameters(model);
    for (auto& p : params) p.tensor->set_requires_grad(true);
    AdamState state;
    const std::size_t steps_per_epoch = (train_w.count() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.max_epochs * steps_per_epoch;
    const double floor = cfg.lr_floor_frac * cfg.lr;
    auto lr_at = [&](std::size_t step) {
        const double t = static_cast<double>(step) / static_cast<double>(total_steps);
        return floor + (cfg.lr - floor) * 0.5 * (1.0 + std::cos(M_PI * t));
    };

    std::vector<Tensor> best = detail::snapshot_params(model);
    std::size_t bad_epochs = 0;
    std::size_t global_step = 0;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::vector<std::size_t> order(train_w.count());
        std::iota(order.begin(), order.end(), 0);
        auto rng = make_engine(derive_seed(cfg.seed, "shuffle", epoch));
        std::shuffle(order.begin(), order.end(), rng);

        const double epoch_lr = lr_at(global_step);
        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        bool blew_up = false;
        for (std::size_t b = 0; b < train_w.count() && !blew_up; b += cfg.batch_size) {
            const std::size_t e = std::min(train_w.count(), b + cfg.batch_size);
            Tensor x = detail::gather_windows(train_w.inputs, order, b, e);
            Tensor y = detail::gather_windows(train_w.targets, order, b, e);
            try {
                GradTape tape;
                Tensor pred = forward(model, x).forecast;
                Tensor loss = mse_loss(pred, y);
                if (!std::isfinite(loss[0])) {
                    blew_up = true;
                    break;
                }
                tape.backward(loss);
                std::vector<Tensor> grads;
                grads.reserve(params.size());
                double sq = 0.0;
                for (const auto& p : params) {
                    grads.push_back(tape.grad(*p.tensor));
                    for (std::size_t i = 0; i < grads.back().size(); ++i)
                        sq += grads.back()[i] * grads.back()[i];
                }
                const double gnorm = std::sqrt(sq);
                if (gnorm > cfg.clip_norm) {
                    const double s = cfg.clip_norm / gnorm;
                    for (auto& g : grads) g = scale(g, s);
                }
                adamw_step(params, grads, state, cfg, global_step + 1, lr_at(global_step));
                ++global_step;
                loss_sum += loss[0] * static_cast<double>(e - b);
                loss_count += e - b;
            } catch (const NumericError&) {
                blew_up = true;
            }
        }

        double val = std::numeric_limits<double>::quiet_NaN();
        if (!blew_up) {
            try {
                val = validation_mse(model, val_w, cfg.batch_size);
            } catch (const NumericError&) {
            }
        }
        result.history.push_back(
            {epoch, loss_count ? loss_sum / static_cast<double>(loss_count)
                               : std::numeric_limits<double>::quiet_NaN(),
             val, epoch_lr});

        if (blew_up || !std::isfinite(val)) {
            result.diverged = true;
            break;
        }
        if (val < result.best_val) {
            result.best_val = val;
            result.best_epoch = epoch;
            best = detail::snapshot_params(model);
            bad_epochs = 0;
        } else {
            ++bad_epochs;
            if (bad_epochs >= cfg.patience) break;
        }
    }

    detail::restore_params(model, best);
    return result;
}

// Post-prune realignment: same loop with half the epoch budget; all retained
// parameters stay trainable.
inline TrainResult finetune(ForecastModel& model, const WindowSet& train_w, const WindowSet& val_w,
                            const TrainConfig& cfg) {
    if (model.depth() < 2) throw ConfigError("finetune: model must have at least 2 layers");
    TrainConfig ft = cfg;
    ft.max_epochs = std::max<std::size_t>(1, cfg.max_epochs / 2);
    return train(model, train_w, val_w, ft);
}

}  // namespace dscope
