#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <type_traits>
#include <vector>

#include "dscope/autograd.hpp"
#include "dscope/tensor.hpp"

namespace dscope {

namespace kernels {

// C[m,n] += A[m,k] * B[k,n]. Sequential accumulation over k keeps results
// bit-reproducible run to run.
template <typename S>
inline void gemm_nn_acc(const S* __restrict__ a, const S* __restrict__ b, S* __restrict__ c,
                        std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        S* ci = c + i * n;
        const S* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const S aip = ai[p];
            const S* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename S>
inline void gemm_nt_acc(const S* __restrict__ a, const S* __restrict__ b, S* __restrict__ c,
                        std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const S* ai = a + i * k;
        S* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const S* bj = b + j * k;
            S acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <typename S>
inline void gemm_tn_acc(const S* __restrict__ a, const S* __restrict__ b, S* __restrict__ c,
                        std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const S* ap = a + p * m;
        const S* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const S api = ap[i];
            S* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
        }
    }
}

}  // namespace kernels

namespace detail {

inline GradTape* recording(std::initializer_list<const Tensor*> inputs) {
    GradTape* tape = GradTape::active();
    if (!tape) return nullptr;
    for (const Tensor* t : inputs)
        if (t->requires_grad() || tape->tracked(*t)) return tape;
    return nullptr;
}

template <typename S>
constexpr bool is_traced_scalar = std::is_same_v<S, double>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcast ops
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    check_same_shape(a, b, "add");
    std::vector<S> buf(a.size());
    const S* pa = a.data();
    const S* pb = b.data();
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = pa[i] + pb[i];
    TensorT<S> out(a.shape(), std::move(buf));
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&a, &b})) {
            int na = tape->node_of(a), nb = tape->node_of(b);
            tape->record(out, {na, nb}, [na, nb](const std::vector<double>& g, GradTape& t) {
                t.accumulate(na, g.data(), g.size());
                t.accumulate(nb, g.data(), g.size());
            });
        }
    }
    return out;
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    check_same_shape(a, b, "sub");
    std::vector<S> buf(a.size());
    const S* pa = a.data();
    const S* pb = b.data();
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = pa[i] - pb[i];
    TensorT<S> out(a.shape(), std::move(buf));
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&a, &b})) {
            int na = tape->node_of(a), nb = tape->node_of(b);
            tape->record(out, {na, nb}, [na, nb](const std::vector<double>& g, GradTape& t) {
                t.accumulate(na, g.data(), g.size());
                if (nb >= 0) {
                    auto& buf = t.buffer(nb);
                    for (std::size_t i = 0; i < g.size(); ++i) buf[i] -= g[i];
                }
            });
        }
    }
    return out;
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    check_same_shape(a, b, "mul");
    std::vector<S> buf(a.size());
    const S* pa = a.data();
    const S* pb = b.data();
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = pa[i] * pb[i];
    TensorT<S> out(a.shape(), std::move(buf));
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&a, &b})) {
            int na = tape->node_of(a), nb = tape->node_of(b);
            tape->record(out, {na, nb}, [na, nb, a, b](const std::vector<double>& g, GradTape& t) {
                if (na >= 0) {
                    auto& buf = t.buffer(na);
                    const double* pb2 = b.data();
                    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * pb2[i];
                }
                if (nb >= 0) {
                    auto& buf = t.buffer(nb);
                    const double* pa2 = a.data();
                    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * pa2[i];
                }
            });
        }
    }
    return out;
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S c) {
    std::vector<S> buf(a.size());
    const S* pa = a.data();
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = pa[i] * c;
    TensorT<S> out(a.shape(), std::move(buf));
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&a})) {
            int na = tape->node_of(a);
            tape->record(out, {na}, [na, c](const std::vector<double>& g, GradTape& t) {
                if (na < 0) return;
                auto& buf = t.buffer(na);
                for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * c;
            });
        }
    }
    return out;
}

// a[..., n] + v[n] broadcast over leading axes (bias add).
template <typename S>
TensorT<S> add_rowvec(const TensorT<S>& a, const TensorT<S>& v) {
    if (v.rank() != 1 || a.rank() < 1 || a.shape().back() != v.extent(0))
        throw ShapeError("add_rowvec: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(v.shape()));
    const std::size_t n = v.size();
    const std::size_t rows = a.size() / n;
    std::vector<S> buf(a.size());
    const S* pa = a.data();
    const S* pv = v.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) buf[r * n + j] = pa[r * n + j] + pv[j];
    TensorT<S> out(a.shape(), std::move(buf));
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&a, &v})) {
            int na = tape->node_of(a), nv = tape->node_of(v);
            tape->record(out, {na, nv},
                         [na, nv, rows, n](const std::vector<double>& g, GradTape& t) {
                             t.accumulate(na, g.data(), g.size());
                             if (nv >= 0) {
                                 auto& buf = t.buffer(nv);
                                 for (std::size_t r = 0; r < rows; ++r)
                                     for (std::size_t j = 0; j < n; ++j) buf[j] += g[r * n + j];
                             }
                         });
        }
    }
    return out;
}

// a[R, d] + table[N, d] with table rows applied cyclically (R % N == 0);
// realizes the positional-table add over instances stacked row-wise.
template <typename S>
TensorT<S> add_cycle_rows(const TensorT<S>& a, const TensorT<S>& table) {
    if (a.rank() != 2 || table.rank() != 2 || a.extent(1) != table.extent(1) ||
        a.extent(0) % table.extent(0) != 0)
        throw ShapeError("add_cycle_rows: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(table.shape()));
    const std::size_t rows = a.extent(0), n = a.extent(1), cycle = table.extent(0);
    std::vector<S> buf(a.size());
    const S* pa = a.data();
    const S* pt = table.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* trow = pt + (r % cycle) * n;
        for (std::size_t j = 0; j < n; ++j) buf[r * n + j] = pa[r * n + j] + trow[j];
    }
    TensorT<S> out(a.shape(), std::move(buf));
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&a, &table})) {
            int na = tape->node_of(a), nt = tape->node_of(table);
            tape->record(out, {na, nt},
                         [na, nt, rows, n, cycle](const std::vector<double>& g, GradTape& t) {
                             t.accumulate(na, g.data(), g.size());
                             if (nt >= 0) {
                                 auto& buf = t.buffer(nt);
                                 for (std::size_t r = 0; r < rows; ++r)
                                     for (std::size_t j = 0; j < n; ++j)
                                         buf[(r % cycle) * n + j] += g[r * n + j];
                             }
                         });
        }
    }
    return out;
}

// out[r, c] = x[r, c] * scale[r] + shift[r]; per-row affine used to invert
// instance normalization at the head output.
template <typename S>
TensorT<S> rowwise_affine(const TensorT<S>& x, const TensorT<S>& row_scale,
                          const TensorT<S>& row_shift) {
    if (x.rank() != 2 || row_scale.rank() != 1 || row_shift.rank() != 1 ||
        row_scale.extent(0) != x.extent(0) || row_shift.extent(0) != x.extent(0))
        throw ShapeError("rowwise_affine: shape mismatch " + shape_str(x.shape()));
    const std::size_t rows = x.extent(0), cols = x.extent(1);
    std::vector<S> buf(x.size());
    const S* px = x.data();
    const S* ps = row_scale.data();
    const S* pm = row_shift.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) buf[r * cols + c] = px[r * cols + c] * ps[r] + pm[r];
    TensorT<S> out(x.shape(), std::move(buf));
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&x, &row_scale, &row_shift})) {
            int nx = tape->node_of(x), ns = tape->node_of(row_scale), nm = tape->node_of(row_shift);
            tape->record(out, {nx, ns, nm},
                         [nx, ns, nm, x, row_scale, rows,
                          cols](const std::vector<double>& g, GradTape& t) {
                             const double* ps2 = row_scale.data();
                             if (nx >= 0) {
                                 auto& buf = t.buffer(nx);
                                 for (std::size_t r = 0; r < rows; ++r)
                                     for (std::size_t c = 0; c < cols; ++c)
                                         buf[r * cols + c] += g[r * cols + c] * ps2[r];
                             }
                             if (ns >= 0) {
                                 auto& buf = t.buffer(ns);
                                 const double* px2 = x.data();
                                 for (std::size_t r = 0; r < rows; ++r) {
                                     double acc = 0;
                                     for (std::size_t c = 0; c < cols; ++c)
                                         acc += g[r * cols + c] * px2[r * cols + c];
                                     buf[r] += acc;
                                 }
                             }
                             if (nm >= 0) {
                                 auto& buf = t.buffer(nm);
                                 for (std::size_t r = 0; r < rows; ++r) {
                                     double acc = 0;
                                     for (std::size_t c = 0; c < cols; ++c) acc += g[r * cols + c];
                                     buf[r] += acc;
                                 }
                             }
                         });
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void matmul_dims(const TensorT<S>& a, const TensorT<S>& b, const char* op, std::size_t& batch,
                 std::size_t& m, std::size_t& k, std::size_t& n, bool b_transposed) {
    auto fail = [&] {
        throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    };
    if (a.rank() == 2 && b.rank() == 2) {
        batch = 1;
        m = a.extent(0);
        k = a.extent(1);
        if (!b_transposed) {
            if (b.extent(0) != k) fail();
            n = b.extent(1);
        } else {
            if (b.extent(1) != k) fail();
            n = b.extent(0);
        }
    } else if (a.rank() == 3 && b.rank() == 3 && a.extent(0) == b.extent(0)) {
        batch = a.extent(0);
        m = a.extent(1);
        k = a.extent(2);
        if (!b_transposed) {
            if (b.extent(1) != k) fail();
            n = b.extent(2);
        } else {
            if (b.extent(2) != k) fail();
            n = b.extent(1);
        }
    } else {
        fail();
    }
}

}  // namespace detail

// Standard product: [m,k]x[k,n] or batched [B,m,k]x[B,k,n].
template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    std::size_t batch, m, k, n;
    detail::matmul_dims(a, b, "matmul", batch, m, k, n, false);
    std::vector<S> buf(batch * m * n, S{0});
    for (std::size_t bb = 0; bb < batch; ++bb)
        kernels::gemm_nn_acc(a.data() + bb * m * k, b.data() + bb * k * n, buf.data() + bb * m * n,
                             m, k, n);
    Shape shape = a.rank() == 2 ? Shape{m, n} : Shape{batch, m, n};
    TensorT<S> out(std::move(shape), std::move(buf));
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&a, &b})) {
            int na = tape->node_of(a), nb = tape->node_of(b);
            tape->record(out, {na, nb},
                         [na, nb, a, b, batch, m, k, n](const std::vector<double>& g, GradTape& t) {
                             if (na >= 0) {  // dA += G * B^T
                                 auto& buf = t.buffer(na);
                                 for (std::size_t bb = 0; bb < batch; ++bb)
                                     kernels::gemm_nt_acc(g.data() + bb * m * n,
                                                          b.data() + bb * k * n,
                                                          buf.data() + bb * m * k, m, n, k);
                             }
                             if (nb >= 0) {  // dB += A^T * G
                                 auto& buf = t.buffer(nb);
                                 for (std::size_t bb = 0; bb < batch; ++bb)
                                     kernels::gemm_tn_acc(a.data() + bb * m * k,
                                                          g.data() + bb * m * n,
                                                          buf.data() + bb * k * n, k, m, n);
                             }
                         });
        }
    }
    return out;
}

// a * b^T on the trailing two axes: [B,m,k]x[B,n,k] -> [B,m,n] (or 2-D).
template <typename S>
TensorT<S> matmul_nt(const TensorT<S>& a, const TensorT<S>& b) {
    std::size_t batch, m, k, n;
    detail::matmul_dims(a, b, "matmul_nt", batch, m, k, n, true);
    std::vector<S> buf(batch * m * n, S{0});
    for (std::size_t bb = 0; bb < batch; ++bb)
        kernels::gemm_nt_acc(a.data() + bb * m * k, b.data() + bb * n * k, buf.data() + bb * m * n,
                             m, k, n);
    Shape shape = a.rank() == 2 ? Shape{m, n} : Shape{batch, m, n};
    TensorT<S> out(std::move(shape), std::move(buf));
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&a, &b})) {
            int na = tape->node_of(a), nb = tape->node_of(b);
            tape->record(out, {na, nb},
                         [na, nb, a, b, batch, m, k, n](const std::vector<double>& g, GradTape& t) {
                             if (na >= 0) {  // dA += G * B
                                 auto& buf = t.buffer(na);
                                 for (std::size_t bb = 0; bb < batch; ++bb)
                                     kernels::gemm_nn_acc(g.data() + bb * m * n,
                                                          b.data() + bb * n * k,
                                                          buf.data() + bb * m * k, m, n, k);
                             }
                             if (nb >= 0) {  // dB += G^T * A
                                 auto& buf = t.buffer(nb);
                                 for (std::size_t bb = 0; bb < batch; ++bb)
                                     kernels::gemm_tn_acc(g.data() + bb * m * n,
                                                          a.data() + bb * m * k,
                                                          buf.data() + bb * n * k, n, m, k);
                             }
                         });
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax / normalization / activation
// ---------------------------------------------------------------------------

inline constexpr double kMaskNegInf = -1e30;

// Row softmax over the last axis with optional additive mask (entries 0 or
// ~-inf). The mask may be the full shape or a trailing block whose size
// divides the input (cycled), e.g. one [N,N] causal mask for all heads.
template <typename S>
TensorT<S> softmax_rows(const TensorT<S>& x, const TensorT<S>* mask = nullptr) {
    if (x.rank() < 1) throw ShapeError("softmax_rows: rank-0 input");
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.size() / n;
    const S* pmask = nullptr;
    std::size_t mask_len = 0;
    if (mask) {
        if (mask->size() == 0 || x.size() % mask->size() != 0 || mask->size() % n != 0)
            throw ShapeError("softmax_rows: mask shape " + shape_str(mask->shape()) +
                             " incompatible with " + shape_str(x.shape()));
        pmask = mask->data();
        mask_len = mask->size();
    }
    std::vector<S> buf(x.size());
    const S* px = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* xr = px + r * n;
        const S* mr = pmask ? pmask + (r * n) % mask_len : nullptr;
        S mx = std::numeric_limits<S>::lowest();
        for (std::size_t j = 0; j < n; ++j) {
            S z = mr ? xr[j] + mr[j] : xr[j];
            mx = std::max(mx, z);
        }
        if (mx <= S{kMaskNegInf / 2}) throw NumericError("fully masked attention row");
        S sum = 0;
        S* or_ = buf.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) {
            S z = mr ? xr[j] + mr[j] : xr[j];
            or_[j] = std::exp(z - mx);
            sum += or_[j];
        }
        const S inv = S{1} / sum;
        for (std::size_t j = 0; j < n; ++j) or_[j] *= inv;
    }
    TensorT<S> out(x.shape(), std::move(buf));
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&x})) {
            int nx = tape->node_of(x);
            tape->record(out, {nx}, [nx, out, rows, n](const std::vector<double>& g, GradTape& t) {
                if (nx < 0) return;
                auto& buf = t.buffer(nx);
                const double* po = out.data();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* orow = po + r * n;
                    const double* grow = g.data() + r * n;
                    double dot = 0;
                    for (std::size_t j = 0; j < n; ++j) dot += grow[j] * orow[j];
                    double* brow = buf.data() + r * n;
                    for (std::size_t j = 0; j < n; ++j) brow[j] += orow[j] * (grow[j] - dot);
                }
            });
        }
    }
    return out;
}

// Per-row normalization over the last axis followed by affine gain/bias.
template <typename S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& bias,
                      S eps = S{1e-5}) {
    if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
    const std::size_t d = x.shape().back();
    if (d < 2) throw ShapeError("layer_norm: last axis must have extent >= 2");
    if (eps <= S{0}) throw ConfigError("layer_norm: eps must be positive");
    if (gain.size() != d || bias.size() != d)
        throw ShapeError("layer_norm: gain/bias must have extent " + std::to_string(d));
    const std::size_t rows = x.size() / d;
    std::vector<S> buf(x.size());
    auto xhat = std::make_shared<std::vector<S>>(x.size());
    auto inv_std = std::make_shared<std::vector<S>>(rows);
    const S* px = x.data();
    const S* pg = gain.data();
    const S* pb = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* xr = px + r * d;
        S mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<S>(d);
        S var = 0;
        for (std::size_t j = 0; j < d; ++j) {
            S diff = xr[j] - mean;
            var += diff * diff;
        }
        var /= static_cast<S>(d);
        const S istd = S{1} / std::sqrt(var + eps);
        (*inv_std)[r] = istd;
        S* hr = xhat->data() + r * d;
        S* outr = buf.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
            hr[j] = (xr[j] - mean) * istd;
            outr[j] = hr[j] * pg[j] + pb[j];
        }
    }
    TensorT<S> out(x.shape(), std::move(buf));
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&x, &gain, &bias})) {
            int nx = tape->node_of(x), ng = tape->node_of(gain), nb = tape->node_of(bias);
            tape->record(
                out, {nx, ng, nb},
                [nx, ng, nb, gain, xhat, inv_std, rows, d](const std::vector<double>& g,
                                                           GradTape& t) {
                    const double* pg2 = gain.data();
                    if (nx >= 0) {
                        auto& buf = t.buffer(nx);
                        for (std::size_t r = 0; r < rows; ++r) {
                            const double* grow = g.data() + r * d;
                            const double* hrow = xhat->data() + r * d;
                            double mean_gh = 0, mean_ghh = 0;
                            for (std::size_t j = 0; j < d; ++j) {
                                double gh = grow[j] * pg2[j];
                                mean_gh += gh;
                                mean_ghh += gh * hrow[j];
                            }
                            mean_gh /= static_cast<double>(d);
                            mean_ghh /= static_cast<double>(d);
                            double* brow = buf.data() + r * d;
                            const double istd = (*inv_std)[r];
                            for (std::size_t j = 0; j < d; ++j) {
                                double gh = grow[j] * pg2[j];
                                brow[j] += istd * (gh - mean_gh - hrow[j] * mean_ghh);
                            }
                        }
                    }
                    if (ng >= 0) {
                        auto& buf = t.buffer(ng);
                        for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < d; ++j)
                                buf[j] += g[r * d + j] * (*xhat)[r * d + j];
                    }
                    if (nb >= 0) {
                        auto& buf = t.buffer(nb);
                        for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < d; ++j) buf[j] += g[r * d + j];
                    }
                });
        }
    }
    return out;
}

// GELU, tanh approximation (GPT-2 convention).
template <typename S>
TensorT<S> gelu(const TensorT<S>& x) {
    const S c = std::sqrt(S{2} / S{M_PI});
    std::vector<S> buf(x.size());
    const S* px = x.data();
    for (std::size_t i = 0; i < buf.size(); ++i) {
        S v = px[i];
        buf[i] = S{0.5} * v * (S{1} + std::tanh(c * (v + S{0.044715} * v * v * v)));
    }
    TensorT<S> out(x.shape(), std::move(buf));
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&x})) {
            int nx = tape->node_of(x);
            tape->record(out, {nx}, [nx, x, c](const std::vector<double>& g, GradTape& t) {
                if (nx < 0) return;
                auto& buf = t.buffer(nx);
                const double* px2 = x.data();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    double v = px2[i];
                    double u = c * (v + 0.044715 * v * v * v);
                    double th = std::tanh(u);
                    double sech2 = 1.0 - th * th;
                    double local =
                        0.5 * (1.0 + th) + 0.5 * v * sech2 * c * (1.0 + 3.0 * 0.044715 * v * v);
                    buf[i] += g[i] * local;
                }
            });
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Layout ops (pure permutations / views)
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> reshape(const TensorT<S>& x, Shape shape) {
    TensorT<S> out = x.reshaped(std::move(shape));
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&x})) {
            int nx = tape->node_of(x);
            tape->record(out, {nx}, [nx](const std::vector<double>& g, GradTape& t) {
                t.accumulate(nx, g.data(), g.size());
            });
        }
    }
    return out;
}

// [B, N, H*dh] -> [B*H, N, dh]
template <typename S>
TensorT<S> split_heads(const TensorT<S>& x, std::size_t heads) {
    if (x.rank() != 3 || x.extent(2) % heads != 0)
        throw ShapeError("split_heads: cannot split " + shape_str(x.shape()) + " into " +
                         std::to_string(heads) + " heads");
    const std::size_t B = x.extent(0), N = x.extent(1), d = x.extent(2), dh = d / heads;
    std::vector<S> buf(x.size());
    const S* px = x.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t j = 0; j < dh; ++j)
                    buf[((b * heads + h) * N + i) * dh + j] = px[(b * N + i) * d + h * dh + j];
    TensorT<S> out(Shape{B * heads, N, dh}, std::move(buf));
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&x})) {
            int nx = tape->node_of(x);
            tape->record(out, {nx},
                         [nx, B, N, d, dh, heads](const std::vector<double>& g, GradTape& t) {
                             if (nx < 0) return;
                             auto& buf = t.buffer(nx);
                             for (std::size_t b = 0; b < B; ++b)
                                 for (std::size_t h = 0; h < heads; ++h)
                                     for (std::size_t i = 0; i < N; ++i)
                                         for (std::size_t j = 0; j < dh; ++j)
                                             buf[(b * N + i) * d + h * dh + j] +=
                                                 g[((b * heads + h) * N + i) * dh + j];
                         });
        }
    }
    return out;
}

// [B*H, N, dh] -> [B, N, H*dh]
template <typename S>
TensorT<S> merge_heads(const TensorT<S>& x, std::size_t heads) {
    if (x.rank() != 3 || x.extent(0) % heads != 0)
        throw ShapeError("merge_heads: cannot merge " + shape_str(x.shape()) + " from " +
                         std::to_string(heads) + " heads");
    const std::size_t B = x.extent(0) / heads, N = x.extent(1), dh = x.extent(2), d = dh * heads;
    std::vector<S> buf(x.size());
    const S* px = x.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t j = 0; j < dh; ++j)
                    buf[(b * N + i) * d + h * dh + j] = px[((b * heads + h) * N + i) * dh + j];
    TensorT<S> out(Shape{B, N, d}, std::move(buf));
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&x})) {
            int nx = tape->node_of(x);
            tape->record(out, {nx},
                         [nx, B, N, d, dh, heads](const std::vector<double>& g, GradTape& t) {
                             if (nx < 0) return;
                             auto& buf = t.buffer(nx);
                             for (std::size_t b = 0; b < B; ++b)
                                 for (std::size_t h = 0; h < heads; ++h)
                                     for (std::size_t i = 0; i < N; ++i)
                                         for (std::size_t j = 0; j < dh; ++j)
                                             buf[((b * heads + h) * N + i) * dh + j] +=
                                                 g[(b * N + i) * d + h * dh + j];
                         });
        }
    }
    return out;
}

// [B*V, t] -> [B, t, V]; inverse of folding channels into the batch axis.
template <typename S>
TensorT<S> unfold_channels(const TensorT<S>& x, std::size_t channels) {
    if (x.rank() != 2 || x.extent(0) % channels != 0)
        throw ShapeError("unfold_channels: bad shape " + shape_str(x.shape()));
    const std::size_t B = x.extent(0) / channels, T = x.extent(1);
    std::vector<S> buf(x.size());
    const S* px = x.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t v = 0; v < channels; ++v)
            for (std::size_t s = 0; s < T; ++s)
                buf[(b * T + s) * channels + v] = px[(b * channels + v) * T + s];
    TensorT<S> out(Shape{B, T, channels}, std::move(buf));
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&x})) {
            int nx = tape->node_of(x);
            tape->record(out, {nx},
                         [nx, B, T, channels](const std::vector<double>& g, GradTape& t) {
                             if (nx < 0) return;
                             auto& buf = t.buffer(nx);
                             for (std::size_t b = 0; b < B; ++b)
                                 for (std::size_t v = 0; v < channels; ++v)
                                     for (std::size_t s = 0; s < T; ++s)
                                         buf[(b * channels + v) * T + s] +=
                                             g[(b * T + s) * channels + v];
                         });
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> sum_all(const TensorT<S>& x) {
    S acc = 0;
    const S* px = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) acc += px[i];
    TensorT<S> out = TensorT<S>::scalar(acc);
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&x})) {
            int nx = tape->node_of(x);
            std::size_t n = x.size();
            tape->record(out, {nx}, [nx, n](const std::vector<double>& g, GradTape& t) {
                if (nx < 0) return;
                auto& buf = t.buffer(nx);
                for (std::size_t i = 0; i < n; ++i) buf[i] += g[0];
            });
        }
    }
    return out;
}

template <typename S>
TensorT<S> mean_all(const TensorT<S>& x) {
    if (x.size() == 0) throw ShapeError("mean_all: empty tensor");
    S acc = 0;
    const S* px = x.data();
    for (std::size_t i = 0; i < x.size(); ++i) acc += px[i];
    const S inv = S{1} / static_cast<S>(x.size());
    TensorT<S> out = TensorT<S>::scalar(acc * inv);
    if constexpr (detail::is_traced_scalar<S>) {
        if (GradTape* tape = detail::recording({&x})) {
            int nx = tape->node_of(x);
            std::size_t n = x.size();
            tape->record(out, {nx}, [nx, n, inv](const std::vector<double>& g, GradTape& t) {
                if (nx < 0) return;
                auto& buf = t.buffer(nx);
                const double gi = g[0] * inv;
                for (std::size_t i = 0; i < n; ++i) buf[i] += gi;
            });
        }
    }
    return out;
}

}  // namespace dscope
