#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dscope/common.hpp"

namespace dscope {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

namespace detail {
inline std::uint64_t next_tensor_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

// Dense row-major tensor. Values are immutable after construction; "mutation"
// (optimizer updates, perturbations) always produces a fresh tensor. Each
// tensor carries a unique id so gradient tapes can key nodes by identity even
// when storage is shared (e.g. reshapes).
template <typename S>
class TensorT {
   public:
    using Scalar = S;

    TensorT() = default;

    explicit TensorT(Shape shape)
        : TensorT(std::move(shape), std::vector<S>()) {}

    TensorT(Shape shape, std::vector<S> data) : shape_(std::move(shape)) {
        if (data.empty()) data.assign(shape_numel(shape_), S{0});
        if (data.size() != shape_numel(shape_))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape_));
        data_ = std::make_shared<const std::vector<S>>(std::move(data));
        id_ = detail::next_tensor_id();
    }

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

    static TensorT full(Shape shape, S value) {
        std::vector<S> buf(shape_numel(shape), value);
        return TensorT(std::move(shape), std::move(buf));
    }

    static TensorT scalar(S value) { return TensorT(Shape{}, std::vector<S>{value}); }

    bool empty() const { return !data_; }
    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_ ? data_->size() : 0; }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    const S* data() const { return data_->data(); }
    const std::vector<S>& vec() const { return *data_; }
    S operator[](std::size_t i) const { return (*data_)[i]; }

    S at(std::initializer_list<std::size_t> idx) const {
        std::size_t flat = 0;
        std::size_t axis = 0;
        for (std::size_t i : idx) flat = flat * shape_.at(axis) + i, ++axis;
        return (*data_)[flat];
    }

    std::uint64_t id() const { return id_; }
    bool requires_grad() const { return requires_grad_; }
    TensorT& set_requires_grad(bool on) {
        requires_grad_ = on;
        return *this;
    }

    // New tensor sharing storage (fresh identity).
    TensorT reshaped(Shape shape) const {
        if (shape_numel(shape) != size())
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                             " changes element count");
        TensorT out;
        out.shape_ = std::move(shape);
        out.data_ = data_;
        out.id_ = detail::next_tensor_id();
        out.requires_grad_ = requires_grad_;
        return out;
    }

    template <typename T2>
    TensorT<T2> cast() const {
        std::vector<T2> buf(size());
        const S* src = data();
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<T2>(src[i]);
        return TensorT<T2>(shape_, std::move(buf));
    }

    bool all_finite() const {
        for (S v : *data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    // Fresh tensor with one element replaced; used by finite differencing.
    TensorT with_element(std::size_t flat, S value) const {
        std::vector<S> buf(*data_);
        buf.at(flat) = value;
        TensorT out(shape_, std::move(buf));
        out.requires_grad_ = requires_grad_;
        return out;
    }

   private:
    Shape shape_;
    std::shared_ptr<const std::vector<S>> data_;
    std::uint64_t id_ = 0;
    bool requires_grad_ = false;
};

using Tensor = TensorT<double>;
using TensorF = TensorT<float>;

template <typename S>
void check_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace dscope
