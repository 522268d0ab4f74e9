#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdnet {

// Error taxonomy; the CLI maps these onto exit codes.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

constexpr int kNoNode = -1;

// Dense row-major tensor. Data is held behind a shared_ptr so that passing
// tensors around (and capturing them in tape closures) is cheap; mutation
// goes through mutable_data(), which detaches from any shared buffer first.
template <typename T>
class TensorT {
public:
    using value_type = T;

    TensorT() : shape_{}, data_(std::make_shared<std::vector<T>>()) {}

    explicit TensorT(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<T>>(static_cast<size_t>(shape_numel(shape_)), T(0))) {}

    TensorT(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
        if (static_cast<int64_t>(values.size()) != shape_numel(shape_))
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape_));
        data_ = std::make_shared<std::vector<T>>(std::move(values));
    }

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

    static TensorT full(Shape shape, T value) {
        TensorT t(std::move(shape));
        std::fill(t.data_->begin(), t.data_->end(), value);
        return t;
    }

    static TensorT scalar(T value) { return TensorT(Shape{1}, {value}); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    size_t size() const { return data_->size(); }
    bool empty() const { return data_->empty(); }

    const std::vector<T>& data() const { return *data_; }
    const T* ptr() const { return data_->data(); }

    // Detaches from shared storage before handing out a writable view.
    std::vector<T>& mutable_data() {
        if (data_.use_count() > 1) data_ = std::make_shared<std::vector<T>>(*data_);
        return *data_;
    }
    T* mutable_ptr() { return mutable_data().data(); }

    T at(std::initializer_list<int> idx) const {
        assert(static_cast<int>(idx.size()) == rank());
        size_t flat = 0;
        int i = 0;
        for (int v : idx) flat = flat * static_cast<size_t>(shape_[i++]) + static_cast<size_t>(v);
        return (*data_)[flat];
    }

    int node() const { return node_; }
    void set_node(int id) { node_ = id; }

    template <typename U>
    TensorT<U> cast() const {
        std::vector<U> out(data_->size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>((*data_)[i]);
        return TensorT<U>(shape_, std::move(out));
    }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

private:
    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
    int node_ = kNoNode;
};

using Tensor = TensorT<float>;
using IntTensor = TensorT<int32_t>;

template <typename T>
inline void require_rank(const TensorT<T>& t, int rank, const char* what) {
    if (t.rank() != rank)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
}

template <typename T>
inline void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

template <typename T>
inline bool has_nan(const TensorT<T>& t) {
    for (T v : t.data())
        if (std::isnan(static_cast<double>(v))) return true;
    return false;
}

#ifndef NDEBUG
#define SDNET_DEBUG_FINITE(t, tag) assert(!::sdnet::has_nan(t) && tag)
#else
#define SDNET_DEBUG_FINITE(t, tag) ((void)0)
#endif

// Slices channels [c0, c1) of a [C,H,W] or [N,C,H,W] tensor. Plain utility,
// not a tape operation.
template <typename T>
inline TensorT<T> slice_channels(const TensorT<T>& x, int c0, int c1) {
    if (x.rank() != 3 && x.rank() != 4)
        throw ShapeError("slice_channels: expected rank 3 or 4, got " + shape_str(x.shape()));
    const int caxis = x.rank() - 3;
    const int C = x.dim(caxis);
    if (c0 < 0 || c1 > C || c0 >= c1)
        throw ShapeError("slice_channels: bad range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for " + shape_str(x.shape()));
    const int N = x.rank() == 4 ? x.dim(0) : 1;
    const int H = x.dim(caxis + 1), W = x.dim(caxis + 2);
    Shape out_shape = x.shape();
    out_shape[static_cast<size_t>(caxis)] = c1 - c0;
    TensorT<T> out(out_shape);
    const size_t plane = static_cast<size_t>(H) * W;
    const T* src = x.ptr();
    T* dst = out.mutable_ptr();
    for (int n = 0; n < N; ++n)
        std::copy_n(src + (static_cast<size_t>(n) * C + c0) * plane,
                    static_cast<size_t>(c1 - c0) * plane,
                    dst + static_cast<size_t>(n) * (c1 - c0) * plane);
    return out;
}

// Deterministic RNG. Mantissa-truncated draws keep initialization bit-stable
// regardless of the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(static_cast<uint32_t>(seed ^ (seed >> 32))) {}

    uint32_t next() { return gen_(); }

    float unit() { return static_cast<float>(next() >> 8) * (1.0f / 16777216.0f); }

    float uniform(float lo, float hi) { return lo + (hi - lo) * unit(); }

    double unit_d() {
        uint64_t hi = next(), lo = next();
        return static_cast<double>((hi << 21) ^ lo) / 9007199254740992.0;  // 2^53
    }

    // Unbiased-enough bounded draw (fixed-point multiply); deterministic everywhere.
    size_t index(size_t n) {
        return static_cast<size_t>((static_cast<uint64_t>(next()) * n) >> 32);
    }

    template <class It>
    void shuffle(It first, It last) {
        const size_t n = static_cast<size_t>(last - first);
        for (size_t i = n; i > 1; --i) std::swap(first[i - 1], first[index(i)]);
    }

    template <typename T>
    TensorT<T> uniform_tensor(Shape shape, T lo, T hi) {
        TensorT<T> t(std::move(shape));
        for (T& v : t.mutable_data()) v = static_cast<T>(uniform(static_cast<float>(lo), static_cast<float>(hi)));
        return t;
    }

private:
    std::mt19937 gen_;
};

}  // namespace sdnet
