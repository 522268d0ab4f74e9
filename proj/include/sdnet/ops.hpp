#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "sdnet/tape.hpp"
#include "sdnet/tensor.hpp"

namespace sdnet {

enum class Padding { kSame, kValid };

namespace detail {

// Spatial tensors are [C,H,W] or [N,C,H,W]; this folds the optional batch dim.
template <typename T>
struct Dims3 {
    int n, c, h, w;
    bool batched;
};

template <typename T>
Dims3<T> dims3(const TensorT<T>& x, const char* what) {
    if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2), false};
    if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), true};
    throw ShapeError(std::string(what) + ": expected [C,H,W] or [N,C,H,W], got " +
                     shape_str(x.shape()));
}

inline Shape with_batch(bool batched, int n, std::initializer_list<int> rest) {
    Shape s;
    if (batched) s.push_back(n);
    s.insert(s.end(), rest.begin(), rest.end());
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "add");
    TensorT<T> out(a.shape());
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.mutable_ptr();
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    SDNET_DEBUG_FINITE(out, "add produced NaN");
    if (tape && (a.node() != kNoNode || b.node() != kNoNode)) {
        const int ia = a.node(), ib = b.node();
        out.set_node(tape->add_node("add", out.shape(), {ia, ib},
                                    [ia, ib, n](TapeT<T>& t, const std::vector<T>& g) {
                                        t.accumulate(ia, g.data(), n);
                                        t.accumulate(ib, g.data(), n);
                                    }));
    }
    return out;
}

template <typename T>
TensorT<T> sub(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "sub");
    TensorT<T> out(a.shape());
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.mutable_ptr();
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    SDNET_DEBUG_FINITE(out, "sub produced NaN");
    if (tape && (a.node() != kNoNode || b.node() != kNoNode)) {
        const int ia = a.node(), ib = b.node();
        out.set_node(tape->add_node("sub", out.shape(), {ia, ib},
                                    [ia, ib, n](TapeT<T>& t, const std::vector<T>& g) {
                                        t.accumulate(ia, g.data(), n);
                                        if (auto* s = t.slot(ib, n))
                                            for (size_t i = 0; i < n; ++i) (*s)[i] -= g[i];
                                    }));
    }
    return out;
}

template <typename T>
TensorT<T> mul(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "mul");
    TensorT<T> out(a.shape());
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.mutable_ptr();
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    SDNET_DEBUG_FINITE(out, "mul produced NaN");
    if (tape && (a.node() != kNoNode || b.node() != kNoNode)) {
        const int ia = a.node(), ib = b.node();
        out.set_node(tape->add_node(
            "mul", out.shape(), {ia, ib},
            [ia, ib, a, b, n](TapeT<T>& t, const std::vector<T>& g) {
                if (auto* s = t.slot(ia, n)) {
                    const T* pb2 = b.ptr();
                    for (size_t i = 0; i < n; ++i) (*s)[i] += g[i] * pb2[i];
                }
                if (auto* s = t.slot(ib, n)) {
                    const T* pa2 = a.ptr();
                    for (size_t i = 0; i < n; ++i) (*s)[i] += g[i] * pa2[i];
                }
            }));
    }
    return out;
}

template <typename T>
TensorT<T> div(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "div");
    TensorT<T> out(a.shape());
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.mutable_ptr();
    const size_t n = a.size();
    for (size_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
    SDNET_DEBUG_FINITE(out, "div produced NaN");
    if (tape && (a.node() != kNoNode || b.node() != kNoNode)) {
        const int ia = a.node(), ib = b.node();
        out.set_node(tape->add_node(
            "div", out.shape(), {ia, ib},
            [ia, ib, a, b, n](TapeT<T>& t, const std::vector<T>& g) {
                const T* pa2 = a.ptr();
                const T* pb2 = b.ptr();
                if (auto* s = t.slot(ia, n))
                    for (size_t i = 0; i < n; ++i) (*s)[i] += g[i] / pb2[i];
                if (auto* s = t.slot(ib, n))
                    for (size_t i = 0; i < n; ++i)
                        (*s)[i] -= g[i] * pa2[i] / (pb2[i] * pb2[i]);
            }));
    }
    return out;
}

template <typename T>
TensorT<T> relu(TapeT<T>* tape, const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    const T* px = x.ptr();
    T* po = out.mutable_ptr();
    const size_t n = x.size();
    for (size_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
    if (tape && x.node() != kNoNode) {
        const int ix = x.node();
        out.set_node(tape->add_node("relu", out.shape(), {ix},
                                    [ix, x, n](TapeT<T>& t, const std::vector<T>& g) {
                                        if (auto* s = t.slot(ix, n)) {
                                            const T* px2 = x.ptr();
                                            for (size_t i = 0; i < n; ++i)
                                                if (px2[i] > T(0)) (*s)[i] += g[i];
                                        }
                                    }));
    }
    return out;
}

template <typename T>
TensorT<T> sigmoid(TapeT<T>* tape, const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    const T* px = x.ptr();
    T* po = out.mutable_ptr();
    const size_t n = x.size();
    for (size_t i = 0; i < n; ++i) {
        const T v = px[i];
        po[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                          : std::exp(v) / (T(1) + std::exp(v));
    }
    SDNET_DEBUG_FINITE(out, "sigmoid produced NaN");
    if (tape && x.node() != kNoNode) {
        const int ix = x.node();
        out.set_node(tape->add_node("sigmoid", out.shape(), {ix},
                                    [ix, out, n](TapeT<T>& t, const std::vector<T>& g) {
                                        if (auto* s = t.slot(ix, n)) {
                                            const T* py = out.ptr();
                                            for (size_t i = 0; i < n; ++i)
                                                (*s)[i] += g[i] * py[i] * (T(1) - py[i]);
                                        }
                                    }));
    }
    return out;
}

template <typename T>
TensorT<T> tanh_op(TapeT<T>* tape, const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    const T* px = x.ptr();
    T* po = out.mutable_ptr();
    const size_t n = x.size();
    for (size_t i = 0; i < n; ++i) po[i] = std::tanh(px[i]);
    SDNET_DEBUG_FINITE(out, "tanh produced NaN");
    if (tape && x.node() != kNoNode) {
        const int ix = x.node();
        out.set_node(tape->add_node("tanh", out.shape(), {ix},
                                    [ix, out, n](TapeT<T>& t, const std::vector<T>& g) {
                                        if (auto* s = t.slot(ix, n)) {
                                            const T* py = out.ptr();
                                            for (size_t i = 0; i < n; ++i)
                                                (*s)[i] += g[i] * (T(1) - py[i] * py[i]);
                                        }
                                    }));
    }
    return out;
}

template <typename T>
TensorT<T> one_minus(TapeT<T>* tape, const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    const T* px = x.ptr();
    T* po = out.mutable_ptr();
    const size_t n = x.size();
    for (size_t i = 0; i < n; ++i) po[i] = T(1) - px[i];
    if (tape && x.node() != kNoNode) {
        const int ix = x.node();
        out.set_node(tape->add_node("one_minus", out.shape(), {ix},
                                    [ix, n](TapeT<T>& t, const std::vector<T>& g) {
                                        if (auto* s = t.slot(ix, n))
                                            for (size_t i = 0; i < n; ++i) (*s)[i] -= g[i];
                                    }));
    }
    return out;
}

template <typename T>
TensorT<T> scale(TapeT<T>* tape, const TensorT<T>& x, T factor) {
    TensorT<T> out(x.shape());
    const T* px = x.ptr();
    T* po = out.mutable_ptr();
    const size_t n = x.size();
    for (size_t i = 0; i < n; ++i) po[i] = px[i] * factor;
    if (tape && x.node() != kNoNode) {
        const int ix = x.node();
        out.set_node(tape->add_node("scale", out.shape(), {ix},
                                    [ix, factor, n](TapeT<T>& t, const std::vector<T>& g) {
                                        if (auto* s = t.slot(ix, n))
                                            for (size_t i = 0; i < n; ++i)
                                                (*s)[i] += g[i] * factor;
                                    }));
    }
    return out;
}

template <typename T>
TensorT<T> add_scalar(TapeT<T>* tape, const TensorT<T>& x, T value) {
    TensorT<T> out(x.shape());
    const T* px = x.ptr();
    T* po = out.mutable_ptr();
    const size_t n = x.size();
    for (size_t i = 0; i < n; ++i) po[i] = px[i] + value;
    if (tape && x.node() != kNoNode) {
        const int ix = x.node();
        out.set_node(tape->add_node("add_scalar", out.shape(), {ix},
                                    [ix, n](TapeT<T>& t, const std::vector<T>& g) {
                                        t.accumulate(ix, g.data(), n);
                                    }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions and structure
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum(TapeT<T>* tape, const TensorT<T>& x) {
    double acc = 0.0;
    for (T v : x.data()) acc += static_cast<double>(v);
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc));
    if (tape && x.node() != kNoNode) {
        const int ix = x.node();
        const size_t n = x.size();
        out.set_node(tape->add_node("sum", out.shape(), {ix},
                                    [ix, n](TapeT<T>& t, const std::vector<T>& g) {
                                        if (auto* s = t.slot(ix, n))
                                            for (size_t i = 0; i < n; ++i) (*s)[i] += g[0];
                                    }));
    }
    return out;
}

// Sums over the spatial dims of [N,K,H,W], producing [N,K].
template <typename T>
TensorT<T> sum_spatial(TapeT<T>* tape, const TensorT<T>& x) {
    require_rank(x, 4, "sum_spatial");
    const int N = x.dim(0), K = x.dim(1);
    const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
    TensorT<T> out(Shape{N, K});
    const T* px = x.ptr();
    T* po = out.mutable_ptr();
    for (int i = 0; i < N * K; ++i) {
        double acc = 0.0;
        const T* p = px + static_cast<size_t>(i) * plane;
        for (size_t j = 0; j < plane; ++j) acc += static_cast<double>(p[j]);
        po[i] = static_cast<T>(acc);
    }
    if (tape && x.node() != kNoNode) {
        const int ix = x.node();
        const int nk = N * K;
        out.set_node(tape->add_node(
            "sum_spatial", out.shape(), {ix},
            [ix, nk, plane](TapeT<T>& t, const std::vector<T>& g) {
                if (auto* s = t.slot(ix, static_cast<size_t>(nk) * plane))
                    for (int i = 0; i < nk; ++i) {
                        T* p = s->data() + static_cast<size_t>(i) * plane;
                        for (size_t j = 0; j < plane; ++j) p[j] += g[static_cast<size_t>(i)];
                    }
            }));
    }
    return out;
}

// Extracts one scalar as a [1] tensor (used as a backward root for probes).
template <typename T>
TensorT<T> pick(TapeT<T>* tape, const TensorT<T>& x, size_t flat_index) {
    if (flat_index >= x.size())
        throw ContractError("pick: index " + std::to_string(flat_index) + " out of range for " +
                            shape_str(x.shape()));
    TensorT<T> out = TensorT<T>::scalar(x.data()[flat_index]);
    if (tape && x.node() != kNoNode) {
        const int ix = x.node();
        const size_t n = x.size();
        out.set_node(tape->add_node("pick", out.shape(), {ix},
                                    [ix, n, flat_index](TapeT<T>& t, const std::vector<T>& g) {
                                        if (auto* s = t.slot(ix, n)) (*s)[flat_index] += g[0];
                                    }));
    }
    return out;
}

template <typename T>
TensorT<T> concat_channels(TapeT<T>* tape, const std::vector<TensorT<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    const auto d0 = detail::dims3(xs[0], "concat_channels");
    int ctotal = 0;
    for (const auto& x : xs) {
        const auto d = detail::dims3(x, "concat_channels");
        if (d.n != d0.n || d.h != d0.h || d.w != d0.w || d.batched != d0.batched)
            throw ShapeError("concat_channels: incompatible shapes " + shape_str(xs[0].shape()) +
                             " vs " + shape_str(x.shape()));
        ctotal += d.c;
    }
    TensorT<T> out(detail::with_batch(d0.batched, d0.n, {ctotal, d0.h, d0.w}));
    const size_t plane = static_cast<size_t>(d0.h) * d0.w;
    T* po = out.mutable_ptr();
    for (int n = 0; n < d0.n; ++n) {
        size_t coff = 0;
        for (const auto& x : xs) {
            const int c = x.dim(x.rank() - 3);
            std::copy_n(x.ptr() + static_cast<size_t>(n) * c * plane, static_cast<size_t>(c) * plane,
                        po + (static_cast<size_t>(n) * ctotal + coff) * plane);
            coff += static_cast<size_t>(c);
        }
    }
    bool tracked = false;
    std::vector<int> parents;
    std::vector<int> widths;
    for (const auto& x : xs) {
        parents.push_back(x.node());
        widths.push_back(x.dim(x.rank() - 3));
        tracked = tracked || x.node() != kNoNode;
    }
    if (tape && tracked) {
        const int N = d0.n, C = ctotal;
        out.set_node(tape->add_node(
            "concat_channels", out.shape(), parents,
            [parents, widths, N, C, plane](TapeT<T>& t, const std::vector<T>& g) {
                size_t coff = 0;
                for (size_t k = 0; k < parents.size(); ++k) {
                    const int c = widths[k];
                    if (auto* s = t.slot(parents[k], static_cast<size_t>(N) * c * plane)) {
                        for (int n = 0; n < N; ++n) {
                            const T* src = g.data() + (static_cast<size_t>(n) * C + coff) * plane;
                            T* dst = s->data() + static_cast<size_t>(n) * c * plane;
                            for (size_t j = 0; j < static_cast<size_t>(c) * plane; ++j) dst[j] += src[j];
                        }
                    }
                    coff += static_cast<size_t>(c);
                }
            }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Spatial operations
// ---------------------------------------------------------------------------

// Pixelwise affine map: every channel vector is multiplied by weight [C_in,C_out]
// and shifted by bias [C_out]. Spatial dims are untouched.
template <typename T>
TensorT<T> affine_pointwise(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& weight,
                            const TensorT<T>& bias) {
    const auto d = detail::dims3(x, "affine_pointwise");
    require_rank(weight, 2, "affine_pointwise weight");
    require_rank(bias, 1, "affine_pointwise bias");
    const int cin = weight.dim(0), cout = weight.dim(1);
    if (d.c != cin || bias.dim(0) != cout)
        throw ShapeError("affine_pointwise: x " + shape_str(x.shape()) + " incompatible with W " +
                         shape_str(weight.shape()) + ", b " + shape_str(bias.shape()));
    const size_t plane = static_cast<size_t>(d.h) * d.w;
    TensorT<T> out(detail::with_batch(d.batched, d.n, {cout, d.h, d.w}));
    const T* px = x.ptr();
    const T* pw = weight.ptr();
    const T* pb = bias.ptr();
    T* po = out.mutable_ptr();
    for (int n = 0; n < d.n; ++n) {
        for (int co = 0; co < cout; ++co) {
            T* yp = po + (static_cast<size_t>(n) * cout + co) * plane;
            std::fill_n(yp, plane, pb[co]);
        }
        for (int ci = 0; ci < cin; ++ci) {
            const T* xp = px + (static_cast<size_t>(n) * cin + ci) * plane;
            for (int co = 0; co < cout; ++co) {
                const T w = pw[static_cast<size_t>(ci) * cout + co];
                T* yp = po + (static_cast<size_t>(n) * cout + co) * plane;
                for (size_t j = 0; j < plane; ++j) yp[j] += w * xp[j];
            }
        }
    }
    SDNET_DEBUG_FINITE(out, "affine_pointwise produced NaN");
    if (tape && (x.node() != kNoNode || weight.node() != kNoNode || bias.node() != kNoNode)) {
        const int ix = x.node(), iw = weight.node(), ib = bias.node();
        const int N = d.n;
        out.set_node(tape->add_node(
            "affine_pointwise", out.shape(), {ix, iw, ib},
            [ix, iw, ib, x, weight, N, cin, cout, plane](TapeT<T>& t, const std::vector<T>& g) {
                const T* px2 = x.ptr();
                const T* pw2 = weight.ptr();
                auto* sx = t.slot(ix, static_cast<size_t>(N) * cin * plane);
                auto* sw = t.slot(iw, static_cast<size_t>(cin) * cout);
                auto* sb = t.slot(ib, static_cast<size_t>(cout));
                for (int n = 0; n < N; ++n) {
                    for (int ci = 0; ci < cin; ++ci) {
                        const T* xp = px2 + (static_cast<size_t>(n) * cin + ci) * plane;
                        T* dxp = sx ? sx->data() + (static_cast<size_t>(n) * cin + ci) * plane : nullptr;
                        for (int co = 0; co < cout; ++co) {
                            const T* gp = g.data() + (static_cast<size_t>(n) * cout + co) * plane;
                            const T w = pw2[static_cast<size_t>(ci) * cout + co];
                            if (dxp)
                                for (size_t j = 0; j < plane; ++j) dxp[j] += w * gp[j];
                            if (sw) {
                                T acc = 0;
                                for (size_t j = 0; j < plane; ++j) acc += xp[j] * gp[j];
                                (*sw)[static_cast<size_t>(ci) * cout + co] += acc;
                            }
                        }
                    }
                    if (sb)
                        for (int co = 0; co < cout; ++co) {
                            const T* gp = g.data() + (static_cast<size_t>(n) * cout + co) * plane;
                            T acc = 0;
                            for (size_t j = 0; j < plane; ++j) acc += gp[j];
                            (*sb)[static_cast<size_t>(co)] += acc;
                        }
                }
            }));
    }
    return out;
}

// 2-D cross-correlation, stride 1, odd square kernel [C_out,C_in,k,k],
// zero same-padding or valid. Bias may be empty.
template <typename T>
TensorT<T> conv2d(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& kernel,
                  const TensorT<T>& bias, Padding padding = Padding::kSame) {
    const auto d = detail::dims3(x, "conv2d");
    require_rank(kernel, 4, "conv2d kernel");
    const int cout = kernel.dim(0), cin = kernel.dim(1), k = kernel.dim(2);
    if (kernel.dim(3) != k) throw ConfigError("conv2d: kernel must be square, got " + shape_str(kernel.shape()));
    if (k % 2 == 0) throw ConfigError("conv2d: kernel size must be odd, got " + std::to_string(k));
    if (cin != d.c)
        throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                         shape_str(kernel.shape()));
    if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != cout))
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " incompatible with kernel " +
                         shape_str(kernel.shape()));
    const int pad = padding == Padding::kSame ? (k - 1) / 2 : 0;
    const int ho = padding == Padding::kSame ? d.h : d.h - k + 1;
    const int wo = padding == Padding::kSame ? d.w : d.w - k + 1;
    if (ho <= 0 || wo <= 0)
        throw ShapeError("conv2d: kernel " + std::to_string(k) + " too large for input " +
                         shape_str(x.shape()));

    TensorT<T> out(detail::with_batch(d.batched, d.n, {cout, ho, wo}));
    const size_t iplane = static_cast<size_t>(d.h) * d.w;
    const size_t oplane = static_cast<size_t>(ho) * wo;
    const T* px = x.ptr();
    const T* pk = kernel.ptr();
    const T* pb = bias.empty() ? nullptr : bias.ptr();
    T* po = out.mutable_ptr();
    const int H = d.h, W = d.w;
    for (int n = 0; n < d.n; ++n) {
        for (int co = 0; co < cout; ++co) {
            T* yp = po + (static_cast<size_t>(n) * cout + co) * oplane;
            std::fill_n(yp, oplane, pb ? pb[co] : T(0));
            for (int ci = 0; ci < cin; ++ci) {
                const T* xp = px + (static_cast<size_t>(n) * cin + ci) * iplane;
                const T* kp = pk + (static_cast<size_t>(co) * cin + ci) * k * k;
                for (int kh = 0; kh < k; ++kh) {
                    for (int kw = 0; kw < k; ++kw) {
                        const T w = kp[static_cast<size_t>(kh) * k + kw];
                        const int dh = kh - pad, dw = kw - pad;
                        const int h0 = std::max(0, -dh), h1 = std::min(ho, H - dh);
                        const int w0 = std::max(0, -dw), w1 = std::min(wo, W - dw);
                        for (int oh = h0; oh < h1; ++oh) {
                            const T* xrow = xp + static_cast<size_t>(oh + dh) * W + dw;
                            T* yrow = yp + static_cast<size_t>(oh) * wo;
                            for (int ow = w0; ow < w1; ++ow) yrow[ow] += w * xrow[ow];
                        }
                    }
                }
            }
        }
    }
    SDNET_DEBUG_FINITE(out, "conv2d produced NaN");
    if (tape && (x.node() != kNoNode || kernel.node() != kNoNode || bias.node() != kNoNode)) {
        const int ix = x.node(), ik = kernel.node(), ib = bias.node();
        const int N = d.n;
        out.set_node(tape->add_node(
            "conv2d", out.shape(), {ix, ik, ib},
            [=](TapeT<T>& t, const std::vector<T>& g) {
                const T* px2 = x.ptr();
                const T* pk2 = kernel.ptr();
                auto* sx = t.slot(ix, static_cast<size_t>(N) * cin * iplane);
                auto* sk = t.slot(ik, static_cast<size_t>(cout) * cin * k * k);
                auto* sb = t.slot(ib, static_cast<size_t>(cout));
                for (int n = 0; n < N; ++n) {
                    for (int co = 0; co < cout; ++co) {
                        const T* gp = g.data() + (static_cast<size_t>(n) * cout + co) * oplane;
                        if (sb) {
                            T acc = 0;
                            for (size_t j = 0; j < oplane; ++j) acc += gp[j];
                            (*sb)[static_cast<size_t>(co)] += acc;
                        }
                        for (int ci = 0; ci < cin; ++ci) {
                            const T* xp = px2 + (static_cast<size_t>(n) * cin + ci) * iplane;
                            T* dxp = sx ? sx->data() + (static_cast<size_t>(n) * cin + ci) * iplane
                                        : nullptr;
                            const T* kp = pk2 + (static_cast<size_t>(co) * cin + ci) * k * k;
                            T* dkp = sk ? sk->data() + (static_cast<size_t>(co) * cin + ci) * k * k
                                        : nullptr;
                            for (int kh = 0; kh < k; ++kh) {
                                for (int kw = 0; kw < k; ++kw) {
                                    const int dh = kh - pad, dw = kw - pad;
                                    const int h0 = std::max(0, -dh), h1 = std::min(ho, H - dh);
                                    const int w0 = std::max(0, -dw), w1 = std::min(wo, W - dw);
                                    const T w = kp[static_cast<size_t>(kh) * k + kw];
                                    T wacc = 0;
                                    for (int oh = h0; oh < h1; ++oh) {
                                        const T* xrow = xp + static_cast<size_t>(oh + dh) * W + dw;
                                        T* dxrow = dxp ? dxp + static_cast<size_t>(oh + dh) * W + dw
                                                       : nullptr;
                                        const T* grow = gp + static_cast<size_t>(oh) * wo;
                                        if (dxrow)
                                            for (int ow = w0; ow < w1; ++ow)
                                                dxrow[ow] += w * grow[ow];
                                        for (int ow = w0; ow < w1; ++ow)
                                            wacc += xrow[ow] * grow[ow];
                                    }
                                    if (dkp) dkp[static_cast<size_t>(kh) * k + kw] += wacc;
                                }
                            }
                        }
                    }
                }
            }));
    }
    return out;
}

// 1-D cross-correlation along the last axis of [C,L] or [N,C,L];
// same-padding, stride 1, odd kernel [C_out,C,k]. Bias may be empty.
template <typename T>
TensorT<T> conv1d_axis(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& kernel,
                       const TensorT<T>& bias) {
    int N = 1, C = 0, L = 0;
    bool batched = false;
    if (x.rank() == 2) {
        C = x.dim(0);
        L = x.dim(1);
    } else if (x.rank() == 3) {
        batched = true;
        N = x.dim(0);
        C = x.dim(1);
        L = x.dim(2);
    } else {
        throw ShapeError("conv1d_axis: expected [C,L] or [N,C,L], got " + shape_str(x.shape()));
    }
    require_rank(kernel, 3, "conv1d_axis kernel");
    const int cout = kernel.dim(0), cin = kernel.dim(1), k = kernel.dim(2);
    if (k % 2 == 0) throw ConfigError("conv1d_axis: kernel width must be odd, got " + std::to_string(k));
    if (cin != C)
        throw ShapeError("conv1d_axis: input " + shape_str(x.shape()) + " incompatible with kernel " +
                         shape_str(kernel.shape()));
    if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != cout))
        throw ShapeError("conv1d_axis: bias " + shape_str(bias.shape()) + " incompatible with kernel " +
                         shape_str(kernel.shape()));
    const int pad = (k - 1) / 2;
    TensorT<T> out(batched ? Shape{N, cout, L} : Shape{cout, L});
    const T* px = x.ptr();
    const T* pk = kernel.ptr();
    const T* pb = bias.empty() ? nullptr : bias.ptr();
    T* po = out.mutable_ptr();
    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < cout; ++co) {
            T* yp = po + (static_cast<size_t>(n) * cout + co) * L;
            std::fill_n(yp, static_cast<size_t>(L), pb ? pb[co] : T(0));
            for (int ci = 0; ci < C; ++ci) {
                const T* xp = px + (static_cast<size_t>(n) * C + ci) * L;
                for (int kk = 0; kk < k; ++kk) {
                    const T w = pk[(static_cast<size_t>(co) * C + ci) * k + kk];
                    const int dl = kk - pad;
                    const int l0 = std::max(0, -dl), l1 = std::min(L, L - dl);
                    for (int l = l0; l < l1; ++l) yp[l] += w * xp[l + dl];
                }
            }
        }
    }
    SDNET_DEBUG_FINITE(out, "conv1d_axis produced NaN");
    if (tape && (x.node() != kNoNode || kernel.node() != kNoNode || bias.node() != kNoNode)) {
        const int ix = x.node(), ik = kernel.node(), ib = bias.node();
        out.set_node(tape->add_node(
            "conv1d_axis", out.shape(), {ix, ik, ib},
            [=](TapeT<T>& t, const std::vector<T>& g) {
                const T* px2 = x.ptr();
                const T* pk2 = kernel.ptr();
                auto* sx = t.slot(ix, static_cast<size_t>(N) * C * L);
                auto* sk = t.slot(ik, static_cast<size_t>(cout) * C * k);
                auto* sb = t.slot(ib, static_cast<size_t>(cout));
                for (int n = 0; n < N; ++n) {
                    for (int co = 0; co < cout; ++co) {
                        const T* gp = g.data() + (static_cast<size_t>(n) * cout + co) * L;
                        if (sb) {
                            T acc = 0;
                            for (int l = 0; l < L; ++l) acc += gp[l];
                            (*sb)[static_cast<size_t>(co)] += acc;
                        }
                        for (int ci = 0; ci < C; ++ci) {
                            const T* xp = px2 + (static_cast<size_t>(n) * C + ci) * L;
                            T* dxp = sx ? sx->data() + (static_cast<size_t>(n) * C + ci) * L : nullptr;
                            for (int kk = 0; kk < k; ++kk) {
                                const int dl = kk - pad;
                                const int l0 = std::max(0, -dl), l1 = std::min(L, L - dl);
                                const T w = pk2[(static_cast<size_t>(co) * C + ci) * k + kk];
                                T wacc = 0;
                                for (int l = l0; l < l1; ++l) {
                                    if (dxp) dxp[l + dl] += w * gp[l];
                                    wacc += xp[l + dl] * gp[l];
                                }
                                if (sk) (*sk)[(static_cast<size_t>(co) * C + ci) * k + kk] += wacc;
                            }
                        }
                    }
                }
            }));
    }
    return out;
}

// 2x2 max pooling with stride 2; H and W must be even. Ties resolve to the
// first maximum in scan order, which keeps backward deterministic.
template <typename T>
TensorT<T> maxpool2(TapeT<T>* tape, const TensorT<T>& x) {
    const auto d = detail::dims3(x, "maxpool2");
    if (d.h % 2 != 0 || d.w % 2 != 0)
        throw ShapeError("maxpool2: H and W must be even, got " + shape_str(x.shape()));
    const int ho = d.h / 2, wo = d.w / 2;
    TensorT<T> out(detail::with_batch(d.batched, d.n, {d.c, ho, wo}));
    const size_t iplane = static_cast<size_t>(d.h) * d.w;
    const size_t oplane = static_cast<size_t>(ho) * wo;
    const T* px = x.ptr();
    T* po = out.mutable_ptr();
    std::vector<int32_t> argmax(static_cast<size_t>(d.n) * d.c * oplane);
    const int W = d.w;
    for (int nc = 0; nc < d.n * d.c; ++nc) {
        const T* xp = px + static_cast<size_t>(nc) * iplane;
        T* yp = po + static_cast<size_t>(nc) * oplane;
        int32_t* ap = argmax.data() + static_cast<size_t>(nc) * oplane;
        for (int oh = 0; oh < ho; ++oh) {
            for (int ow = 0; ow < wo; ++ow) {
                const int base = (2 * oh) * W + 2 * ow;
                int best = base;
                T bv = xp[base];
                const std::array<int, 3> rest{base + 1, base + W, base + W + 1};
                for (int idx : rest)
                    if (xp[idx] > bv) {
                        bv = xp[idx];
                        best = idx;
                    }
                yp[static_cast<size_t>(oh) * wo + ow] = bv;
                ap[static_cast<size_t>(oh) * wo + ow] = best;
            }
        }
    }
    if (tape && x.node() != kNoNode) {
        const int ix = x.node();
        const int planes = d.n * d.c;
        out.set_node(tape->add_node(
            "maxpool2", out.shape(), {ix},
            [ix, argmax = std::move(argmax), planes, iplane, oplane](TapeT<T>& t,
                                                                     const std::vector<T>& g) {
                if (auto* s = t.slot(ix, static_cast<size_t>(planes) * iplane))
                    for (int nc = 0; nc < planes; ++nc) {
                        const T* gp = g.data() + static_cast<size_t>(nc) * oplane;
                        const int32_t* ap = argmax.data() + static_cast<size_t>(nc) * oplane;
                        T* sp = s->data() + static_cast<size_t>(nc) * iplane;
                        for (size_t j = 0; j < oplane; ++j) sp[ap[j]] += gp[j];
                    }
            }));
    }
    return out;
}

template <typename T>
TensorT<T> upsample_nearest2(TapeT<T>* tape, const TensorT<T>& x) {
    const auto d = detail::dims3(x, "upsample_nearest2");
    const int ho = d.h * 2, wo = d.w * 2;
    TensorT<T> out(detail::with_batch(d.batched, d.n, {d.c, ho, wo}));
    const size_t iplane = static_cast<size_t>(d.h) * d.w;
    const size_t oplane = static_cast<size_t>(ho) * wo;
    const T* px = x.ptr();
    T* po = out.mutable_ptr();
    for (int nc = 0; nc < d.n * d.c; ++nc) {
        const T* xp = px + static_cast<size_t>(nc) * iplane;
        T* yp = po + static_cast<size_t>(nc) * oplane;
        for (int h = 0; h < ho; ++h) {
            const T* xrow = xp + static_cast<size_t>(h / 2) * d.w;
            T* yrow = yp + static_cast<size_t>(h) * wo;
            for (int w = 0; w < wo; ++w) yrow[w] = xrow[w / 2];
        }
    }
    if (tape && x.node() != kNoNode) {
        const int ix = x.node();
        const int planes = d.n * d.c, iw = d.w;
        out.set_node(tape->add_node(
            "upsample_nearest2", out.shape(), {ix},
            [ix, planes, iplane, oplane, iw, ho, wo](TapeT<T>& t, const std::vector<T>& g) {
                if (auto* s = t.slot(ix, static_cast<size_t>(planes) * iplane))
                    for (int nc = 0; nc < planes; ++nc) {
                        const T* gp = g.data() + static_cast<size_t>(nc) * oplane;
                        T* sp = s->data() + static_cast<size_t>(nc) * iplane;
                        for (int h = 0; h < ho; ++h) {
                            T* srow = sp + static_cast<size_t>(h / 2) * iw;
                            const T* grow = gp + static_cast<size_t>(h) * wo;
                            for (int w = 0; w < wo; ++w) srow[w / 2] += grow[w];
                        }
                    }
            }));
    }
    return out;
}

// Column/row extraction and reassembly used by the directional sweeps.
template <typename T>
TensorT<T> take_col(TapeT<T>* tape, const TensorT<T>& x, int col) {
    const auto d = detail::dims3(x, "take_col");
    if (col < 0 || col >= d.w)
        throw ShapeError("take_col: column " + std::to_string(col) + " out of range for " +
                         shape_str(x.shape()));
    TensorT<T> out(detail::with_batch(d.batched, d.n, {d.c, d.h}));
    const T* px = x.ptr();
    T* po = out.mutable_ptr();
    for (int nc = 0; nc < d.n * d.c; ++nc) {
        const T* xp = px + static_cast<size_t>(nc) * d.h * d.w + col;
        T* yp = po + static_cast<size_t>(nc) * d.h;
        for (int h = 0; h < d.h; ++h) yp[h] = xp[static_cast<size_t>(h) * d.w];
    }
    if (tape && x.node() != kNoNode) {
        const int ix = x.node();
        const int planes = d.n * d.c, H = d.h, W = d.w;
        out.set_node(tape->add_node(
            "take_col", out.shape(), {ix},
            [ix, planes, H, W, col](TapeT<T>& t, const std::vector<T>& g) {
                if (auto* s = t.slot(ix, static_cast<size_t>(planes) * H * W))
                    for (int nc = 0; nc < planes; ++nc) {
                        T* sp = s->data() + static_cast<size_t>(nc) * H * W + col;
                        const T* gp = g.data() + static_cast<size_t>(nc) * H;
                        for (int h = 0; h < H; ++h) sp[static_cast<size_t>(h) * W] += gp[h];
                    }
            }));
    }
    return out;
}

template <typename T>
TensorT<T> take_row(TapeT<T>* tape, const TensorT<T>& x, int row) {
    const auto d = detail::dims3(x, "take_row");
    if (row < 0 || row >= d.h)
        throw ShapeError("take_row: row " + std::to_string(row) + " out of range for " +
                         shape_str(x.shape()));
    TensorT<T> out(detail::with_batch(d.batched, d.n, {d.c, d.w}));
    const T* px = x.ptr();
    T* po = out.mutable_ptr();
    for (int nc = 0; nc < d.n * d.c; ++nc)
        std::copy_n(px + (static_cast<size_t>(nc) * d.h + row) * d.w, static_cast<size_t>(d.w),
                    po + static_cast<size_t>(nc) * d.w);
    if (tape && x.node() != kNoNode) {
        const int ix = x.node();
        const int planes = d.n * d.c, H = d.h, W = d.w;
        out.set_node(tape->add_node(
            "take_row", out.shape(), {ix},
            [ix, planes, H, W, row](TapeT<T>& t, const std::vector<T>& g) {
                if (auto* s = t.slot(ix, static_cast<size_t>(planes) * H * W))
                    for (int nc = 0; nc < planes; ++nc) {
                        T* sp = s->data() + (static_cast<size_t>(nc) * H + row) * W;
                        const T* gp = g.data() + static_cast<size_t>(nc) * W;
                        for (int w = 0; w < W; ++w) sp[w] += gp[w];
                    }
            }));
    }
    return out;
}

// Reassembles W column tensors [.,C,H] into [.,C,H,W] (cols[x] becomes column x).
template <typename T>
TensorT<T> stack_cols(TapeT<T>* tape, const std::vector<TensorT<T>>& cols) {
    if (cols.empty()) throw ShapeError("stack_cols: no inputs");
    const TensorT<T>& c0 = cols[0];
    if (c0.rank() != 2 && c0.rank() != 3)
        throw ShapeError("stack_cols: expected [C,H] or [N,C,H] parts, got " + shape_str(c0.shape()));
    const bool batched = c0.rank() == 3;
    const int N = batched ? c0.dim(0) : 1;
    const int C = c0.dim(batched ? 1 : 0), H = c0.dim(batched ? 2 : 1);
    const int W = static_cast<int>(cols.size());
    for (const auto& c : cols) require_same_shape(c, c0, "stack_cols");
    TensorT<T> out(detail::with_batch(batched, N, {C, H, W}));
    T* po = out.mutable_ptr();
    bool tracked = false;
    std::vector<int> parents;
    for (int x = 0; x < W; ++x) {
        const T* cp = cols[static_cast<size_t>(x)].ptr();
        for (int nc = 0; nc < N * C; ++nc) {
            T* yp = po + static_cast<size_t>(nc) * H * W + x;
            const T* sp = cp + static_cast<size_t>(nc) * H;
            for (int h = 0; h < H; ++h) yp[static_cast<size_t>(h) * W] = sp[h];
        }
        parents.push_back(cols[static_cast<size_t>(x)].node());
        tracked = tracked || parents.back() != kNoNode;
    }
    if (tape && tracked) {
        const int planes = N * C;
        out.set_node(tape->add_node(
            "stack_cols", out.shape(), parents,
            [parents, planes, H, W](TapeT<T>& t, const std::vector<T>& g) {
                for (int x = 0; x < W; ++x) {
                    if (auto* s = t.slot(parents[static_cast<size_t>(x)],
                                         static_cast<size_t>(planes) * H)) {
                        for (int nc = 0; nc < planes; ++nc) {
                            const T* gp = g.data() + static_cast<size_t>(nc) * H * W + x;
                            T* sp = s->data() + static_cast<size_t>(nc) * H;
                            for (int h = 0; h < H; ++h) sp[h] += gp[static_cast<size_t>(h) * W];
                        }
                    }
                }
            }));
    }
    return out;
}

template <typename T>
TensorT<T> stack_rows(TapeT<T>* tape, const std::vector<TensorT<T>>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows: no inputs");
    const TensorT<T>& r0 = rows[0];
    if (r0.rank() != 2 && r0.rank() != 3)
        throw ShapeError("stack_rows: expected [C,W] or [N,C,W] parts, got " + shape_str(r0.shape()));
    const bool batched = r0.rank() == 3;
    const int N = batched ? r0.dim(0) : 1;
    const int C = r0.dim(batched ? 1 : 0), W = r0.dim(batched ? 2 : 1);
    const int H = static_cast<int>(rows.size());
    for (const auto& r : rows) require_same_shape(r, r0, "stack_rows");
    TensorT<T> out(detail::with_batch(batched, N, {C, H, W}));
    T* po = out.mutable_ptr();
    bool tracked = false;
    std::vector<int> parents;
    for (int y = 0; y < H; ++y) {
        const T* rp = rows[static_cast<size_t>(y)].ptr();
        for (int nc = 0; nc < N * C; ++nc)
            std::copy_n(rp + static_cast<size_t>(nc) * W, static_cast<size_t>(W),
                        po + (static_cast<size_t>(nc) * H + y) * W);
        parents.push_back(rows[static_cast<size_t>(y)].node());
        tracked = tracked || parents.back() != kNoNode;
    }
    if (tape && tracked) {
        const int planes = N * C;
        out.set_node(tape->add_node(
            "stack_rows", out.shape(), parents,
            [parents, planes, H, W](TapeT<T>& t, const std::vector<T>& g) {
                for (int y = 0; y < H; ++y) {
                    if (auto* s = t.slot(parents[static_cast<size_t>(y)],
                                         static_cast<size_t>(planes) * W)) {
                        for (int nc = 0; nc < planes; ++nc) {
                            const T* gp = g.data() + (static_cast<size_t>(nc) * H + y) * W;
                            T* sp = s->data() + static_cast<size_t>(nc) * W;
                            for (int w = 0; w < W; ++w) sp[w] += gp[w];
                        }
                    }
                }
            }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

// Per-channel batch normalization over [N,C,H,W]. Train mode normalizes with
// batch statistics and folds them into the running estimates (momentum 0.1);
// eval mode normalizes with the running estimates. eps = 1e-5.
template <typename T>
TensorT<T> batchnorm(TapeT<T>* tape, const TensorT<T>& x, const TensorT<T>& gamma,
                     const TensorT<T>& beta, TensorT<T>& running_mean, TensorT<T>& running_var,
                     bool training, T momentum = T(0.1), T eps = T(1e-5)) {
    require_rank(x, 4, "batchnorm");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C ||
        running_mean.dim(0) != C || running_var.dim(0) != C)
        throw ShapeError("batchnorm: parameter shapes incompatible with input " +
                         shape_str(x.shape()));
    const size_t plane = static_cast<size_t>(H) * W;
    const size_t cstride = plane;  // within one sample
    const size_t m = static_cast<size_t>(N) * plane;

    std::vector<T> mean(static_cast<size_t>(C)), istd(static_cast<size_t>(C));
    const T* px = x.ptr();
    if (training) {
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int n = 0; n < N; ++n) {
                const T* p = px + (static_cast<size_t>(n) * C + c) * cstride;
                for (size_t j = 0; j < plane; ++j) acc += static_cast<double>(p[j]);
            }
            const double mu = acc / static_cast<double>(m);
            double vacc = 0.0;
            for (int n = 0; n < N; ++n) {
                const T* p = px + (static_cast<size_t>(n) * C + c) * cstride;
                for (size_t j = 0; j < plane; ++j) {
                    const double dv = static_cast<double>(p[j]) - mu;
                    vacc += dv * dv;
                }
            }
            const double var = vacc / static_cast<double>(m);
            mean[static_cast<size_t>(c)] = static_cast<T>(mu);
            istd[static_cast<size_t>(c)] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            running_mean.mutable_data()[static_cast<size_t>(c)] =
                (T(1) - momentum) * running_mean.data()[static_cast<size_t>(c)] + momentum * static_cast<T>(mu);
            running_var.mutable_data()[static_cast<size_t>(c)] =
                (T(1) - momentum) * running_var.data()[static_cast<size_t>(c)] + momentum * static_cast<T>(var);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean[static_cast<size_t>(c)] = running_mean.data()[static_cast<size_t>(c)];
            istd[static_cast<size_t>(c)] = static_cast<T>(
                1.0 / std::sqrt(static_cast<double>(running_var.data()[static_cast<size_t>(c)]) +
                                static_cast<double>(eps)));
        }
    }

    TensorT<T> xhat(x.shape());
    TensorT<T> out(x.shape());
    T* ph = xhat.mutable_ptr();
    T* po = out.mutable_ptr();
    const T* pg = gamma.ptr();
    const T* pbeta = beta.ptr();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const size_t off = (static_cast<size_t>(n) * C + c) * cstride;
            const T mu = mean[static_cast<size_t>(c)], is = istd[static_cast<size_t>(c)];
            const T gm = pg[c], bt = pbeta[c];
            for (size_t j = 0; j < plane; ++j) {
                const T h = (px[off + j] - mu) * is;
                ph[off + j] = h;
                po[off + j] = gm * h + bt;
            }
        }
    SDNET_DEBUG_FINITE(out, "batchnorm produced NaN");

    if (tape && (x.node() != kNoNode || gamma.node() != kNoNode || beta.node() != kNoNode)) {
        const int ix = x.node(), ig = gamma.node(), ib = beta.node();
        out.set_node(tape->add_node(
            "batchnorm", out.shape(), {ix, ig, ib},
            [ix, ig, ib, xhat, gamma, istd, N, C, cstride, plane, m,
             training](TapeT<T>& t, const std::vector<T>& g) {
                const T* ph2 = xhat.ptr();
                const T* pg2 = gamma.ptr();
                auto* sx = t.slot(ix, static_cast<size_t>(N) * C * cstride);
                auto* sg = t.slot(ig, static_cast<size_t>(C));
                auto* sb = t.slot(ib, static_cast<size_t>(C));
                for (int c = 0; c < C; ++c) {
                    double gsum = 0.0, ghsum = 0.0;
                    for (int n = 0; n < N; ++n) {
                        const size_t off = (static_cast<size_t>(n) * C + c) * cstride;
                        for (size_t j = 0; j < plane; ++j) {
                            gsum += static_cast<double>(g[off + j]);
                            ghsum += static_cast<double>(g[off + j]) *
                                     static_cast<double>(ph2[off + j]);
                        }
                    }
                    if (sg) (*sg)[static_cast<size_t>(c)] += static_cast<T>(ghsum);
                    if (sb) (*sb)[static_cast<size_t>(c)] += static_cast<T>(gsum);
                    if (sx) {
                        const T gm = pg2[c], is = istd[static_cast<size_t>(c)];
                        const T gmean = static_cast<T>(gsum / static_cast<double>(m));
                        const T ghmean = static_cast<T>(ghsum / static_cast<double>(m));
                        for (int n = 0; n < N; ++n) {
                            const size_t off = (static_cast<size_t>(n) * C + c) * cstride;
                            T* sp = sx->data() + off;
                            if (training)
                                for (size_t j = 0; j < plane; ++j)
                                    sp[j] += gm * is * (g[off + j] - gmean - ph2[off + j] * ghmean);
                            else
                                for (size_t j = 0; j < plane; ++j) sp[j] += gm * is * g[off + j];
                        }
                    }
                }
            }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

// Softmax over the class axis of [N,K,H,W].
template <typename T>
TensorT<T> softmax_channels(TapeT<T>* tape, const TensorT<T>& x) {
    require_rank(x, 4, "softmax_channels");
    const int N = x.dim(0), K = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t plane = static_cast<size_t>(H) * W;
    TensorT<T> out(x.shape());
    const T* px = x.ptr();
    T* po = out.mutable_ptr();
    for (int n = 0; n < N; ++n) {
        const size_t base = static_cast<size_t>(n) * K * plane;
        for (size_t j = 0; j < plane; ++j) {
            T mx = px[base + j];
            for (int k = 1; k < K; ++k)
                mx = std::max(mx, px[base + static_cast<size_t>(k) * plane + j]);
            T denom = T(0);
            for (int k = 0; k < K; ++k) {
                const T e = std::exp(px[base + static_cast<size_t>(k) * plane + j] - mx);
                po[base + static_cast<size_t>(k) * plane + j] = e;
                denom += e;
            }
            for (int k = 0; k < K; ++k) po[base + static_cast<size_t>(k) * plane + j] /= denom;
        }
    }
    SDNET_DEBUG_FINITE(out, "softmax produced NaN");
    if (tape && x.node() != kNoNode) {
        const int ix = x.node();
        out.set_node(tape->add_node(
            "softmax_channels", out.shape(), {ix},
            [ix, out, N, K, plane](TapeT<T>& t, const std::vector<T>& g) {
                if (auto* s = t.slot(ix, static_cast<size_t>(N) * K * plane)) {
                    const T* pp = out.ptr();
                    for (int n = 0; n < N; ++n) {
                        const size_t base = static_cast<size_t>(n) * K * plane;
                        for (size_t j = 0; j < plane; ++j) {
                            T dot = T(0);
                            for (int k = 0; k < K; ++k) {
                                const size_t idx = base + static_cast<size_t>(k) * plane + j;
                                dot += g[idx] * pp[idx];
                            }
                            for (int k = 0; k < K; ++k) {
                                const size_t idx = base + static_cast<size_t>(k) * plane + j;
                                (*s)[idx] += pp[idx] * (g[idx] - dot);
                            }
                        }
                    }
                }
            }));
    }
    return out;
}

}  // namespace sdnet
