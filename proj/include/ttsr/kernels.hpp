#pragma once

// Gradient-free tensor kernels. The autograd layer in ops.hpp wraps these and
// wires their adjoints; tests compare them against naive loop oracles.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ttsr/tensor.hpp"

namespace ttsr::kernels {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// Sliding-window geometry shared by convolution, unfold and fold.
struct Window {
    std::size_t k = 3;
    std::size_t stride = 1;
    std::size_t pad = 0;

    std::size_t positions(std::size_t in, const char* what) const {
        if (k == 0 || stride == 0) throw GeometryError(std::string(what) + ": kernel and stride must be positive");
        if (in + 2 * pad < k)
            throw GeometryError(std::string(what) + ": window " + std::to_string(k) + " larger than padded extent " +
                                std::to_string(in + 2 * pad));
        return (in + 2 * pad - k) / stride + 1;
    }
};

// ---------------------------------------------------------------------------
// im2col / col2im on one (C, H, W) image. Row index is (c*k + ki)*k + kj and
// column index is oy*Wo + ox.

template <typename T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, const Window& win, std::size_t Ho,
            std::size_t Wo, T* cols) {
    const std::size_t k = win.k, L = Ho * Wo;
    for (std::size_t c = 0; c < C; ++c) {
        const T* xc = x + c * H * W;
        for (std::size_t ki = 0; ki < k; ++ki) {
            for (std::size_t kj = 0; kj < k; ++kj) {
                T* row = cols + ((c * k + ki) * k + kj) * L;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * win.stride + ki) - static_cast<std::ptrdiff_t>(win.pad);
                    T* dst = row + oy * Wo;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) {
                        std::fill(dst, dst + Wo, T(0));
                        continue;
                    }
                    const T* src = xc + static_cast<std::size_t>(iy) * W;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * win.stride + kj) - static_cast<std::ptrdiff_t>(win.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) ? T(0)
                                                                                     : src[static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
}

/// Scatter-add columns back onto the image (the adjoint of im2col).
template <typename T>
void col2im_add(const T* cols, std::size_t C, std::size_t H, std::size_t W, const Window& win, std::size_t Ho,
                std::size_t Wo, T* x) {
    const std::size_t k = win.k, L = Ho * Wo;
    for (std::size_t c = 0; c < C; ++c) {
        T* xc = x + c * H * W;
        for (std::size_t ki = 0; ki < k; ++ki) {
            for (std::size_t kj = 0; kj < k; ++kj) {
                const T* row = cols + ((c * k + ki) * k + kj) * L;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * win.stride + ki) - static_cast<std::ptrdiff_t>(win.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    T* dst = xc + static_cast<std::size_t>(iy) * W;
                    const T* src = row + oy * Wo;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * win.stride + kj) - static_cast<std::ptrdiff_t>(win.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(W)) dst[static_cast<std::size_t>(ix)] += src[ox];
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Convolution

struct ConvShape {
    std::size_t n, cin, h, w, cout, ho, wo;
    Window win;
    bool pointwise() const { return win.k == 1 && win.stride == 1 && win.pad == 0; }
};

template <typename T>
ConvShape conv_shape(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b, std::size_t stride, std::size_t pad) {
    require_rank(x, 4, "conv2d input");
    require_rank(w, 4, "conv2d weight");
    if (w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0)
        throw ShapeError("conv2d: kernel must be square with odd extent, got " + shape_str(w.shape()));
    if (w.dim(1) != x.dim(1))
        throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                         std::to_string(w.dim(1)));
    if (b && (b->rank() != 1 || b->dim(0) != w.dim(0)))
        throw ShapeError("conv2d: bias shape " + shape_str(b->shape()) + " does not match " +
                         std::to_string(w.dim(0)) + " output channels");
    ConvShape s{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), 0, 0, Window{w.dim(2), stride, pad}};
    s.ho = s.win.positions(s.h, "conv2d");
    s.wo = s.win.positions(s.w, "conv2d");
    return s;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b, std::size_t stride, std::size_t pad) {
    const ConvShape s = conv_shape(x, w, b, stride, pad);
    const std::size_t K = s.cin * s.win.k * s.win.k, L = s.ho * s.wo;
    Tensor<T> out({s.n, s.cout, s.ho, s.wo});
    Buffer<T> cols(s.pointwise() ? 0 : K * L);
    ConstMatMap<T> wm(w.data(), s.cout, K);
    for (std::size_t n = 0; n < s.n; ++n) {
        const T* xn = x.data() + n * s.cin * s.h * s.w;
        const T* cp = xn;
        if (!s.pointwise()) {
            im2col(xn, s.cin, s.h, s.w, s.win, s.ho, s.wo, cols.data());
            cp = cols.data();
        }
        MatMap<T> om(out.data() + n * s.cout * L, s.cout, L);
        om.noalias() = wm * ConstMatMap<T>(cp, K, L);
        if (b) om.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(b->data(), s.cout);
    }
    return out;
}

/// Adjoint of conv2d. Any of gx/gw/gb may be null; non-null ones are accumulated into.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad, const Tensor<T>& gout,
                     Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
    const ConvShape s = conv_shape<T>(x, w, nullptr, stride, pad);
    const std::size_t K = s.cin * s.win.k * s.win.k, L = s.ho * s.wo;
    Buffer<T> cols(s.pointwise() ? 0 : K * L);
    Buffer<T> gcols(K * L);
    ConstMatMap<T> wm(w.data(), s.cout, K);
    for (std::size_t n = 0; n < s.n; ++n) {
        ConstMatMap<T> gm(gout.data() + n * s.cout * L, s.cout, L);
        const T* xn = x.data() + n * s.cin * s.h * s.w;
        if (gw) {
            const T* cp = xn;
            if (!s.pointwise()) {
                im2col(xn, s.cin, s.h, s.w, s.win, s.ho, s.wo, cols.data());
                cp = cols.data();
            }
            MatMap<T>(gw->data(), s.cout, K).noalias() += gm * ConstMatMap<T>(cp, K, L).transpose();
        }
        if (gb) Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb->data(), s.cout) += gm.rowwise().sum();
        if (gx) {
            T* gxn = gx->data() + n * s.cin * s.h * s.w;
            if (s.pointwise()) {
                MatMap<T>(gxn, K, L).noalias() += wm.transpose() * gm;
            } else {
                MatMap<T>(gcols.data(), K, L).noalias() = wm.transpose() * gm;
                col2im_add(gcols.data(), s.cin, s.h, s.w, s.win, s.ho, s.wo, gxn);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Unfold / fold

template <typename T>
Tensor<T> unfold(const Tensor<T>& x, const Window& win) {
    require_rank(x, 4, "unfold");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (win.pad == 0 && (win.k > H || win.k > W))
        throw GeometryError("unfold: patch " + std::to_string(win.k) + " larger than input " + shape_str(x.shape()));
    const std::size_t Ho = win.positions(H, "unfold"), Wo = win.positions(W, "unfold");
    const std::size_t K = C * win.k * win.k, L = Ho * Wo;
    Tensor<T> out({N, K, L});
    for (std::size_t n = 0; n < N; ++n) im2col(x.data() + n * C * H * W, C, H, W, win, Ho, Wo, out.data() + n * K * L);
    return out;
}

/// Per-pixel count of covering windows (in-bounds positions only).
template <typename T>
std::vector<T> fold_counts(std::size_t H, std::size_t W, const Window& win) {
    const std::size_t Ho = win.positions(H, "fold"), Wo = win.positions(W, "fold");
    std::vector<T> ones(win.k * win.k * Ho * Wo, T(1));
    std::vector<T> counts(H * W, T(0));
    col2im_add(ones.data(), 1, H, W, win, Ho, Wo, counts.data());
    return counts;
}

template <typename T>
Tensor<T> fold(const Tensor<T>& cols, std::size_t H, std::size_t W, const Window& win, bool normalize) {
    require_rank(cols, 3, "fold");
    const std::size_t N = cols.dim(0), K = cols.dim(1), L = cols.dim(2);
    const std::size_t Ho = win.positions(H, "fold"), Wo = win.positions(W, "fold");
    if (K % (win.k * win.k) != 0)
        throw GeometryError("fold: row count " + std::to_string(K) + " is not a multiple of k*k");
    if (L != Ho * Wo)
        throw GeometryError("fold: " + std::to_string(L) + " columns inconsistent with " + std::to_string(H) + "x" +
                            std::to_string(W) + " output (" + std::to_string(Ho * Wo) + " positions)");
    const std::size_t C = K / (win.k * win.k);
    Tensor<T> out({N, C, H, W});
    for (std::size_t n = 0; n < N; ++n)
        col2im_add(cols.data() + n * K * L, C, H, W, win, Ho, Wo, out.data() + n * C * H * W);
    if (normalize) {
        const auto counts = fold_counts<T>(H, W, win);
        for (std::size_t nc = 0; nc < N * C; ++nc)
            for (std::size_t p = 0; p < H * W; ++p)
                if (counts[p] > T(0)) out[nc * H * W + p] /= counts[p];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Column gather

template <typename T>
void check_index_map(const Tensor<T>& v, const IndexMap& idx) {
    require_rank(v, 3, "gather_columns");
    if (idx.batch != v.dim(0))
        throw ShapeError("gather_columns: index batch " + std::to_string(idx.batch) + " vs tensor batch " +
                         std::to_string(v.dim(0)));
    const auto M = static_cast<std::int64_t>(v.dim(2));
    for (auto i : idx.idx)
        if (i < 0 || i >= M)
            throw IndexError("gather_columns: index " + std::to_string(i) + " outside [0, " + std::to_string(M) + ")");
}

template <typename T>
Tensor<T> gather_columns(const Tensor<T>& v, const IndexMap& idx) {
    check_index_map(v, idx);
    const std::size_t N = v.dim(0), D = v.dim(1), M = v.dim(2), L = idx.length;
    Tensor<T> out({N, D, L});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t d = 0; d < D; ++d) {
            const T* src = v.data() + (n * D + d) * M;
            T* dst = out.data() + (n * D + d) * L;
            for (std::size_t l = 0; l < L; ++l) dst[l] = src[idx(n, l)];
        }
    return out;
}

template <typename T>
void gather_columns_backward(const IndexMap& idx, const Tensor<T>& gout, Tensor<T>& gv) {
    const std::size_t N = gv.dim(0), D = gv.dim(1), M = gv.dim(2), L = idx.length;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t d = 0; d < D; ++d) {
            const T* src = gout.data() + (n * D + d) * L;
            T* dst = gv.data() + (n * D + d) * M;
            for (std::size_t l = 0; l < L; ++l) dst[idx(n, l)] += src[l];
        }
}

// ---------------------------------------------------------------------------
// Bicubic resampling (Keys, a = -0.5), edge-clamped, center-aligned grid.
// Down-scaling widens the kernel by the scale factor (antialiasing).

inline double keys_cubic(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

/// Sparse 1-D resampling matrix with a fixed tap count per output sample.
template <typename T>
struct AxisResampler {
    std::size_t in = 0, out = 0, taps = 0;
    std::vector<std::size_t> index;  // out * taps, clamped source indices
    std::vector<T> weight;           // out * taps

    AxisResampler(std::size_t in_len, std::size_t out_len) : in(in_len), out(out_len) {
        const double scale = static_cast<double>(out) / static_cast<double>(in);
        const double stretch = scale < 1.0 ? 1.0 / scale : 1.0;
        const double support = 2.0 * stretch;
        taps = static_cast<std::size_t>(std::ceil(2.0 * support)) + 1;
        index.resize(out * taps);
        weight.resize(out * taps);
        for (std::size_t o = 0; o < out; ++o) {
            const double center = (static_cast<double>(o) + 0.5) / scale - 0.5;
            const auto first = static_cast<std::ptrdiff_t>(std::floor(center - support)) + 1;
            std::vector<double> w(taps);
            double sum = 0.0;
            for (std::size_t t = 0; t < taps; ++t) {
                const auto j = first + static_cast<std::ptrdiff_t>(t);
                w[t] = keys_cubic((static_cast<double>(j) - center) / stretch);
                sum += w[t];
                index[o * taps + t] =
                    static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(j, 0, static_cast<std::ptrdiff_t>(in) - 1));
            }
            for (std::size_t t = 0; t < taps; ++t) weight[o * taps + t] = static_cast<T>(w[t] / sum);
        }
    }

    /// y[o] = sum_t w[o,t] x[idx[o,t]], strided access for both sides.
    void apply(const T* x, std::size_t xs, T* y, std::size_t ys) const {
        for (std::size_t o = 0; o < out; ++o) {
            T acc = 0;
            for (std::size_t t = 0; t < taps; ++t) acc += weight[o * taps + t] * x[index[o * taps + t] * xs];
            y[o * ys] = acc;
        }
    }
    void apply_transpose_add(const T* gy, std::size_t ys, T* gx, std::size_t xs) const {
        for (std::size_t o = 0; o < out; ++o)
            for (std::size_t t = 0; t < taps; ++t) gx[index[o * taps + t] * xs] += weight[o * taps + t] * gy[o * ys];
    }
};

template <typename T>
Tensor<T> resize_bicubic(const Tensor<T>& x, std::size_t ho, std::size_t wo) {
    require_rank(x, 4, "bicubic_resize");
    if (ho == 0 || wo == 0) throw GeometryError("bicubic_resize: zero output extent");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (ho == H && wo == W) return x;
    const AxisResampler<T> rx(W, wo), ry(H, ho);
    Tensor<T> tmp({N, C, H, wo});
    Tensor<T> out({N, C, ho, wo});
    for (std::size_t p = 0; p < N * C; ++p) {
        const T* xp = x.data() + p * H * W;
        T* tp = tmp.data() + p * H * wo;
        for (std::size_t r = 0; r < H; ++r) rx.apply(xp + r * W, 1, tp + r * wo, 1);
        T* op = out.data() + p * ho * wo;
        for (std::size_t c = 0; c < wo; ++c) ry.apply(tp + c, wo, op + c, wo);
    }
    return out;
}

template <typename T>
void resize_bicubic_backward(const Shape& in_shape, const Tensor<T>& gout, Tensor<T>& gx) {
    const std::size_t N = in_shape[0], C = in_shape[1], H = in_shape[2], W = in_shape[3];
    const std::size_t ho = gout.dim(2), wo = gout.dim(3);
    if (ho == H && wo == W) {
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += gout[i];
        return;
    }
    const AxisResampler<T> rx(W, wo), ry(H, ho);
    std::vector<T> tmp(H * wo);
    for (std::size_t p = 0; p < N * C; ++p) {
        std::fill(tmp.begin(), tmp.end(), T(0));
        const T* gp = gout.data() + p * ho * wo;
        for (std::size_t c = 0; c < wo; ++c) ry.apply_transpose_add(gp + c, wo, tmp.data() + c, wo);
        T* gxp = gx.data() + p * H * W;
        for (std::size_t r = 0; r < H; ++r) rx.apply_transpose_add(tmp.data() + r * wo, 1, gxp + r * W, 1);
    }
}

/// Output extents floor(H * num / den) x floor(W * num / den).
template <typename T>
Tensor<T> bicubic_resize(const Tensor<T>& x, std::size_t num, std::size_t den) {
    require_rank(x, 4, "bicubic_resize");
    if (num == 0 || den == 0) throw GeometryError("bicubic_resize: scale must be positive");
    return resize_bicubic(x, x.dim(2) * num / den, x.dim(3) * num / den);
}

// ---------------------------------------------------------------------------
// Pixel shuffle (depth-to-space) and its inverse.

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
    require_rank(x, 4, "pixel_shuffle");
    if (r == 0 || x.dim(1) % (r * r) != 0)
        throw ShapeError("pixel_shuffle: channel count " + std::to_string(x.dim(1)) + " not divisible by r^2 = " +
                         std::to_string(r * r));
    const std::size_t N = x.dim(0), C = x.dim(1) / (r * r), H = x.dim(2), W = x.dim(3);
    Tensor<T> out({N, C, H * r, W * r});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < r; ++j)
                    for (std::size_t h = 0; h < H; ++h)
                        for (std::size_t w = 0; w < W; ++w)
                            out.at(n, c, h * r + i, w * r + j) = x.at(n, c * r * r + i * r + j, h, w);
    return out;
}

template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& x, std::size_t r) {
    require_rank(x, 4, "space_to_depth");
    if (r == 0 || x.dim(2) % r != 0 || x.dim(3) % r != 0)
        throw ShapeError("space_to_depth: extents " + shape_str(x.shape()) + " not divisible by " + std::to_string(r));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2) / r, W = x.dim(3) / r;
    Tensor<T> out({N, C * r * r, H, W});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < r; ++j)
                    for (std::size_t h = 0; h < H; ++h)
                        for (std::size_t w = 0; w < W; ++w)
                            out.at(n, c * r * r + i * r + j, h, w) = x.at(n, c, h * r + i, w * r + j);
    return out;
}

// ---------------------------------------------------------------------------
// Pooling and nearest up-sampling.

enum class PoolKind { Average, Max };

/// 2x2 stride-2 pooling; an odd trailing row/column is dropped. For max
/// pooling `argmax` receives the flat input offset of each selected element.
template <typename T>
Tensor<T> pool2x2(const Tensor<T>& x, PoolKind kind, std::vector<std::size_t>* argmax = nullptr) {
    require_rank(x, 4, "pool2x2");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H < 2 || W < 2) throw GeometryError("pool2x2: input " + shape_str(x.shape()) + " too small");
    const std::size_t ho = H / 2, wo = W / 2;
    Tensor<T> out({N, C, ho, wo});
    if (argmax) argmax->assign(out.numel(), 0);
    std::size_t o = 0;
    for (std::size_t p = 0; p < N * C; ++p)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j, ++o) {
                const std::size_t base = p * H * W + 2 * i * W + 2 * j;
                const std::size_t off[4] = {base, base + 1, base + W, base + W + 1};
                if (kind == PoolKind::Average) {
                    out[o] = (x[off[0]] + x[off[1]] + x[off[2]] + x[off[3]]) * T(0.25);
                } else {
                    std::size_t best = off[0];
                    for (std::size_t q = 1; q < 4; ++q)
                        if (x[off[q]] > x[best]) best = off[q];
                    out[o] = x[best];
                    if (argmax) (*argmax)[o] = best;
                }
            }
    return out;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor) {
    require_rank(x, 4, "upsample_nearest");
    if (factor == 0) throw GeometryError("upsample_nearest: factor must be positive");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> out({N, C, H * factor, W * factor});
    for (std::size_t p = 0; p < N * C; ++p)
        for (std::size_t h = 0; h < H * factor; ++h)
            for (std::size_t w = 0; w < W * factor; ++w)
                out[(p * H * factor + h) * W * factor + w] = x[(p * H + h / factor) * W + w / factor];
    return out;
}

// ---------------------------------------------------------------------------
// Patch matching

/// Columns of x[n] scaled to unit L2 norm; columns with norm below 1e-12 become zero.
template <typename T>
Tensor<T> normalize_columns(const Tensor<T>& x, std::vector<T>* norms = nullptr) {
    require_rank(x, 3, "normalize_columns");
    const std::size_t N = x.dim(0), D = x.dim(1), L = x.dim(2);
    Tensor<T> out(x.shape());
    if (norms) norms->assign(N * L, T(0));
    std::vector<T> sq(L);
    for (std::size_t n = 0; n < N; ++n) {
        std::fill(sq.begin(), sq.end(), T(0));
        const T* xn = x.data() + n * D * L;
        for (std::size_t d = 0; d < D; ++d)
            for (std::size_t l = 0; l < L; ++l) sq[l] += xn[d * L + l] * xn[d * L + l];
        std::vector<T> inv(L);
        for (std::size_t l = 0; l < L; ++l) {
            const T nrm = std::sqrt(sq[l]);
            inv[l] = nrm < T(1e-12) ? T(0) : T(1) / nrm;
            if (norms) (*norms)[n * L + l] = nrm;
        }
        T* on = out.data() + n * D * L;
        for (std::size_t d = 0; d < D; ++d)
            for (std::size_t l = 0; l < L; ++l) on[d * L + l] = xn[d * L + l] * inv[l];
    }
    return out;
}

/// out[n] = a[n]^T b[n] for a: [N, D, La], b: [N, D, Lb] -> [N, La, Lb].
template <typename T>
Tensor<T> bmm_tn(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank(a, 3, "bmm_tn");
    require_rank(b, 3, "bmm_tn");
    if (a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1))
        throw ShapeError("bmm_tn: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t N = a.dim(0), D = a.dim(1), La = a.dim(2), Lb = b.dim(2);
    Tensor<T> out({N, La, Lb});
    for (std::size_t n = 0; n < N; ++n)
        MatMap<T>(out.data() + n * La * Lb, La, Lb).noalias() =
            ConstMatMap<T>(a.data() + n * D * La, D, La).transpose() * ConstMatMap<T>(b.data() + n * D * Lb, D, Lb);
    return out;
}

/// Row-wise maximum of r: [N, Lq, Lk]; ties resolve to the smallest column.
template <typename T>
void row_argmax(const Tensor<T>& r, Tensor<T>& value, IndexMap& index) {
    require_rank(r, 3, "row_argmax");
    const std::size_t N = r.dim(0), Lq = r.dim(1), Lk = r.dim(2);
    if (N == 0 || Lq == 0 || Lk == 0) throw ShapeError("row_argmax: empty relevance matrix");
    value = Tensor<T>({N, Lq});
    index = IndexMap(N, Lq);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < Lq; ++i) {
            const T* row = r.data() + (n * Lq + i) * Lk;
            std::size_t best = 0;
            for (std::size_t j = 1; j < Lk; ++j)
                if (row[j] > row[best]) best = j;
            value[n * Lq + i] = row[best];
            index(n, i) = static_cast<std::int64_t>(best);
        }
}

}  // namespace ttsr::kernels
