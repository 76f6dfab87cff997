#pragma once

// Differentiable operations on tape variables.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ttsr/autograd.hpp"
#include "ttsr/kernels.hpp"

namespace ttsr {

using kernels::PoolKind;
using kernels::Window;

namespace detail {
template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution and patch operations

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>* b, std::size_t stride, std::size_t pad) {
    Tensor<T> out = kernels::conv2d(x.value(), w.value(), b ? &b->value() : nullptr, stride, pad);
    std::vector<Var<T>> in{x, w};
    if (b) in.push_back(*b);
    return x.tape().record("conv2d", std::move(out), std::move(in),
                           [x, w, stride, pad](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                               kernels::conv2d_backward(x.value(), w.value(), stride, pad, g, gin[0], gin[1],
                                                        gin.size() > 2 ? gin[2] : nullptr);
                           });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t stride, std::size_t pad) {
    return conv2d(x, w, &b, stride, pad);
}

template <typename T>
Var<T> unfold(const Var<T>& x, const Window& win) {
    return x.tape().record("unfold", kernels::unfold(x.value(), win), {x},
                           [x, win](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                               const auto& s = x.shape();
                               const std::size_t ho = win.positions(s[2], "unfold"), wo = win.positions(s[3], "unfold");
                               const std::size_t K = g.dim(1), L = g.dim(2);
                               for (std::size_t n = 0; n < s[0]; ++n)
                                   kernels::col2im_add(g.data() + n * K * L, s[1], s[2], s[3], win, ho, wo,
                                                       gin[0]->data() + n * s[1] * s[2] * s[3]);
                           });
}

template <typename T>
Var<T> fold(const Var<T>& cols, std::size_t H, std::size_t W, const Window& win, bool normalize) {
    Tensor<T> out = kernels::fold(cols.value(), H, W, win, normalize);
    return cols.tape().record(
        "fold", std::move(out), {cols}, [H, W, win, normalize](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
            Tensor<T> gs = g;
            if (normalize) {
                const auto counts = kernels::fold_counts<T>(H, W, win);
                const std::size_t planes = g.numel() / (H * W);
                for (std::size_t p = 0; p < planes; ++p)
                    for (std::size_t q = 0; q < H * W; ++q)
                        if (counts[q] > T(0)) gs[p * H * W + q] /= counts[q];
            }
            Tensor<T> cols_g = kernels::unfold(gs, win);
            detail::add_into(*gin[0], cols_g);
        });
}

/// Column selection by a constant index map; backward scatter-adds.
template <typename T>
Var<T> gather_columns(const Var<T>& v, const IndexMap& idx) {
    return v.tape().record("gather_columns", kernels::gather_columns(v.value(), idx), {v},
                           [idx](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                               kernels::gather_columns_backward(idx, g, *gin[0]);
                           });
}

// ---------------------------------------------------------------------------
// Resampling

template <typename T>
Var<T> resize_bicubic(const Var<T>& x, std::size_t ho, std::size_t wo) {
    return x.tape().record("bicubic", kernels::resize_bicubic(x.value(), ho, wo), {x},
                           [shape = x.shape()](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                               kernels::resize_bicubic_backward(shape, g, *gin[0]);
                           });
}

template <typename T>
Var<T> bicubic_resize(const Var<T>& x, std::size_t num, std::size_t den) {
    if (num == 0 || den == 0) throw GeometryError("bicubic_resize: scale must be positive");
    return resize_bicubic(x, x.dim(2) * num / den, x.dim(3) * num / den);
}

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, std::size_t r) {
    return x.tape().record("pixel_shuffle", kernels::pixel_shuffle(x.value(), r), {x},
                           [r](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                               detail::add_into(*gin[0], kernels::space_to_depth(g, r));
                           });
}

template <typename T>
Var<T> space_to_depth(const Var<T>& x, std::size_t r) {
    return x.tape().record("space_to_depth", kernels::space_to_depth(x.value(), r), {x},
                           [r](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                               detail::add_into(*gin[0], kernels::pixel_shuffle(g, r));
                           });
}

template <typename T>
Var<T> pool2x2(const Var<T>& x, PoolKind kind = PoolKind::Average) {
    std::vector<std::size_t> argmax;
    Tensor<T> out = kernels::pool2x2(x.value(), kind, kind == PoolKind::Max ? &argmax : nullptr);
    return x.tape().record(
        "pool2x2", std::move(out), {x},
        [shape = x.shape(), kind, argmax = std::move(argmax)](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
            Tensor<T>& gx = *gin[0];
            if (kind == PoolKind::Max) {
                for (std::size_t o = 0; o < g.numel(); ++o) gx[argmax[o]] += g[o];
                return;
            }
            const std::size_t H = shape[2], W = shape[3], ho = H / 2, wo = W / 2;
            std::size_t o = 0;
            for (std::size_t p = 0; p < shape[0] * shape[1]; ++p)
                for (std::size_t i = 0; i < ho; ++i)
                    for (std::size_t j = 0; j < wo; ++j, ++o) {
                        const std::size_t base = p * H * W + 2 * i * W + 2 * j;
                        const T v = g[o] * T(0.25);
                        gx[base] += v;
                        gx[base + 1] += v;
                        gx[base + W] += v;
                        gx[base + W + 1] += v;
                    }
        });
}

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, std::size_t factor) {
    if (factor == 1) return x;
    return x.tape().record("upsample_nearest", kernels::upsample_nearest(x.value(), factor), {x},
                           [shape = x.shape(), factor](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                               const std::size_t H = shape[2], W = shape[3];
                               for (std::size_t p = 0; p < shape[0] * shape[1]; ++p)
                                   for (std::size_t h = 0; h < H * factor; ++h)
                                       for (std::size_t w = 0; w < W * factor; ++w)
                                           (*gin[0])[(p * H + h / factor) * W + w / factor] +=
                                               g[(p * H * factor + h) * W * factor + w];
                           });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v = v > T(0) ? v : T(0);
    return x.tape().record("relu", std::move(out), {x}, [x](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
        const Tensor<T>& xv = x.value();
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (xv[i] > T(0)) (*gin[0])[i] += g[i];
    });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope = T(0.2)) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v = v > T(0) ? v : v * slope;
    return x.tape().record("leaky_relu", std::move(out), {x},
                           [x, slope](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                               const Tensor<T>& xv = x.value();
                               for (std::size_t i = 0; i < g.numel(); ++i)
                                   (*gin[0])[i] += xv[i] > T(0) ? g[i] : g[i] * slope;
                           });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor<T> out = a.value();
    detail::add_into(out, b.value());
    return a.tape().record("add", std::move(out), {a, b}, [](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
        for (auto* gi : gin)
            if (gi) detail::add_into(*gi, g);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
    return a.tape().record("sub", std::move(out), {a, b}, [](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
        if (gin[0]) detail::add_into(*gin[0], g);
        if (gin[1])
            for (std::size_t i = 0; i < g.numel(); ++i) (*gin[1])[i] -= g[i];
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
    return a.tape().record("mul", std::move(out), {a, b}, [a, b](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
        if (gin[0])
            for (std::size_t i = 0; i < g.numel(); ++i) (*gin[0])[i] += g[i] * b.value()[i];
        if (gin[1])
            for (std::size_t i = 0; i < g.numel(); ++i) (*gin[1])[i] += g[i] * a.value()[i];
    });
}

/// x[N,C,H,W] * s[N,1,H,W], the gate broadcast over channels.
template <typename T>
Var<T> mul_channel_broadcast(const Var<T>& x, const Var<T>& s) {
    const auto& xs = x.shape();
    const auto& ss = s.shape();
    if (xs.size() != 4 || ss.size() != 4 || ss[0] != xs[0] || ss[1] != 1 || ss[2] != xs[2] || ss[3] != xs[3])
        throw ShapeError("mul_channel_broadcast: cannot broadcast " + shape_str(ss) + " over " + shape_str(xs));
    const std::size_t N = xs[0], C = xs[1], P = xs[2] * xs[3];
    Tensor<T> out = x.value();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < P; ++p) out[(n * C + c) * P + p] *= s.value()[n * P + p];
    return x.tape().record("mul_channel_broadcast", std::move(out), {x, s},
                           [x, s, N, C, P](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                               for (std::size_t n = 0; n < N; ++n)
                                   for (std::size_t c = 0; c < C; ++c)
                                       for (std::size_t p = 0; p < P; ++p) {
                                           const std::size_t i = (n * C + c) * P + p;
                                           if (gin[0]) (*gin[0])[i] += g[i] * s.value()[n * P + p];
                                           if (gin[1]) (*gin[1])[n * P + p] += g[i] * x.value()[i];
                                       }
                           });
}

template <typename T>
Var<T> scale(const Var<T>& x, T alpha) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v *= alpha;
    return x.tape().record("scale", std::move(out), {x}, [alpha](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
        for (std::size_t i = 0; i < g.numel(); ++i) (*gin[0])[i] += alpha * g[i];
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T beta) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v += beta;
    return x.tape().record("add_scalar", std::move(out), {x}, [](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
        detail::add_into(*gin[0], g);
    });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape s) {
    return x.tape().record("reshape", x.value().reshaped(std::move(s)), {x},
                           [](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) { detail::add_into(*gin[0], g); });
}

/// Concatenate 4-d maps along the channel axis.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    const auto& s0 = xs[0].shape();
    std::size_t C = 0;
    for (const auto& x : xs) {
        const auto& s = x.shape();
        if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
            throw ShapeError("concat_channels: " + shape_str(s) + " incompatible with " + shape_str(s0));
        C += s[1];
    }
    const std::size_t N = s0[0], P = s0[2] * s0[3];
    Tensor<T> out({N, C, s0[2], s0[3]});
    std::vector<std::size_t> widths;
    for (std::size_t n = 0; n < N; ++n) {
        T* dst = out.data() + n * C * P;
        for (const auto& x : xs) {
            const std::size_t cx = x.dim(1);
            std::copy_n(x.value().data() + n * cx * P, cx * P, dst);
            dst += cx * P;
        }
    }
    for (const auto& x : xs) widths.push_back(x.dim(1));
    return xs[0].tape().record("concat_channels", std::move(out), xs,
                               [widths, N, C, P](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                                   for (std::size_t n = 0; n < N; ++n) {
                                       const T* src = g.data() + n * C * P;
                                       for (std::size_t k = 0; k < widths.size(); ++k) {
                                           if (gin[k]) {
                                               T* dst = gin[k]->data() + n * widths[k] * P;
                                               for (std::size_t i = 0; i < widths[k] * P; ++i) dst[i] += src[i];
                                           }
                                           src += widths[k] * P;
                                       }
                                   }
                               });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t end) {
    const auto& s = x.shape();
    if (s.size() != 4 || begin >= end || end > s[1])
        throw ShapeError("slice_channels: [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_str(s));
    const std::size_t N = s[0], C = s[1], P = s[2] * s[3], Cs = end - begin;
    Tensor<T> out({N, Cs, s[2], s[3]});
    for (std::size_t n = 0; n < N; ++n)
        std::copy_n(x.value().data() + (n * C + begin) * P, Cs * P, out.data() + n * Cs * P);
    return x.tape().record("slice_channels", std::move(out), {x},
                           [N, C, P, Cs, begin](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                               for (std::size_t n = 0; n < N; ++n)
                                   for (std::size_t i = 0; i < Cs * P; ++i)
                                       (*gin[0])[(n * C + begin) * P + i] += g[n * Cs * P + i];
                           });
}

// ---------------------------------------------------------------------------
// Reductions and distances

template <typename T>
Var<T> sum(const Var<T>& x) {
    T acc = 0;
    for (T v : x.value().values()) acc += v;
    return x.tape().record("sum", Tensor<T>({1}, acc), {x}, [](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
        for (auto& v : gin[0]->values()) v += g[0];
    });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    const std::size_t n = x.value().numel();
    if (n == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(n));
}

/// Per-batch-item mean of a [N, ...] tensor, giving [N].
template <typename T>
Var<T> mean_per_item(const Var<T>& x) {
    const std::size_t N = x.dim(0), M = x.value().numel() / N;
    Tensor<T> out({N});
    for (std::size_t n = 0; n < N; ++n) {
        T acc = 0;
        for (std::size_t i = 0; i < M; ++i) acc += x.value()[n * M + i];
        out[n] = acc / static_cast<T>(M);
    }
    return x.tape().record("mean_per_item", std::move(out), {x}, [N, M](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t i = 0; i < M; ++i) (*gin[0])[n * M + i] += g[n] / static_cast<T>(M);
    });
}

/// Mean absolute difference; the subgradient at zero residual is 0.
template <typename T>
Var<T> l1_distance(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.value(), b.value(), "l1_distance");
    const std::size_t n = a.value().numel();
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(a.value()[i] - b.value()[i]);
    return a.tape().record("l1_distance", Tensor<T>({1}, acc / static_cast<T>(n)), {a, b},
                           [a, b, n](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                               const T k = g[0] / static_cast<T>(n);
                               for (std::size_t i = 0; i < n; ++i) {
                                   const T d = a.value()[i] - b.value()[i];
                                   const T s = d > T(0) ? k : (d < T(0) ? -k : T(0));
                                   if (gin[0]) (*gin[0])[i] += s;
                                   if (gin[1]) (*gin[1])[i] -= s;
                               }
                           });
}

/// Mean squared difference.
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.value(), b.value(), "mse");
    const std::size_t n = a.value().numel();
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T d = a.value()[i] - b.value()[i];
        acc += d * d;
    }
    return a.tape().record("mse", Tensor<T>({1}, acc / static_cast<T>(n)), {a, b},
                           [a, b, n](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                               const T k = T(2) * g[0] / static_cast<T>(n);
                               for (std::size_t i = 0; i < n; ++i) {
                                   const T d = k * (a.value()[i] - b.value()[i]);
                                   if (gin[0]) (*gin[0])[i] += d;
                                   if (gin[1]) (*gin[1])[i] -= d;
                               }
                           });
}

/// Fully connected layer: x [N, D], w [O, D], b [O] -> [N, O].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    const auto &xs = x.shape(), &ws = w.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1] || b.shape() != Shape{ws[0]})
        throw ShapeError("linear: x " + shape_str(xs) + ", w " + shape_str(ws) + ", b " + shape_str(b.shape()));
    const std::size_t N = xs[0], D = xs[1], O = ws[0];
    Tensor<T> out({N, O});
    kernels::MatMap<T> om(out.data(), N, O);
    om.noalias() = kernels::ConstMatMap<T>(x.value().data(), N, D) *
                   kernels::ConstMatMap<T>(w.value().data(), O, D).transpose();
    om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.value().data(), O);
    return x.tape().record("linear", std::move(out), {x, w, b},
                           [x, w, N, D, O](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                               kernels::ConstMatMap<T> gm(g.data(), N, O);
                               if (gin[0])
                                   kernels::MatMap<T>(gin[0]->data(), N, D).noalias() +=
                                       gm * kernels::ConstMatMap<T>(w.value().data(), O, D);
                               if (gin[1])
                                   kernels::MatMap<T>(gin[1]->data(), O, D).noalias() +=
                                       gm.transpose() * kernels::ConstMatMap<T>(x.value().data(), N, D);
                               if (gin[2])
                                   Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gin[2]->data(), O) +=
                                       gm.colwise().sum();
                           });
}

// ---------------------------------------------------------------------------
// Patch matching

template <typename T>
Var<T> normalize_columns(const Var<T>& x) {
    std::vector<T> norms;
    Tensor<T> out = kernels::normalize_columns(x.value(), &norms);
    Tensor<T> y = out;
    return x.tape().record("normalize_columns", std::move(out), {x},
                           [y = std::move(y), norms = std::move(norms)](const Tensor<T>& g,
                                                                         std::vector<Tensor<T>*>& gin) {
                               const std::size_t N = y.dim(0), D = y.dim(1), L = y.dim(2);
                               std::vector<T> dot(L);
                               for (std::size_t n = 0; n < N; ++n) {
                                   const T* yn = y.data() + n * D * L;
                                   const T* gn = g.data() + n * D * L;
                                   T* gx = gin[0]->data() + n * D * L;
                                   std::fill(dot.begin(), dot.end(), T(0));
                                   for (std::size_t d = 0; d < D; ++d)
                                       for (std::size_t l = 0; l < L; ++l) dot[l] += yn[d * L + l] * gn[d * L + l];
                                   for (std::size_t d = 0; d < D; ++d)
                                       for (std::size_t l = 0; l < L; ++l) {
                                           const T nrm = norms[n * L + l];
                                           if (nrm < T(1e-12)) continue;
                                           gx[d * L + l] += (gn[d * L + l] - yn[d * L + l] * dot[l]) / nrm;
                                       }
                               }
                           });
}

template <typename T>
Var<T> bmm_tn(const Var<T>& a, const Var<T>& b) {
    return a.tape().record("bmm_tn", kernels::bmm_tn(a.value(), b.value()), {a, b},
                           [a, b](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                               const std::size_t N = a.dim(0), D = a.dim(1), La = a.dim(2), Lb = b.dim(2);
                               for (std::size_t n = 0; n < N; ++n) {
                                   kernels::ConstMatMap<T> gm(g.data() + n * La * Lb, La, Lb);
                                   if (gin[0])
                                       kernels::MatMap<T>(gin[0]->data() + n * D * La, D, La).noalias() +=
                                           kernels::ConstMatMap<T>(b.value().data() + n * D * Lb, D, Lb) *
                                           gm.transpose();
                                   if (gin[1])
                                       kernels::MatMap<T>(gin[1]->data() + n * D * Lb, D, Lb).noalias() +=
                                           kernels::ConstMatMap<T>(a.value().data() + n * D * La, D, La) * gm;
                               }
                           });
}

/// Row maxima of r [N, Lq, Lk] as a differentiable [N, Lq] value plus the
/// (gradient-free) argmax map. The gradient is routed to the argmax entry.
template <typename T>
std::pair<Var<T>, IndexMap> row_max(const Var<T>& r) {
    Tensor<T> value;
    IndexMap index;
    kernels::row_argmax(r.value(), value, index);
    const std::size_t Lk = r.dim(2);
    Var<T> v = r.tape().record("row_max", std::move(value), {r},
                               [index, Lk](const Tensor<T>& g, std::vector<Tensor<T>*>& gin) {
                                   for (std::size_t i = 0; i < g.numel(); ++i)
                                       (*gin[0])[i * Lk + static_cast<std::size_t>(index.idx[i])] += g[i];
                               });
    return {v, index};
}

}  // namespace ttsr
