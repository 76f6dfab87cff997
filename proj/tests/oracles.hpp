#pragma once

// Naive reference implementations used only by tests. They share no code
// with the library kernels beyond the Tensor container.

#include <cmath>
#include <vector>

#include "ttsr/rng.hpp"
#include "ttsr/tensor.hpp"

namespace ttsr::oracle {

template <typename T>
Tensor<T> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed, 99);
    Tensor<T> t(std::move(s));
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

inline std::size_t out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
double padded(const Tensor<T>& x, std::size_t n, std::size_t c, long y, long xx) {
    if (y < 0 || xx < 0 || y >= static_cast<long>(x.dim(2)) || xx >= static_cast<long>(x.dim(3))) return 0.0;
    return static_cast<double>(x.at(n, c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)));
}

/// Direct sliding-window convolution with 64-bit accumulation.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride, std::size_t pad) {
    const std::size_t N = x.dim(0), Cin = x.dim(1), Cout = w.dim(0), k = w.dim(2);
    const std::size_t Ho = out_extent(x.dim(2), k, stride, pad), Wo = out_extent(x.dim(3), k, stride, pad);
    Tensor<T> out({N, Cout, Ho, Wo});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Cout; ++co)
            for (std::size_t oy = 0; oy < Ho; ++oy)
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    double acc = static_cast<double>(b[co]);
                    for (std::size_t ci = 0; ci < Cin; ++ci)
                        for (std::size_t i = 0; i < k; ++i)
                            for (std::size_t j = 0; j < k; ++j)
                                acc += static_cast<double>(w.at(co, ci, i, j)) *
                                       padded(x, n, ci, static_cast<long>(oy * stride + i) - static_cast<long>(pad),
                                              static_cast<long>(ox * stride + j) - static_cast<long>(pad));
                    out.at(n, co, oy, ox) = static_cast<T>(acc);
                }
    return out;
}

/// Patch copy: column l holds the k x k patch at sliding position l.
template <typename T>
Tensor<T> unfold(const Tensor<T>& x, std::size_t k, std::size_t stride, std::size_t pad = 0) {
    const std::size_t N = x.dim(0), C = x.dim(1);
    const std::size_t Ho = out_extent(x.dim(2), k, stride, pad), Wo = out_extent(x.dim(3), k, stride, pad);
    Tensor<T> out({N, C * k * k, Ho * Wo});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                const std::size_t l = oy * Wo + ox;
                std::size_t row = 0;
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t i = 0; i < k; ++i)
                        for (std::size_t j = 0; j < k; ++j, ++row)
                            out.at(n, row, l) = static_cast<T>(
                                padded(x, n, c, static_cast<long>(oy * stride + i) - static_cast<long>(pad),
                                       static_cast<long>(ox * stride + j) - static_cast<long>(pad)));
            }
    return out;
}

/// Accumulate every patch value onto its pixel, then divide by the count.
template <typename T>
Tensor<T> fold(const Tensor<T>& cols, std::size_t H, std::size_t W, std::size_t k, std::size_t stride,
               std::size_t pad, bool normalize) {
    const std::size_t N = cols.dim(0), C = cols.dim(1) / (k * k);
    const std::size_t Ho = out_extent(H, k, stride, pad), Wo = out_extent(W, k, stride, pad);
    std::vector<double> acc(N * C * H * W, 0.0), cnt(N * C * H * W, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                std::size_t row = 0;
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t i = 0; i < k; ++i)
                        for (std::size_t j = 0; j < k; ++j, ++row) {
                            const long y = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
                            const long x = static_cast<long>(ox * stride + j) - static_cast<long>(pad);
                            if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) continue;
                            const std::size_t o = ((n * C + c) * H + static_cast<std::size_t>(y)) * W +
                                                  static_cast<std::size_t>(x);
                            acc[o] += static_cast<double>(cols.at(n, row, oy * Wo + ox));
                            cnt[o] += 1.0;
                        }
            }
    Tensor<T> out({N, C, H, W});
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<T>(normalize && cnt[i] > 0 ? acc[i] / cnt[i] : acc[i]);
    return out;
}

template <typename T>
Tensor<T> gather_columns(const Tensor<T>& v, const IndexMap& idx) {
    Tensor<T> out({v.dim(0), v.dim(1), idx.length});
    for (std::size_t n = 0; n < v.dim(0); ++n)
        for (std::size_t l = 0; l < idx.length; ++l)
            for (std::size_t d = 0; d < v.dim(1); ++d)
                out.at(n, d, l) = v.at(n, d, static_cast<std::size_t>(idx(n, l)));
    return out;
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
    const std::size_t N = x.dim(0), C = x.dim(1) / (r * r), H = x.dim(2), W = x.dim(3);
    Tensor<T> out({N, C, H * r, W * r});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t oy = 0; oy < H * r; ++oy)
                for (std::size_t ox = 0; ox < W * r; ++ox)
                    out.at(n, c, oy, ox) = x.at(n, c * r * r + (oy % r) * r + (ox % r), oy / r, ox / r);
    return out;
}

/// r[n,i,j] by a per-pair normalized dot product over explicit patches.
template <typename T>
Tensor<T> relevance(const Tensor<T>& q, const Tensor<T>& k, std::size_t patch, std::size_t stride, std::size_t pad) {
    const Tensor<T> qc = unfold(q, patch, stride, pad), kc = unfold(k, patch, stride, pad);
    const std::size_t N = qc.dim(0), D = qc.dim(1), Lq = qc.dim(2), Lk = kc.dim(2);
    Tensor<T> r({N, Lq, Lk});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < Lq; ++i)
            for (std::size_t j = 0; j < Lk; ++j) {
                double dot = 0, nq = 0, nk = 0;
                for (std::size_t d = 0; d < D; ++d) {
                    const double a = qc.at(n, d, i), b = kc.at(n, d, j);
                    dot += a * b;
                    nq += a * a;
                    nk += b * b;
                }
                nq = std::sqrt(nq);
                nk = std::sqrt(nk);
                r.at(n, i, j) = static_cast<T>(nq < 1e-12 || nk < 1e-12 ? 0.0 : dot / (nq * nk));
            }
    return r;
}

template <typename T>
void row_argmax(const Tensor<T>& r, std::vector<T>& value, std::vector<std::int64_t>& index) {
    const std::size_t N = r.dim(0), Lq = r.dim(1), Lk = r.dim(2);
    value.assign(N * Lq, T(0));
    index.assign(N * Lq, 0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < Lq; ++i) {
            std::size_t best = 0;
            for (std::size_t j = 0; j < Lk; ++j)
                if (r.at(n, i, j) > r.at(n, i, best)) best = j;
            value[n * Lq + i] = r.at(n, i, best);
            index[n * Lq + i] = static_cast<std::int64_t>(best);
        }
}

/// Per-position copy-then-average transfer: every query position i pastes the
/// source patch at key position h_i (window k, stride s, pad p), and each
/// output pixel averages the pasted values that cover it.
template <typename T>
Tensor<T> transfer(const Tensor<T>& src, const IndexMap& h, std::size_t grid_h, std::size_t grid_w, std::size_t key_w,
                   std::size_t k, std::size_t s, std::size_t p) {
    const std::size_t N = src.dim(0), C = src.dim(1), H = grid_h * s, W = grid_w * s;
    std::vector<double> acc(N * C * H * W, 0.0), cnt(N * C * H * W, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < grid_h * grid_w; ++i) {
            const std::size_t qy = i / grid_w, qx = i % grid_w;
            const auto j = static_cast<std::size_t>(h(n, i));
            const std::size_t ky = j / key_w, kx = j % key_w;
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t a = 0; a < k; ++a)
                    for (std::size_t b = 0; b < k; ++b) {
                        const long oy = static_cast<long>(qy * s + a) - static_cast<long>(p);
                        const long ox = static_cast<long>(qx * s + b) - static_cast<long>(p);
                        if (oy < 0 || ox < 0 || oy >= static_cast<long>(H) || ox >= static_cast<long>(W)) continue;
                        const double v = padded(src, n, c, static_cast<long>(ky * s + a) - static_cast<long>(p),
                                                static_cast<long>(kx * s + b) - static_cast<long>(p));
                        const std::size_t o = ((n * C + c) * H + static_cast<std::size_t>(oy)) * W +
                                              static_cast<std::size_t>(ox);
                        acc[o] += v;
                        cnt[o] += 1.0;
                    }
        }
    Tensor<T> out({N, C, H, W});
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(cnt[i] > 0 ? acc[i] / cnt[i] : 0.0);
    return out;
}

/// Plain-loop 11x11 Gaussian SSIM and PSNR on luma planes.
inline double psnr(const std::vector<double>& a, const std::vector<double>& b) {
    double se = 0;
    for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
    if (se == 0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(255.0 * 255.0 * static_cast<double>(a.size()) / se));
}

inline double ssim(const std::vector<double>& a, const std::vector<double>& b, std::size_t H, std::size_t W) {
    double g[11][11], gs = 0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) gs += g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
    const double c1 = 6.5025, c2 = 58.5225;
    double total = 0;
    std::size_t count = 0;
    for (std::size_t y = 0; y + 11 <= H; ++y)
        for (std::size_t x = 0; x + 11 <= W; ++x, ++count) {
            double ma = 0, mb = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    ma += g[i][j] / gs * a[(y + i) * W + x + j];
                    mb += g[i][j] / gs * b[(y + i) * W + x + j];
                }
            double va = 0, vb = 0, cov = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    const double da = a[(y + i) * W + x + j] - ma, db = b[(y + i) * W + x + j] - mb;
                    va += g[i][j] / gs * da * da;
                    vb += g[i][j] / gs * db * db;
                    cov += g[i][j] / gs * da * db;
                }
            total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    return total / static_cast<double>(count);
}

}  // namespace ttsr::oracle
