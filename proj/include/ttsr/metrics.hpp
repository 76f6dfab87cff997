#pragma once

// PSNR / SSIM on the BT.601 full-range luma channel, no border crop.

#include <cmath>
#include <vector>

#include "ttsr/image.hpp"

namespace ttsr {

/// [3, H, W] planes Y, Cb, Cr on the [0, 255] scale.
inline Tensor<double> rgb_to_ycbcr(const ImageU8& img) {
    if (img.rgb.size() != img.width * img.height * 3) throw ShapeError("rgb_to_ycbcr: expected 3-channel image");
    Tensor<double> out({3, img.height, img.width});
    const std::size_t P = img.width * img.height;
    for (std::size_t p = 0; p < P; ++p) {
        const double r = img.rgb[p * 3], g = img.rgb[p * 3 + 1], b = img.rgb[p * 3 + 2];
        out[p] = 0.299 * r + 0.587 * g + 0.114 * b;
        out[P + p] = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
        out[2 * P + p] = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    }
    return out;
}

/// Luma plane as [H, W].
inline Tensor<double> luma(const ImageU8& img) {
    const Tensor<double> ycc = rgb_to_ycbcr(img);
    const std::size_t P = img.width * img.height;
    return Tensor<double>({img.height, img.width}, std::vector<double>(ycc.data(), ycc.data() + P));
}

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(255^2 / MSE) on two planes, reported at most kPsnrCap.
inline double psnr(const Tensor<double>& a, const Tensor<double>& b) {
    require_same_shape(a, b, "psnr");
    double se = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
    const double mse = se / static_cast<double>(a.numel());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

inline std::vector<double> gaussian_window(std::size_t size = 11, double sigma = 1.5) {
    std::vector<double> w(size * size);
    const double c = (static_cast<double>(size) - 1.0) / 2.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < size; ++i)
        for (std::size_t j = 0; j < size; ++j) {
            const double dy = static_cast<double>(i) - c, dx = static_cast<double>(j) - c;
            w[i * size + j] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            sum += w[i * size + j];
        }
    for (auto& v : w) v /= sum;
    return w;
}

/// Mean SSIM over all valid 11x11 Gaussian-window positions.
inline double ssim(const Tensor<double>& a, const Tensor<double>& b) {
    require_same_shape(a, b, "ssim");
    require_rank(a, 2, "ssim");
    constexpr std::size_t kWin = 11;
    const std::size_t H = a.dim(0), W = a.dim(1);
    if (H < kWin || W < kWin) throw GeometryError("ssim: image smaller than the 11x11 window");
    const double c1 = (0.01 * 255.0) * (0.01 * 255.0), c2 = (0.03 * 255.0) * (0.03 * 255.0);
    const auto w = gaussian_window(kWin, 1.5);
    double total = 0.0;
    for (std::size_t y = 0; y + kWin <= H; ++y)
        for (std::size_t x = 0; x + kWin <= W; ++x) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (std::size_t i = 0; i < kWin; ++i)
                for (std::size_t j = 0; j < kWin; ++j) {
                    const double wk = w[i * kWin + j];
                    const double va = a[(y + i) * W + x + j], vb = b[(y + i) * W + x + j];
                    ma += wk * va;
                    mb += wk * vb;
                    saa += wk * va * va;
                    sbb += wk * vb * vb;
                    sab += wk * va * vb;
                }
            const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    return total / static_cast<double>((H - kWin + 1) * (W - kWin + 1));
}

inline void require_same_extent(const ImageU8& a, const ImageU8& b, const char* what) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeError(std::string(what) + ": image extents differ (" + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                         std::to_string(b.height) + ")");
}

inline double psnr_y(const ImageU8& a, const ImageU8& b) {
    require_same_extent(a, b, "psnr");
    return psnr(luma(a), luma(b));
}

inline double ssim_y(const ImageU8& a, const ImageU8& b) {
    require_same_extent(a, b, "ssim");
    return ssim(luma(a), luma(b));
}

}  // namespace ttsr
