#pragma once

// Procedural texture pairs for toy-scale training and diagnostics.

#include <cmath>
#include <numbers>
#include <vector>

#include "ttsr/dataset.hpp"
#include "ttsr/rng.hpp"

namespace ttsr {

/// Sum of oriented sinusoids with per-channel amplitudes, sampled on the
/// integer grid after an offset.
struct TextureField {
    struct Wave {
        double fx, fy, phase;
        double amp[3];
    };
    std::vector<Wave> waves;
    double base[3] = {128, 128, 128};

    static TextureField random(std::uint64_t seed, double min_freq = 0.04, double max_freq = 0.18,
                               std::size_t count = 3) {
        Rng rng(seed, static_cast<std::uint64_t>(Stream::Data));
        TextureField f;
        for (double& b : f.base) b = rng.uniform(90, 166);
        for (std::size_t i = 0; i < count; ++i) {
            const double theta = rng.uniform(0, std::numbers::pi);
            const double freq = rng.uniform(min_freq, max_freq);
            Wave w{freq * std::cos(theta), freq * std::sin(theta), rng.uniform(0, 2 * std::numbers::pi), {}};
            for (double& a : w.amp) a = rng.uniform(10, 30);
            f.waves.push_back(w);
        }
        return f;
    }

    ImageU8 render(std::size_t width, std::size_t height, long dx = 0, long dy = 0) const {
        ImageU8 img(width, height);
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                const double px = static_cast<double>(static_cast<long>(x) + dx);
                const double py = static_cast<double>(static_cast<long>(y) + dy);
                for (std::size_t c = 0; c < 3; ++c) {
                    double v = base[c];
                    for (const auto& w : waves)
                        v += w.amp[c] * std::sin(2 * std::numbers::pi * (w.fx * px + w.fy * py) + w.phase);
                    img.at(y, x, c) = quantize_u8(v);
                }
            }
        return img;
    }
};

struct ToyDatasetOptions {
    std::size_t pairs = 8;
    std::size_t extent = 64;
    /// Reference offset, in multiples of 4 pixels, drawn from [-max, max].
    long max_shift_cells = 1;
    double min_freq = 0.04, max_freq = 0.18;
    std::uint64_t seed = 1;
};

/// HR images and references showing the same texture at a shifted origin.
inline PairedDataset make_toy_dataset(const ToyDatasetOptions& opt) {
    PairedDataset ds;
    Rng rng(opt.seed, static_cast<std::uint64_t>(Stream::Data));
    for (std::size_t i = 0; i < opt.pairs; ++i) {
        const TextureField field = TextureField::random(opt.seed * 1000 + i, opt.min_freq, opt.max_freq);
        const auto span = static_cast<std::uint64_t>(2 * opt.max_shift_cells + 1);
        long dx = 4 * (static_cast<long>(rng.below(span)) - opt.max_shift_cells);
        long dy = 4 * (static_cast<long>(rng.below(span)) - opt.max_shift_cells);
        ds.add(pair_id(i), field.render(opt.extent, opt.extent), field.render(opt.extent, opt.extent, dx, dy));
    }
    return ds;
}

/// A texture drawn independently of every pair in `make_toy_dataset`.
inline ImageU8 make_unrelated_texture(std::size_t extent, std::uint64_t seed) {
    return TextureField::random(0x9e3779b9ULL + seed * 7919).render(extent, extent);
}

}  // namespace ttsr
