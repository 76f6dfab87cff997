#pragma once

// Generator with stacked cross-scale texture transformers, and the WGAN critic.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "ttsr/texture_transformer.hpp"

namespace ttsr {

struct GeneratorConfig {
    std::size_t base_channels = 64;
    std::array<std::size_t, 4> residual_blocks{16, 16, 8, 4};
    bool transformer_1x = true;
    bool transformer_2x = true;
    bool transformer_4x = true;
    bool csfi = true;
    PoolKind lte_pool = PoolKind::Average;

    static constexpr std::size_t kUpscale = 4;

    bool any_transformer() const { return transformer_1x || transformer_2x || transformer_4x; }

    void validate() const {
        if (base_channels == 0) throw std::invalid_argument("generator: base_channels must be positive");
    }
};

/// Images consumed by the generator, in network range [-1, 1].
template <typename T>
struct SrInputs {
    Tensor<T> lr;           // [N,3,h,w]
    Tensor<T> lr_up;        // [N,3,4h,4w]
    Tensor<T> ref;          // [N,3,H,W]
    Tensor<T> ref_down_up;  // [N,3,H,W]
};

/// Builds LR^ and Ref_v^ with the shared bicubic operator (no quantization).
template <typename T>
SrInputs<T> make_sr_inputs(const Tensor<T>& lr, const Tensor<T>& ref) {
    require_rank(lr, 4, "sr inputs");
    require_rank(ref, 4, "sr inputs");
    if (ref.dim(2) % 4 != 0 || ref.dim(3) % 4 != 0)
        throw GeometryError("reference extents " + shape_str(ref.shape()) + " not divisible by 4");
    SrInputs<T> in;
    in.lr = lr;
    in.ref = ref;
    in.lr_up = kernels::bicubic_resize(lr, 4, 1);
    in.ref_down_up = kernels::bicubic_resize(kernels::bicubic_resize(ref, 1, 4), 4, 1);
    return in;
}

template <typename T>
struct GeneratorOutput {
    Var<T> sr;
    std::optional<Var<T>> texture3;  // level-3 transferred texture, if transformers ran
    std::optional<AttentionMaps<T>> maps;
};

/// Bicubic up-sampling followed by a 1x1 convolution.
template <typename T>
struct UpProject {
    std::size_t factor = 2;
    Conv2d<T> conv;
    UpProject() = default;
    UpProject(ParameterList<T>& ps, const std::string& name, std::size_t c, std::size_t f, Rng& rng)
        : factor(f), conv(ps, name, c, c, 1, 1, rng) {}
    Var<T> operator()(const Var<T>& x) const { return conv(resize_bicubic(x, x.dim(2) * factor, x.dim(3) * factor)); }
};

/// Chain of stride-2 3x3 convolutions (one per halving).
template <typename T>
struct DownProject {
    std::vector<Conv2d<T>> convs;
    DownProject() = default;
    DownProject(ParameterList<T>& ps, const std::string& name, std::size_t c, std::size_t f, Rng& rng) {
        for (std::size_t i = 0; (std::size_t{2} << i) <= f; ++i)
            convs.emplace_back(ps, name + "." + std::to_string(i), c, c, 3, 2, rng);
    }
    Var<T> operator()(Var<T> x) const {
        for (const auto& c : convs) x = c(x);
        return x;
    }
};

/// Cross-scale feature integration among two (x1, x2) or three (x1, x2, x4)
/// streams: each stream concatenates itself with resampled copies of the
/// others and a conv + ReLU maps back to the base width.
template <typename T>
class CrossScaleExchange {
  public:
    CrossScaleExchange() = default;
    CrossScaleExchange(ParameterList<T>& ps, const std::string& name, std::size_t scales, std::size_t c, Rng& rng)
        : scales_(scales), channels_(c) {
        if (scales != 2 && scales != 3) throw std::invalid_argument("csfi: 2 or 3 scales");
        for (std::size_t dst = 0; dst < scales; ++dst) {
            for (std::size_t src = 0; src < scales; ++src) {
                const std::string tag = name + ".s" + std::to_string(src) + "_to_s" + std::to_string(dst);
                if (src < dst) up_.emplace_back(ps, tag, c, std::size_t{1} << (dst - src), rng);
                if (src > dst) down_.emplace_back(ps, tag, c, std::size_t{1} << (src - dst), rng);
            }
            merge_.emplace_back(ps, name + ".merge" + std::to_string(dst), scales * c, c, 3, 1, rng);
        }
    }

    std::vector<Var<T>> operator()(const std::vector<Var<T>>& feats) const {
        if (feats.size() != scales_) throw std::invalid_argument("csfi: wrong number of scales");
        for (std::size_t s = 0; s < scales_; ++s) {
            const auto& sh = feats[s].shape();
            if (sh[1] != channels_)
                throw ShapeError("csfi: scale " + std::to_string(s) + " has " + std::to_string(sh[1]) +
                                 " channels, expected " + std::to_string(channels_));
            if (sh[2] != feats[0].dim(2) << s || sh[3] != feats[0].dim(3) << s)
                throw GeometryError("csfi: extents " + shape_str(sh) + " break the 1:2:4 ratio against " +
                                    shape_str(feats[0].shape()));
        }
        std::vector<Var<T>> out;
        std::size_t ui = 0, di = 0;
        for (std::size_t dst = 0; dst < scales_; ++dst) {
            std::vector<Var<T>> parts;
            for (std::size_t src = 0; src < scales_; ++src) {
                if (src == dst) parts.push_back(feats[src]);
                if (src < dst) parts.push_back(up_[ui++](feats[src]));
                if (src > dst) parts.push_back(down_[di++](feats[src]));
            }
            out.push_back(relu(merge_[dst](concat_channels(parts))));
        }
        return out;
    }

  private:
    std::size_t scales_ = 2, channels_ = 64;
    std::vector<UpProject<T>> up_;
    std::vector<DownProject<T>> down_;
    std::vector<Conv2d<T>> merge_;
};

/// Residual blocks, a closing conv, and the stage skip: skip + tail(RBs(x)).
template <typename T>
struct StageBody {
    std::vector<ResidualBlock<T>> blocks;
    Conv2d<T> tail;
    StageBody() = default;
    StageBody(ParameterList<T>& ps, const std::string& name, std::size_t n, std::size_t c, Rng& rng)
        : blocks(make_residual_blocks(ps, name + ".rb", n, c, rng)), tail(ps, name + ".tail", c, c, 3, 1, rng) {}
    Var<T> operator()(const Var<T>& skip, const Var<T>& x) const { return add(skip, tail(run_blocks(blocks, x))); }
};

template <typename T>
class Generator {
  public:
    explicit Generator(GeneratorConfig cfg, std::uint64_t seed = 0) : cfg_(cfg) {
        cfg_.validate();
        Rng rng = make_stream(seed, Stream::Init);
        const std::size_t C = cfg_.base_channels;
        const auto& nb = cfg_.residual_blocks;
        if (cfg_.any_transformer()) lte_ = TextureExtractor<T>(params_, "lte", rng, cfg_.lte_pool);

        head_ = Conv2d<T>(params_, "g.stage0.head", 3, C, 3, 1, rng);
        stage0_ = StageBody<T>(params_, "g.stage0", nb[0], C, rng);
        if (cfg_.transformer_1x) fuse1_ = Conv2d<T>(params_, "g.tt1.fuse", C + kTextureChannels[2], C, 3, 1, rng);
        stage1_ = StageBody<T>(params_, "g.stage1", nb[1], C, rng);

        up2_ = Conv2d<T>(params_, "g.stage2.up", C, 4 * C, 3, 1, rng);
        if (cfg_.transformer_2x) fuse2_ = Conv2d<T>(params_, "g.tt2.fuse", C + kTextureChannels[1], C, 3, 1, rng);
        if (cfg_.csfi) {
            csfi2_ = CrossScaleExchange<T>(params_, "g.csfi2", 2, C, rng);
            stage2_1x_ = StageBody<T>(params_, "g.stage2.s0", nb[2], C, rng);
        }
        stage2_2x_ = StageBody<T>(params_, "g.stage2.s1", nb[2], C, rng);

        up4_ = Conv2d<T>(params_, "g.stage3.up", C, 4 * C, 3, 1, rng);
        if (cfg_.transformer_4x) fuse4_ = Conv2d<T>(params_, "g.tt4.fuse", C + kTextureChannels[0], C, 3, 1, rng);
        if (cfg_.csfi) {
            csfi3_ = CrossScaleExchange<T>(params_, "g.csfi3", 3, C, rng);
            stage3_1x_ = StageBody<T>(params_, "g.stage3.s0", nb[3], C, rng);
            stage3_2x_ = StageBody<T>(params_, "g.stage3.s1", nb[3], C, rng);
            merge_up1_ = UpProject<T>(params_, "g.stage4.s0_up", C, 4, rng);
            merge_up2_ = UpProject<T>(params_, "g.stage4.s1_up", C, 2, rng);
            merge_ = Conv2d<T>(params_, "g.stage4.merge", 3 * C, C, 3, 1, rng);
        }
        stage3_4x_ = StageBody<T>(params_, "g.stage3.s2", nb[3], C, rng);
        out1_ = Conv2d<T>(params_, "g.stage4.conv1", C, 32, 3, 1, rng);
        out2_ = Conv2d<T>(params_, "g.stage4.conv2", 32, 3, 1, 1, rng);
    }

    Generator(const Generator&) = delete;
    Generator& operator=(const Generator&) = delete;
    Generator(Generator&&) noexcept = default;

    const GeneratorConfig& config() const { return cfg_; }
    ParameterList<T>& parameters() { return params_; }
    const ParameterList<T>& parameters() const { return params_; }
    const TextureExtractor<T>& lte() const {
        if (!lte_) throw std::logic_error("generator: no texture extractor (transformers disabled)");
        return *lte_;
    }
    bool has_lte() const { return lte_.has_value(); }

    GeneratorOutput<T> forward(Tape<T>& tape, const SrInputs<T>& in) const {
        const auto& ls = in.lr.shape();
        require_rank(in.lr, 4, "generator lr");
        if (ls[1] != 3) throw ShapeError("generator: LR must have 3 channels");
        if (in.lr_up.shape() != Shape{ls[0], 3, 4 * ls[2], 4 * ls[3]})
            throw GeometryError("generator: LR^ must be 4x the LR extents, got " + shape_str(in.lr_up.shape()));
        if (in.ref.dim(2) % 4 != 0 || in.ref.dim(3) % 4 != 0 || in.ref.shape() != in.ref_down_up.shape())
            throw GeometryError("generator: reference extents " + shape_str(in.ref.shape()) + " invalid");

        GeneratorOutput<T> out;
        TransformerState<T> state;
        TransformerInputs<T> tin;
        if (cfg_.any_transformer()) {
            tin = {tape.constant(in.lr_up), tape.constant(in.ref_down_up), tape.constant(in.ref)};
            state.compute(*lte_, tin);
            out.texture3 = state.texture->level3;
            out.maps = state.maps;
        }
        auto tt = [&](const Var<T>& f, int level, const Conv2d<T>& fuse) {
            return texture_transformer_forward(*lte_, &tin, f, level, state, fuse);
        };

        // Stage 0: shallow backbone.
        const Var<T> lr = tape.constant(in.lr);
        const Var<T> x0 = relu(head_(lr));
        Var<T> x1 = stage0_(x0, x0);

        // Stage 1: LR scale.
        const Var<T> t1 = cfg_.transformer_1x ? tt(x1, 3, fuse1_) : x1;
        x1 = stage1_(t1, t1);

        // Stage 2: x2 scale.
        Var<T> x2 = relu(pixel_shuffle(up2_(x1), 2));
        if (cfg_.transformer_2x) x2 = tt(x2, 2, fuse2_);
        if (cfg_.csfi) {
            const auto ex = csfi2_({x1, x2});
            x1 = stage2_1x_(x1, ex[0]);
            x2 = stage2_2x_(x2, ex[1]);
        } else {
            x2 = stage2_2x_(x2, x2);
        }

        // Stage 3: x4 scale.
        Var<T> x4 = relu(pixel_shuffle(up4_(x2), 2));
        if (cfg_.transformer_4x) x4 = tt(x4, 1, fuse4_);
        Var<T> z;
        if (cfg_.csfi) {
            const auto ex = csfi3_({x1, x2, x4});
            x1 = stage3_1x_(x1, ex[0]);
            x2 = stage3_2x_(x2, ex[1]);
            x4 = stage3_4x_(x4, ex[2]);
            // Stage 4: merge tail.
            z = relu(merge_(concat_channels<T>({merge_up1_(x1), merge_up2_(x2), x4})));
        } else {
            z = stage3_4x_(x4, x4);
        }
        out.sr = out2_(out1_(z));
        return out;
    }

  private:
    GeneratorConfig cfg_;
    ParameterList<T> params_;
    std::optional<TextureExtractor<T>> lte_;
    Conv2d<T> head_, fuse1_, up2_, fuse2_, up4_, fuse4_, merge_, out1_, out2_;
    StageBody<T> stage0_, stage1_, stage2_1x_, stage2_2x_, stage3_1x_, stage3_2x_, stage3_4x_;
    CrossScaleExchange<T> csfi2_, csfi3_;
    UpProject<T> merge_up1_, merge_up2_;
};

/// WGAN critic: ten 3x3 convs alternating stride 1/2 (32 -> 512 channels) with
/// leaky ReLU 0.2, then FC(flatten -> 1024), leaky ReLU, FC(1024 -> 1). The
/// flatten width follows the configured input extent.
template <typename T>
class Discriminator {
  public:
    static constexpr std::array<std::size_t, 10> kChannels{32, 32, 64, 64, 128, 128, 256, 256, 512, 512};

    explicit Discriminator(std::size_t input_extent = 160, std::uint64_t seed = 0) : extent_(input_extent) {
        if (extent_ == 0 || extent_ % 32 != 0)
            throw GeometryError("discriminator: input extent " + std::to_string(extent_) + " not divisible by 32");
        Rng rng = make_stream(seed ^ 0x5eedd15cULL, Stream::Init);
        std::size_t cin = 3;
        for (std::size_t i = 0; i < kChannels.size(); ++i) {
            convs_.emplace_back(params_, "d.conv" + std::to_string(i), cin, kChannels[i], 3, i % 2 == 0 ? 1 : 2, rng);
            cin = kChannels[i];
        }
        fc1_ = Linear<T>(params_, "d.fc1", flatten_dim(), 1024, rng);
        fc2_ = Linear<T>(params_, "d.fc2", 1024, 1, rng);
    }

    Discriminator(const Discriminator&) = delete;
    Discriminator& operator=(const Discriminator&) = delete;
    Discriminator(Discriminator&&) noexcept = default;

    static std::size_t flatten_dim(std::size_t h, std::size_t w) { return kChannels.back() * (h / 32) * (w / 32); }
    std::size_t flatten_dim() const { return flatten_dim(extent_, extent_); }
    std::size_t input_extent() const { return extent_; }
    ParameterList<T>& parameters() { return params_; }
    const ParameterList<T>& parameters() const { return params_; }

    /// Unbounded score per batch item, shape [N].
    Var<T> operator()(const Var<T>& img) const {
        const auto& s = img.shape();
        if (s.size() != 4 || s[1] != 3 || s[2] != extent_ || s[3] != extent_)
            throw GeometryError("discriminator: expected [N,3," + std::to_string(extent_) + "," +
                                std::to_string(extent_) + "], got " + shape_str(s));
        Var<T> x = img;
        for (const auto& c : convs_) x = leaky_relu(c(x), T(0.2));
        x = reshape(x, {s[0], flatten_dim()});
        x = leaky_relu(fc1_(x), T(0.2));
        return reshape(fc2_(x), {s[0]});
    }

  private:
    std::size_t extent_;
    ParameterList<T> params_;
    std::vector<Conv2d<T>> convs_;
    Linear<T> fc1_, fc2_;
};

template <typename T>
std::size_t count_params(const ParameterList<T>& ps) {
    return ps.count();
}

}  // namespace ttsr
