#pragma once

// Texture transformer: learnable texture extraction, relevance embedding
// between LR and reference patches, hard-attention transfer of reference
// texture, and soft-attention gated fusion into backbone features.

#include <array>
#include <optional>
#include <string>

#include "ttsr/nn.hpp"

namespace ttsr {

/// Feature pyramid taps after LTE layers 0, 3 and 6.
template <typename T>
struct TextureFeatures {
    Var<T> level1;  // [N,  64, H,   W  ]
    Var<T> level2;  // [N, 128, H/2, W/2]
    Var<T> level3;  // [N, 256, H/4, W/4]

    const Var<T>& level(int l) const {
        switch (l) {
            case 1: return level1;
            case 2: return level2;
            case 3: return level3;
        }
        throw std::invalid_argument("texture level must be 1, 2 or 3");
    }
};

inline constexpr std::array<std::size_t, 3> kTextureChannels{64, 128, 256};

/// Learnable texture extractor: conv(3,64) conv(64,64) pool conv(64,128)
/// conv(128,128) pool conv(128,256), each conv followed by ReLU.
template <typename T>
class TextureExtractor {
  public:
    TextureExtractor() = default;
    TextureExtractor(ParameterList<T>& ps, const std::string& prefix, Rng& rng, PoolKind pool = PoolKind::Average)
        : conv0_(ps, prefix + ".conv0", 3, 64, 3, 1, rng),
          conv1_(ps, prefix + ".conv1", 64, 64, 3, 1, rng),
          conv3_(ps, prefix + ".conv3", 64, 128, 3, 1, rng),
          conv4_(ps, prefix + ".conv4", 128, 128, 3, 1, rng),
          conv6_(ps, prefix + ".conv6", 128, 256, 3, 1, rng),
          pool_(pool) {}

    TextureFeatures<T> operator()(const Var<T>& img) const {
        const auto& s = img.shape();
        if (s.size() != 4 || s[1] != 3) throw ShapeError("lte: expected [N,3,H,W], got " + shape_str(s));
        if (s[2] % 4 != 0 || s[3] % 4 != 0)
            throw GeometryError("lte: extents " + shape_str(s) + " not divisible by 4");
        TextureFeatures<T> f;
        f.level1 = relu(conv0_(img));
        Var<T> x = relu(conv1_(f.level1));
        x = pool2x2(x, pool_);
        f.level2 = relu(conv3_(x));
        x = relu(conv4_(f.level2));
        x = pool2x2(x, pool_);
        f.level3 = relu(conv6_(x));
        return f;
    }

    /// Level 3 only; skips nothing but documents intent at call sites.
    Var<T> level3(const Var<T>& img) const { return (*this)(img).level3; }

  private:
    Conv2d<T> conv0_, conv1_, conv3_, conv4_, conv6_;
    PoolKind pool_ = PoolKind::Average;
};

/// r[n, i, j] between query patch i and key patch j, with the geometry needed
/// to map indices back onto feature grids.
template <typename T>
struct RelevanceMatrix {
    Var<T> r;  // [N, Lq, Lk]
    Window window;
    std::size_t query_h = 0, query_w = 0;  // query patch grid
    std::size_t key_h = 0, key_w = 0;      // key patch grid
};

/// Normalized inner products of all query/key patch pairs as one batched
/// product of column-normalized patch matrices.
template <typename T>
RelevanceMatrix<T> relevance_embedding(const Var<T>& q, const Var<T>& k, const Window& win) {
    if (q.shape().size() != 4 || k.shape().size() != 4)
        throw ShapeError("relevance_embedding: expected 4-d Q and K");
    if (q.dim(1) != k.dim(1))
        throw ShapeError("relevance_embedding: Q has " + std::to_string(q.dim(1)) + " channels, K has " +
                         std::to_string(k.dim(1)));
    if (q.dim(0) != k.dim(0)) throw ShapeError("relevance_embedding: batch mismatch");
    RelevanceMatrix<T> out;
    out.window = win;
    out.query_h = win.positions(q.dim(2), "relevance_embedding");
    out.query_w = win.positions(q.dim(3), "relevance_embedding");
    out.key_h = win.positions(k.dim(2), "relevance_embedding");
    out.key_w = win.positions(k.dim(3), "relevance_embedding");
    const Var<T> qn = normalize_columns(unfold(q, win));
    const Var<T> kn = normalize_columns(unfold(k, win));
    out.r = bmm_tn(qn, kn);
    return out;
}

/// Hard index map and soft confidence map derived from a relevance matrix.
template <typename T>
struct AttentionMaps {
    IndexMap hard;      // [N, Lq], indices into key patches
    Var<T> soft;        // [N, 1, query_h, query_w]
    std::size_t grid_h = 0, grid_w = 0;
    std::size_t key_h = 0, key_w = 0;
};

template <typename T>
AttentionMaps<T> attention_maps(const RelevanceMatrix<T>& rel) {
    auto [value, index] = row_max(rel.r);
    AttentionMaps<T> m;
    m.hard = std::move(index);
    m.soft = reshape(value, {rel.r.dim(0), 1, rel.query_h, rel.query_w});
    m.grid_h = rel.query_h;
    m.grid_w = rel.query_w;
    m.key_h = rel.key_h;
    m.key_w = rel.key_w;
    return m;
}

/// Patch geometry at a texture level. Level 3 matches with 3x3 patches at
/// stride 1; finer levels scale patch, stride and padding by 2 and 4 so the
/// level-3 patch indices address the same image regions.
inline Window level_window(int level) {
    switch (level) {
        case 3: return Window{3, 1, 1};
        case 2: return Window{6, 2, 2};
        case 1: return Window{12, 4, 4};
    }
    throw std::invalid_argument("texture level must be 1, 2 or 3");
}

inline std::size_t level_factor(int level) { return std::size_t{1} << (3 - level); }

/// Index-select patches of `source` (on the key grid scaled by the level
/// factor) and fold them, overlap-averaged, onto the query grid.
template <typename T>
Var<T> transfer_level(const Var<T>& source, const IndexMap& hard, std::size_t grid_h, std::size_t grid_w,
                      std::size_t key_h, std::size_t key_w, int level) {
    const Window win = level_window(level);
    const std::size_t f = level_factor(level);
    const std::size_t ph = win.positions(source.dim(2), "transfer"), pw = win.positions(source.dim(3), "transfer");
    if (ph != key_h || pw != key_w)
        throw GeometryError("transfer: level-" + std::to_string(level) + " source " + shape_str(source.shape()) +
                            " yields a " + std::to_string(ph) + "x" + std::to_string(pw) +
                            " patch grid, key grid is " + std::to_string(key_h) + "x" + std::to_string(key_w));
    if (hard.length != grid_h * grid_w) throw GeometryError("transfer: hard map length does not match query grid");
    const Var<T> cols = gather_columns(unfold(source, win), hard);
    return fold(cols, grid_h * f, grid_w * f, win, true);
}

template <typename T>
struct TransferredTexture {
    Var<T> level1, level2, level3;

    const Var<T>& level(int l) const {
        switch (l) {
            case 1: return level1;
            case 2: return level2;
            case 3: return level3;
        }
        throw std::invalid_argument("texture level must be 1, 2 or 3");
    }
};

template <typename T>
TransferredTexture<T> transfer(const TextureFeatures<T>& v, const AttentionMaps<T>& maps) {
    TransferredTexture<T> t;
    t.level3 = transfer_level(v.level3, maps.hard, maps.grid_h, maps.grid_w, maps.key_h, maps.key_w, 3);
    t.level2 = transfer_level(v.level2, maps.hard, maps.grid_h, maps.grid_w, maps.key_h, maps.key_w, 2);
    t.level1 = transfer_level(v.level1, maps.hard, maps.grid_h, maps.grid_w, maps.key_h, maps.key_w, 1);
    return t;
}

/// F + Conv(Concat(F, T)) * S, with S nearest-upsampled onto F's grid.
template <typename T>
Var<T> soft_fuse(const Var<T>& f, const Var<T>& t, const Var<T>& s, const Conv2d<T>& fuse) {
    const auto &fs = f.shape(), &ts = t.shape(), &ss = s.shape();
    if (fs.size() != 4 || ts.size() != 4 || ss.size() != 4 || fs[0] != ts[0] || fs[2] != ts[2] || fs[3] != ts[3])
        throw ShapeError("soft_fuse: F " + shape_str(fs) + " and T " + shape_str(ts) + " differ spatially");
    if (ss[1] != 1 || ss[0] != fs[0] || ss[2] == 0 || fs[2] % ss[2] != 0 || fs[3] % ss[3] != 0 ||
        fs[2] / ss[2] != fs[3] / ss[3])
        throw ShapeError("soft_fuse: soft map " + shape_str(ss) + " not broadcastable to " + shape_str(fs));
    if (fuse.in_channels() != fs[1] + ts[1] || fuse.out_channels() != fs[1])
        throw ShapeError("soft_fuse: fuse conv expects " + std::to_string(fuse.in_channels()) + " -> " +
                         std::to_string(fuse.out_channels()) + " channels");
    const Var<T> gate = upsample_nearest(s, fs[2] / ss[2]);
    return add(f, mul_channel_broadcast(fuse(concat_channels<T>({f, t})), gate));
}

/// The three images a transformer consumes, all in network range.
template <typename T>
struct TransformerInputs {
    Var<T> lr_up;        // LR bicubic x4
    Var<T> ref_down_up;  // Ref bicubic /4 then x4
    Var<T> ref;
};

/// Relevance, attention and transferred textures computed once on the
/// smallest scale and shared by the transformers at every level.
template <typename T>
struct TransformerState {
    std::optional<TextureFeatures<T>> value;
    std::optional<RelevanceMatrix<T>> relevance;
    std::optional<AttentionMaps<T>> maps;
    std::optional<TransferredTexture<T>> texture;

    bool ready() const { return texture.has_value(); }

    void compute(const TextureExtractor<T>& lte, const TransformerInputs<T>& in) {
        const Var<T> q = lte.level3(in.lr_up);
        const Var<T> k = lte.level3(in.ref_down_up);
        value = lte(in.ref);
        relevance = relevance_embedding(q, k, level_window(3));
        maps = attention_maps(*relevance);
        texture = transfer(*value, *maps);
    }
};

/// One texture transformer at `level` (3 = LR scale, 2 = x2, 1 = x4). Level 3
/// computes and caches the shared state; levels 1 and 2 require it.
template <typename T>
Var<T> texture_transformer_forward(const TextureExtractor<T>& lte, const TransformerInputs<T>* inputs,
                                   const Var<T>& f, int level, TransformerState<T>& state, const Conv2d<T>& fuse) {
    if (!state.ready()) {
        if (level != 3 || inputs == nullptr)
            throw std::logic_error("texture transformer at level " + std::to_string(level) +
                                   " invoked before the level-3 relevance was computed");
        state.compute(lte, *inputs);
    }
    return soft_fuse(f, state.texture->level(level), state.maps->soft, fuse);
}

}  // namespace ttsr
